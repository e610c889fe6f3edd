#include "dav/image_io.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

#include "dav/error.hpp"

namespace dav {

namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return buf;
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed on " + path.string());
}

// Cursor over a loaded file; every error carries the byte offset.
struct Parser {
  const std::string& buf;
  std::size_t pos = 0;
  const std::filesystem::path& path;

  [[noreturn]] void fail(const std::string& what) const {
    throw DataError(path.string() + ": " + what + " at byte " + std::to_string(pos));
  }

  // Netpbm whitespace; '#' starts a comment running to end of line.
  void skip_space() {
    while (pos < buf.size()) {
      const char c = buf[pos];
      if (c == '#') {
        while (pos < buf.size() && buf[pos] != '\n') ++pos;
      } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
        ++pos;
      } else {
        break;
      }
    }
  }

  std::string token() {
    skip_space();
    const std::size_t start = pos;
    while (pos < buf.size() && !std::isspace(static_cast<unsigned char>(buf[pos]))) ++pos;
    if (pos == start) fail("expected a header token");
    return buf.substr(start, pos - start);
  }

  long number() {
    const std::string t = token();
    std::size_t used = 0;
    long v = 0;
    try {
      v = std::stol(t, &used);
    } catch (const std::exception&) {
      fail("'" + t + "' is not a number");
    }
    if (used != t.size()) fail("'" + t + "' is not a number");
    return v;
  }

  // Exactly one whitespace byte separates the header from the payload.
  void raster_separator() {
    if (pos >= buf.size() || !std::isspace(static_cast<unsigned char>(buf[pos]))) {
      fail("expected whitespace before payload");
    }
    ++pos;
  }

  const char* payload(std::size_t n) {
    if (buf.size() - pos < n) {
      throw DataError(path.string() + ": payload truncated, need " + std::to_string(n) +
                      " bytes from byte " + std::to_string(pos) + ", file has " +
                      std::to_string(buf.size() - pos));
    }
    const char* p = buf.data() + pos;
    pos += n;
    return p;
  }
};

void check_dims(const Parser& p, long w, long h) {
  if (w <= 0 || h <= 0) {
    throw DataError(p.path.string() + ": bad dimensions " + std::to_string(w) + "x" +
                    std::to_string(h));
  }
}

unsigned char to_byte(double v, const std::filesystem::path& path) {
  if (v < 0 || v > 255 || v != std::floor(v)) {
    throw DataError(path.string() + ": value " + std::to_string(v) +
                    " is not an integer in [0,255]; quantize before writing");
  }
  return static_cast<unsigned char>(v);
}

}  // namespace

void write_ppm(const std::filesystem::path& path, const Tensor& rgb) {
  if (rgb.rank() != 3 || rgb.dim(0) != 3) {
    throw DataError("write_ppm expects {3,h,w}, got " + shape_str(rgb.shape()));
  }
  const std::size_t h = rgb.dim(1), w = rgb.dim(2);
  std::string out = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  out.reserve(out.size() + 3 * h * w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        out.push_back(static_cast<char>(to_byte(rgb.at(c, y, x), path)));
      }
    }
  }
  write_file(path, out);
}

Tensor read_ppm(const std::filesystem::path& path) {
  const std::string buf = read_file(path);
  Parser p{buf, 0, path};
  if (p.token() != "P6") p.fail("not a P6 file");
  const long w = p.number(), h = p.number();
  check_dims(p, w, h);
  const long maxval = p.number();
  if (maxval != 255) p.fail("unsupported maxval " + std::to_string(maxval));
  p.raster_separator();
  const std::size_t hw = static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
  const char* raw = p.payload(3 * hw);
  Tensor rgb({3, static_cast<std::size_t>(h), static_cast<std::size_t>(w)});
  for (std::size_t i = 0; i < hw; ++i) {
    for (std::size_t c = 0; c < 3; ++c) {
      rgb[c * hw + i] = static_cast<double>(static_cast<unsigned char>(raw[3 * i + c]));
    }
  }
  return rgb;
}

void write_pgm(const std::filesystem::path& path, const Tensor& gray) {
  if (gray.rank() != 2) {
    throw DataError("write_pgm expects {h,w}, got " + shape_str(gray.shape()));
  }
  const std::size_t h = gray.dim(0), w = gray.dim(1);
  std::string out = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  out.reserve(out.size() + h * w);
  for (std::size_t i = 0; i < h * w; ++i) {
    out.push_back(static_cast<char>(to_byte(gray[i], path)));
  }
  write_file(path, out);
}

Tensor read_pgm(const std::filesystem::path& path) {
  const std::string buf = read_file(path);
  Parser p{buf, 0, path};
  if (p.token() != "P5") p.fail("not a P5 file");
  const long w = p.number(), h = p.number();
  check_dims(p, w, h);
  const long maxval = p.number();
  if (maxval != 255) p.fail("unsupported maxval " + std::to_string(maxval));
  p.raster_separator();
  const std::size_t hw = static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
  const char* raw = p.payload(hw);
  Tensor gray({static_cast<std::size_t>(h), static_cast<std::size_t>(w)});
  for (std::size_t i = 0; i < hw; ++i) {
    gray[i] = static_cast<double>(static_cast<unsigned char>(raw[i]));
  }
  return gray;
}

void write_pfm(const std::filesystem::path& path, const Tensor& map) {
  if (map.rank() != 2) {
    throw DataError("write_pfm expects {h,w}, got " + shape_str(map.shape()));
  }
  const std::size_t h = map.dim(0), w = map.dim(1);
  std::string out = "Pf\n" + std::to_string(w) + " " + std::to_string(h) + "\n-1.0\n";
  out.reserve(out.size() + 4 * h * w);
  // PFM stores rows bottom to top; negative scale means little-endian.
  for (std::size_t yr = h; yr-- > 0;) {
    for (std::size_t x = 0; x < w; ++x) {
      const float f = static_cast<float>(map.at(yr, x));
      const std::uint32_t bits = std::bit_cast<std::uint32_t>(f);
      out.push_back(static_cast<char>(bits & 0xff));
      out.push_back(static_cast<char>((bits >> 8) & 0xff));
      out.push_back(static_cast<char>((bits >> 16) & 0xff));
      out.push_back(static_cast<char>((bits >> 24) & 0xff));
    }
  }
  write_file(path, out);
}

Tensor read_pfm(const std::filesystem::path& path) {
  const std::string buf = read_file(path);
  Parser p{buf, 0, path};
  if (p.token() != "Pf") p.fail("not a grayscale PFM file");
  const long w = p.number(), h = p.number();
  check_dims(p, w, h);
  const std::string scale = p.token();
  double sc = 0.0;
  try {
    sc = std::stod(scale);
  } catch (const std::exception&) {
    p.fail("bad scale '" + scale + "'");
  }
  if (sc >= 0) p.fail("big-endian PFM not supported (scale " + scale + ")");
  p.raster_separator();
  const std::size_t hw = static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
  const char* raw = p.payload(4 * hw);
  Tensor map({static_cast<std::size_t>(h), static_cast<std::size_t>(w)});
  std::size_t i = 0;
  for (std::size_t yr = static_cast<std::size_t>(h); yr-- > 0;) {
    for (std::size_t x = 0; x < static_cast<std::size_t>(w); ++x, ++i) {
      const unsigned char* b = reinterpret_cast<const unsigned char*>(raw + 4 * i);
      const std::uint32_t bits = static_cast<std::uint32_t>(b[0]) |
                                 (static_cast<std::uint32_t>(b[1]) << 8) |
                                 (static_cast<std::uint32_t>(b[2]) << 16) |
                                 (static_cast<std::uint32_t>(b[3]) << 24);
      map.at(yr, x) = static_cast<double>(std::bit_cast<float>(bits));
    }
  }
  return map;
}

Tensor quantized(const Tensor& t) {
  Tensor q(t.shape());
  for (std::size_t i = 0; i < t.numel(); ++i) {
    const double r = std::floor(t[i] + 0.5);
    q[i] = r < 0 ? 0.0 : (r > 255 ? 255.0 : r);
  }
  return q;
}

}  // namespace dav
