#include "dav/checkpoint.hpp"

#include <bit>
#include <fstream>

#include "dav/error.hpp"

namespace dav {

void append_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void append_f64(std::string& out, double v) {
  const std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

void append_tensor_block(std::string& out, const NamedTensor& t) {
  append_u32(out, static_cast<std::uint32_t>(t.name.size()));
  out += t.name;
  append_u32(out, static_cast<std::uint32_t>(t.value.rank()));
  for (std::size_t i = 0; i < t.value.rank(); ++i) {
    append_u32(out, static_cast<std::uint32_t>(t.value.dim(i)));
  }
  for (std::size_t i = 0; i < t.value.numel(); ++i) append_f64(out, t.value[i]);
}

void BlockReader::fail(const std::string& what) const {
  throw DataError(path_.string() + ": " + what + " at byte " + std::to_string(pos_));
}

std::string BlockReader::line() {
  const std::size_t nl = buf_.find('\n', pos_);
  if (nl == std::string::npos) fail("missing header line");
  std::string s = buf_.substr(pos_, nl - pos_);
  pos_ = nl + 1;
  return s;
}

std::uint32_t BlockReader::u32() {
  if (buf_.size() - pos_ < 4) fail("truncated u32");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
  }
  pos_ += 4;
  return v;
}

double BlockReader::f64() {
  if (buf_.size() - pos_ < 8) fail("truncated f64");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
  }
  pos_ += 8;
  return std::bit_cast<double>(v);
}

NamedTensor BlockReader::tensor_block() {
  const std::uint32_t name_len = u32();
  if (buf_.size() - pos_ < name_len) fail("truncated tensor name");
  NamedTensor t;
  t.name = buf_.substr(pos_, name_len);
  pos_ += name_len;
  const std::uint32_t rank = u32();
  if (rank == 0 || rank > 8) fail("implausible tensor rank " + std::to_string(rank));
  Shape shape(rank);
  for (std::uint32_t i = 0; i < rank; ++i) {
    shape[i] = u32();
    if (shape[i] == 0) fail("zero dimension in tensor '" + t.name + "'");
  }
  const std::size_t n = shape_numel(shape);
  if ((buf_.size() - pos_) / 8 < n) fail("truncated payload for tensor '" + t.name + "'");
  std::vector<double> data(n);
  for (std::size_t i = 0; i < n; ++i) data[i] = f64();
  t.value = Tensor(std::move(shape), std::move(data));
  return t;
}

void BlockReader::expect_done() const {
  if (!done()) fail("trailing bytes");
}

std::string read_binary_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_binary_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out.flush()) throw DataError("write failed on " + path.string());
}

}  // namespace dav
