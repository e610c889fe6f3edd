#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dav/tensor.hpp"

namespace dav {

struct NamedTensor {
  std::string name;
  Tensor value;
};

// Binary tensor-block encoding shared by model and perturbation checkpoints.
// Everything multi-byte is little-endian regardless of platform:
//   u32 name length, name bytes, u32 rank, u32 per dim, f64 payload.
void append_u32(std::string& out, std::uint32_t v);
void append_f64(std::string& out, double v);
void append_tensor_block(std::string& out, const NamedTensor& t);

class BlockReader {
 public:
  BlockReader(const std::string& buf, const std::filesystem::path& path)
      : buf_(buf), path_(path) {}

  // Header line up to and including '\n'.
  std::string line();
  std::uint32_t u32();
  double f64();
  NamedTensor tensor_block();
  bool done() const { return pos_ == buf_.size(); }
  void expect_done() const;

 private:
  [[noreturn]] void fail(const std::string& what) const;
  const std::string& buf_;
  std::size_t pos_ = 0;
  const std::filesystem::path path_;
};

std::string read_binary_file(const std::filesystem::path& path);
void write_binary_file(const std::filesystem::path& path, const std::string& bytes);

}  // namespace dav
