#pragma once

#include <filesystem>

#include "dav/tensor.hpp"

namespace dav {

// Binary Netpbm and PFM readers/writers. Headers are written in one fixed
// form (`P6\n<w> <h>\n255\n`, `Pf\n<w> <h>\n-1.0\n`) so identical tensors
// produce identical files. Readers also accept whitespace/comment variants.
// Malformed or truncated files are rejected with the byte offset.

// P6, {3,h,w}, values must already be integers in [0,255].
void write_ppm(const std::filesystem::path& path, const Tensor& rgb);
Tensor read_ppm(const std::filesystem::path& path);

// P5, {h,w}, values must already be integers in [0,255].
void write_pgm(const std::filesystem::path& path, const Tensor& gray);
Tensor read_pgm(const std::filesystem::path& path);

// Grayscale PFM, {h,w}, stored as little-endian float32, rows bottom-up.
// Round-trips bit-exactly when values are float32-representable.
void write_pfm(const std::filesystem::path& path, const Tensor& map);
Tensor read_pfm(const std::filesystem::path& path);

// Nearest integer in [0,255]; what the writers above require.
Tensor quantized(const Tensor& t);

}  // namespace dav
