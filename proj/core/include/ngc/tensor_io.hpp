#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ngc/linalg.hpp"

namespace ngc {

// "NGCT" container: magic, u32 version (= 1), u32 rank, u32 per dimension,
// then little-endian IEEE-754 doubles in row-major order.
inline constexpr std::uint32_t kNgctVersion = 1;

struct Tensor {
  std::vector<std::uint32_t> dims;
  std::vector<double> data;
};

std::string encode_ngct(const Tensor& t);
Tensor decode_ngct(const std::string& bytes);

void write_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor read_tensor(const std::filesystem::path& path);

void write_matrix(const std::filesystem::path& path, const Matrix& m);
/// Rank-1 tensors load as a single row.
Matrix read_matrix(const std::filesystem::path& path);

}  // namespace ngc
