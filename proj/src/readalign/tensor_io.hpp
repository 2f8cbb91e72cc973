#pragma once

// Binary tensor container shared by attention dumps, BOLD series, feature
// tables and targets. Layout (all integers little-endian):
//
//   "RATN"                 4 magic bytes
//   u32 rank               1..4
//   u32 dims[rank]
//   f32 values[prod(dims)] row-major, little-endian IEEE-754
//
// Target files append a mask trailer:
//
//   "RMSK"  u32 count  ceil(count/8) bytes, bit i = byte[i/8] >> (i%8) & 1

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace readalign {

struct Tensor {
  std::vector<std::uint32_t> dims;
  std::vector<float> values;

  std::size_t element_count() const noexcept;
  std::uint32_t dim(std::size_t i) const { return dims.at(i); }
};

struct MaskedTensor {
  Tensor tensor;
  std::vector<std::uint8_t> mask;  // one 0/1 byte per entry
};

std::vector<std::uint8_t> encode_tensor(const Tensor& t);
std::vector<std::uint8_t> encode_masked_tensor(const Tensor& t, std::span<const std::uint8_t> mask);

// `source` is used in error messages only.
Tensor decode_tensor(std::span<const std::uint8_t> bytes, const std::string& source);
MaskedTensor decode_masked_tensor(std::span<const std::uint8_t> bytes, const std::string& source);

Tensor read_tensor(const std::filesystem::path& path);
MaskedTensor read_masked_tensor(const std::filesystem::path& path);
void write_tensor(const std::filesystem::path& path, const Tensor& t);
void write_masked_tensor(const std::filesystem::path& path, const Tensor& t,
                         std::span<const std::uint8_t> mask);

// Whole-file helpers; writes go through a temporary file and a rename.
std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
std::string read_file_text(const std::filesystem::path& path);
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_file_atomic(const std::filesystem::path& path, const std::string& text);

}  // namespace readalign
