#pragma once

// Binary file formats, all little-endian with 32-bit float payloads.
//
//   HSC1 (cubes, masks, measurements): "HSC1", u32 H, u32 W, u32 C, H*W*C floats in
//   (h, w, c) row-major order. Masks and measurements use C = 1.
//
//   DTA1 (named-tensor archive): "DTA1", then per tensor: u32 name length, UTF-8 name,
//   u32 rank, rank x u32 dims, raw floats. Tensors are written in lexicographic order.
//
// Writers go through a temporary file and an atomic rename, so a failed write never
// leaves a partial output behind.

#include <filesystem>
#include <string>

#include "dauhst/autodiff.hpp"
#include "dauhst/tensor.hpp"

namespace dauhst::io {

std::string encode_hsc(const Tensor& t);
/// Returns a rank-3 tensor (H, W, C).
Tensor decode_hsc(const std::string& bytes);
Tensor read_hsc(const std::filesystem::path& path);
/// Rank-2 tensors are written with C = 1.
void write_hsc(const std::filesystem::path& path, const Tensor& t);

std::string encode_archive(const ad::ParamStore& store);
ad::ParamStore decode_archive(const std::string& bytes);
ad::ParamStore read_archive(const std::filesystem::path& path);
void write_archive(const std::filesystem::path& path, const ad::ParamStore& store);

std::string read_file(const std::filesystem::path& path);
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);

/// Rounds every value to the nearest 32-bit float, the precision files store.
void round_to_float(Tensor& t);

}  // namespace dauhst::io
