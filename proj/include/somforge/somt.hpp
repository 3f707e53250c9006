#pragma once

// SOMT tensor container. All integers little-endian:
//   "SOMT" | u8 version=1 | u8 dtype (1=f32, 2=f64, 3=complex-f32 interleaved)
//   | u8 name-table flag | u32 tensor count
//   per tensor: [u16 name length + UTF-8 name when flag=1] | u8 ndim
//               | ndim x u32 dims | row-major payload

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "somforge/tensor.hpp"

namespace somforge::somt {

inline constexpr std::uint8_t kVersion = 1;

enum class FileDType : std::uint8_t { f32 = 1, f64 = 2, complex_f32 = 3 };

using NamedTensor = std::pair<std::string, Tensor>;
using TensorList = std::vector<NamedTensor>;

/// Serializes `tensors` (all of one dtype) to bytes. With FileDType::complex_f32
/// every tensor must be f32 with a trailing extent of 2 holding (re, im); that
/// extent is folded into the element type on disk.
std::string encode(const TensorList& tensors, std::optional<FileDType> file_dtype = std::nullopt);
TensorList decode(std::string_view bytes);

/// Writes atomically (temporary file, then rename). Throws IoError.
void save_tensors(const std::filesystem::path& path, const TensorList& tensors,
                  std::optional<FileDType> file_dtype = std::nullopt);
/// Throws IoError when unreadable and FormatError on malformed content.
TensorList load_tensors(const std::filesystem::path& path);

/// Throws FormatError(invalid) naming the missing tensor.
const Tensor& find(const TensorList& tensors, std::string_view name);
bool contains(const TensorList& tensors, std::string_view name);

/// UTF-8 text stored one byte per element, exact in either dtype.
Tensor text_tensor(std::string_view text, DType dtype = DType::f32);
std::string tensor_text(const Tensor& t);

/// Atomic whole-file write used for every artifact.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);
std::string read_file(const std::filesystem::path& path);

}  // namespace somforge::somt
