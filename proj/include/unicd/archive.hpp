#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "json.hpp"

#include "unicd/tensor.hpp"

namespace unicd {

enum class DType { kF32, kF64 };

// Named dense tensors with a JSON header. Layout on disk:
//
//   bytes 0..7   magic "UNICDTA1"
//   bytes 8..15  header length L (uint64, little endian)
//   L bytes      UTF-8 JSON: {"meta": {...},
//                             "tensors": [{"name", "dtype": "f32"|"f64",
//                                          "shape": [...], "offset", "nbytes"}]}
//   rest         tensor payloads, little endian, offsets relative to this point
//
// Tensors are stored in name order. Used for feature archives, embedding
// archives and checkpoints.
struct TensorArchive {
  nlohmann::json meta = nlohmann::json::object();
  std::map<std::string, Tensor> tensors;
};

// Atomic: writes a sibling temp file then renames over the target.
void write_archive(const std::filesystem::path& path, const TensorArchive& a, DType dtype = DType::kF64);
TensorArchive read_archive(const std::filesystem::path& path);

}  // namespace unicd
