#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "attnscope/model.hpp"

namespace attnscope {

// ABLK1 container layout (all integers little-endian):
//
//   "ABLK1"                       5-byte magic, doubles as format version
//   u64 header_len, header bytes  UTF-8 JSON block
//   u32 tensor_count
//   tensor_count directory entries:
//     u16 name_len, name bytes
//     u8  rank, rank x u64 dims
//     u8  dtype code (1 = f32, 2 = f64)
//     u64 byte offset into the payload section
//   payload section               row-major tensor data
//
// Model files put the ModelConfig in the JSON block; reference-activation
// files put the probed sequences there.

enum class DType : std::uint8_t { F32 = 1, F64 = 2 };

struct Tensor {
  std::vector<std::uint64_t> dims;
  std::vector<double> data;  // row-major

  std::uint64_t element_count() const;
};

struct TensorContainer {
  nlohmann::json header;
  std::map<std::string, Tensor> tensors;
  DType dtype = DType::F32;
};

void write_container(const std::filesystem::path& path, const TensorContainer& container);
/// Throws Error(Io) when unreadable, Error(MalformedFile) for a bad magic,
/// truncation, or a directory pointing outside the payload.
TensorContainer read_container(const std::filesystem::path& path);

nlohmann::json config_to_json(const ModelConfig& cfg);
ModelConfig config_from_json(const nlohmann::json& j);

/// Weights are written as F32 unless F64 is requested; loading always widens
/// to double.
void save_model(const std::filesystem::path& path, const Model& model, DType dtype = DType::F32);
Model load_model(const std::filesystem::path& path);

/// Per-sequence activations dumped by the exporter for forward-parity checks.
struct ReferenceSequence {
  std::vector<std::int64_t> token_ids;
  std::vector<int> segment_ids;
  Matrix embeddings;
  std::vector<Matrix> block_outputs;
  std::vector<Matrix> layer_outputs;
};

void save_reference_activations(const std::filesystem::path& path,
                                const std::vector<ReferenceSequence>& sequences,
                                DType dtype = DType::F32);
std::vector<ReferenceSequence> load_reference_activations(const std::filesystem::path& path);

}  // namespace attnscope
