#pragma once

#include <cstdint>
#include <vector>

#include "attnscope/linalg.hpp"

namespace attnscope {

struct SpecialTokens {
  std::int64_t cls = 0;
  std::int64_t sep = 0;
  std::int64_t mask = 0;
  std::int64_t pad = 0;

  bool operator==(const SpecialTokens&) const = default;
};

/// Architecture hyperparameters of a post-LN encoder.
struct ModelConfig {
  int hidden_dim = 0;
  int num_heads = 0;
  int head_dim = 0;
  int num_layers = 0;
  int ffn_dim = 0;
  double ln_epsilon = 1e-12;
  int vocab_size = 0;
  int max_positions = 0;
  int num_segments = 0;
  SpecialTokens special;

  /// Throws Error(InvalidConfig) when an invariant does not hold
  /// (head_dim * num_heads == hidden_dim, epsilon > 0, distinct in-range
  /// special ids, ...).
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

/// Learned tensors of one encoder layer.
///
/// Query/key/value projections are stored as full d x d matrices whose column
/// block [h*d_h, (h+1)*d_h) belongs to head h; the output projection is d x d
/// with head h owning the row block [h*d_h, (h+1)*d_h). This is the
/// concatenated layout W_V = [W_V^1 ... W_V^H], W_O = [W_O^1; ...; W_O^H], so
/// the head-integrated affine map is simply (x W_V + b_V) W_O.
struct LayerWeights {
  int num_heads = 0;

  Matrix w_query, w_key, w_value, w_output;
  RowVector b_query, b_key, b_value;
  // Bias added once after the output projection. Zero for checkpoints without
  // one; its normalized image is kept out of both mixing and preserving terms.
  RowVector b_output;

  RowVector ln_gamma, ln_beta;

  Matrix w_ffn_in;   // d x d_ff
  RowVector b_ffn_in;
  Matrix w_ffn_out;  // d_ff x d
  RowVector b_ffn_out;
  RowVector ffn_ln_gamma, ffn_ln_beta;

  int hidden_dim() const { return static_cast<int>(w_value.rows()); }
  int head_dim() const { return hidden_dim() / num_heads; }

  auto query_weight(int h) const { return w_query.middleCols(h * head_dim(), head_dim()); }
  auto key_weight(int h) const { return w_key.middleCols(h * head_dim(), head_dim()); }
  auto value_weight(int h) const { return w_value.middleCols(h * head_dim(), head_dim()); }
  auto output_weight(int h) const { return w_output.middleRows(h * head_dim(), head_dim()); }
  auto query_bias(int h) const { return b_query.segment(h * head_dim(), head_dim()); }
  auto key_bias(int h) const { return b_key.segment(h * head_dim(), head_dim()); }
  auto value_bias(int h) const { return b_value.segment(h * head_dim(), head_dim()); }

  /// All-zero tensors with gamma = 1, shaped for cfg.
  static LayerWeights zeros(const ModelConfig& cfg);

  /// Throws ShapeMismatch or NonFiniteWeight.
  void validate(const ModelConfig& cfg) const;
};

struct EmbeddingWeights {
  Matrix token;     // vocab_size x d
  Matrix position;  // max_positions x d
  Matrix segment;   // num_segments x d
  RowVector ln_gamma, ln_beta;

  static EmbeddingWeights zeros(const ModelConfig& cfg);
  void validate(const ModelConfig& cfg) const;
};

struct Model {
  ModelConfig config;
  EmbeddingWeights embeddings;
  std::vector<LayerWeights> layers;

  void validate() const;
};

}  // namespace attnscope
