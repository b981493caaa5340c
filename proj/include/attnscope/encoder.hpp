#pragma once

#include <vector>

#include "attnscope/corpus.hpp"
#include "attnscope/linalg.hpp"
#include "attnscope/model.hpp"

namespace attnscope {

/// Intermediates of one post-LN encoder layer for a single sequence.
struct LayerTrace {
  int layer_index = 0;
  Matrix input;                   // n x d
  std::vector<Matrix> attention;  // H matrices, n x n, row-stochastic
  Matrix attn_output;             // n x d, multi-head attention output
  Matrix block_output;            // n x d, LN(attn_output + input)
  Matrix layer_output;            // n x d, after the feed-forward block
};

struct ForwardResult {
  Matrix embeddings;
  std::vector<LayerTrace> layers;

  const Matrix& final_hidden() const {
    return layers.empty() ? embeddings : layers.back().layer_output;
  }
};

/// (y - m(y)) / sqrt(mean((y - m(y))^2) + eps) * gamma + beta.
RowVector layer_norm(const RowVector& y, const RowVector& gamma, const RowVector& beta, double eps);
Matrix layer_norm_rows(const Matrix& y, const RowVector& gamma, const RowVector& beta, double eps);

double gelu(double x);

/// Row i = LN(token[id_i] + position[i] + segment[seg_i]); throws LengthExceeded.
Matrix embed(const TokenizedSequence& seq, const EmbeddingWeights& emb, const ModelConfig& cfg);
Matrix embed(const std::vector<std::int64_t>& token_ids, const std::vector<int>& segment_ids,
             const EmbeddingWeights& emb, const ModelConfig& cfg);

/// softmax_j(q(x_i) k(x_j)^T / sqrt(d_h)) for one head.
Matrix attention_weights(const Matrix& x, const LayerWeights& w, int head);

/// (x W_V^h + b_V^h) W_O^h.
RowVector f_head(const RowVector& x, const LayerWeights& w, int head);

/// f_head applied to every row of x.
Matrix f_head_rows(const Matrix& x, const LayerWeights& w, int head);

/// Row i = sum_h sum_j alpha^h_ij f_head(x_j, h) + b_output.
Matrix attn_forward(const Matrix& x, const LayerWeights& w);
Matrix attn_forward(const Matrix& x, const LayerWeights& w, const std::vector<Matrix>& attention);

LayerTrace layer_forward(const Matrix& x, const LayerWeights& w, const ModelConfig& cfg,
                         int layer_index = 0);

ForwardResult full_forward(const TokenizedSequence& seq, const Model& model);

}  // namespace attnscope
