#include "attnscope/encoder.hpp"

#include <fmt/format.h>

#include <cmath>

#include "attnscope/error.hpp"

namespace attnscope {

RowVector layer_norm(const RowVector& y, const RowVector& gamma, const RowVector& beta, double eps) {
  const RowVector centered = y.array() - y.mean();
  const double scale = std::sqrt(centered.squaredNorm() / static_cast<double>(y.size()) + eps);
  return (centered / scale).cwiseProduct(gamma) + beta;
}

Matrix layer_norm_rows(const Matrix& y, const RowVector& gamma, const RowVector& beta, double eps) {
  Matrix out(y.rows(), y.cols());
  for (Eigen::Index i = 0; i < y.rows(); ++i) out.row(i) = layer_norm(y.row(i), gamma, beta, eps);
  return out;
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

Matrix embed(const std::vector<std::int64_t>& token_ids, const std::vector<int>& segment_ids,
             const EmbeddingWeights& emb, const ModelConfig& cfg) {
  const auto n = static_cast<Eigen::Index>(token_ids.size());
  if (n > cfg.max_positions)
    throw Error(ErrorCode::LengthExceeded, fmt::format("{} tokens, model supports {}", n, cfg.max_positions));
  if (segment_ids.size() != token_ids.size())
    throw Error(ErrorCode::InvalidArgument, "segment ids do not match token ids");
  Matrix out(n, cfg.hidden_dim);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto id = token_ids[static_cast<std::size_t>(i)];
    if (id < 0 || id >= cfg.vocab_size) throw Error(ErrorCode::UnknownTokenId, fmt::format("token id {}", id));
    RowVector sum = emb.token.row(id) + emb.position.row(i);
    if (cfg.num_segments > 0) {
      const int seg = segment_ids[static_cast<std::size_t>(i)];
      if (seg < 0 || seg >= cfg.num_segments)
        throw Error(ErrorCode::IndexOutOfRange, fmt::format("segment id {}", seg));
      sum += emb.segment.row(seg);
    }
    out.row(i) = layer_norm(sum, emb.ln_gamma, emb.ln_beta, cfg.ln_epsilon);
  }
  return out;
}

Matrix embed(const TokenizedSequence& seq, const EmbeddingWeights& emb, const ModelConfig& cfg) {
  return embed(seq.token_ids, seq.segment_ids, emb, cfg);
}

Matrix attention_weights(const Matrix& x, const LayerWeights& w, int head) {
  const Matrix q = (x * w.query_weight(head)).rowwise() + w.query_bias(head);
  const Matrix k = (x * w.key_weight(head)).rowwise() + w.key_bias(head);
  Matrix logits = (q * k.transpose()) / std::sqrt(static_cast<double>(w.head_dim()));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    auto row = logits.row(i);
    row = (row.array() - row.maxCoeff()).exp();
    row /= row.sum();
  }
  return logits;
}

RowVector f_head(const RowVector& x, const LayerWeights& w, int head) {
  return (x * w.value_weight(head) + w.value_bias(head)) * w.output_weight(head);
}

Matrix f_head_rows(const Matrix& x, const LayerWeights& w, int head) {
  const Matrix values = (x * w.value_weight(head)).rowwise() + w.value_bias(head);
  return values * w.output_weight(head);
}

Matrix attn_forward(const Matrix& x, const LayerWeights& w, const std::vector<Matrix>& attention) {
  Matrix out = Matrix::Zero(x.rows(), x.cols());
  for (int h = 0; h < w.num_heads; ++h) out.noalias() += attention[static_cast<std::size_t>(h)] * f_head_rows(x, w, h);
  out.rowwise() += w.b_output;
  return out;
}

Matrix attn_forward(const Matrix& x, const LayerWeights& w) {
  std::vector<Matrix> attention;
  for (int h = 0; h < w.num_heads; ++h) attention.push_back(attention_weights(x, w, h));
  return attn_forward(x, w, attention);
}

LayerTrace layer_forward(const Matrix& x, const LayerWeights& w, const ModelConfig& cfg, int layer_index) {
  LayerTrace t;
  t.layer_index = layer_index;
  t.input = x;
  for (int h = 0; h < w.num_heads; ++h) t.attention.push_back(attention_weights(x, w, h));
  t.attn_output = attn_forward(x, w, t.attention);
  t.block_output = layer_norm_rows(t.attn_output + x, w.ln_gamma, w.ln_beta, cfg.ln_epsilon);

  Matrix hidden = (t.block_output * w.w_ffn_in).rowwise() + w.b_ffn_in;
  hidden = hidden.unaryExpr([](double v) { return gelu(v); });
  const Matrix ffn = (hidden * w.w_ffn_out).rowwise() + w.b_ffn_out;
  t.layer_output = layer_norm_rows(ffn + t.block_output, w.ffn_ln_gamma, w.ffn_ln_beta, cfg.ln_epsilon);
  return t;
}

ForwardResult full_forward(const TokenizedSequence& seq, const Model& model) {
  ForwardResult r;
  r.embeddings = embed(seq, model.embeddings, model.config);
  const Matrix* input = &r.embeddings;
  r.layers.reserve(model.layers.size());
  for (std::size_t k = 0; k < model.layers.size(); ++k) {
    r.layers.push_back(layer_forward(*input, model.layers[k], model.config, static_cast<int>(k)));
    input = &r.layers.back().layer_output;
  }
  return r;
}

}  // namespace attnscope
