#include "attnscope/model.hpp"

#include <fmt/format.h>

#include <array>
#include <string>

#include "attnscope/error.hpp"

namespace attnscope {

namespace {

void require(bool ok, ErrorCode code, const std::string& what) {
  if (!ok) throw Error(code, what);
}

void check_matrix(const Matrix& m, Eigen::Index rows, Eigen::Index cols, const char* name) {
  require(m.rows() == rows && m.cols() == cols, ErrorCode::ShapeMismatch,
          fmt::format("{} is {}x{}, expected {}x{}", name, m.rows(), m.cols(), rows, cols));
  require(m.allFinite(), ErrorCode::NonFiniteWeight, fmt::format("{} has a non-finite entry", name));
}

void check_vector(const RowVector& v, Eigen::Index size, const char* name) {
  require(v.size() == size, ErrorCode::ShapeMismatch,
          fmt::format("{} has {} entries, expected {}", name, v.size(), size));
  require(v.allFinite(), ErrorCode::NonFiniteWeight, fmt::format("{} has a non-finite entry", name));
}

}  // namespace

void ModelConfig::validate() const {
  require(hidden_dim > 0 && num_heads > 0 && head_dim > 0 && num_layers >= 0 && ffn_dim > 0,
          ErrorCode::InvalidConfig, "dimensions must be positive");
  require(head_dim * num_heads == hidden_dim, ErrorCode::InvalidConfig,
          fmt::format("head_dim {} x num_heads {} != hidden_dim {}", head_dim, num_heads, hidden_dim));
  require(hidden_dim >= 2, ErrorCode::InvalidConfig, "layer normalization needs hidden_dim >= 2");
  require(ln_epsilon > 0, ErrorCode::InvalidConfig, "ln_epsilon must be positive");
  require(vocab_size > 0 && max_positions > 0 && num_segments >= 0, ErrorCode::InvalidConfig,
          "vocab_size and max_positions must be positive");
  const std::array<std::int64_t, 4> ids = {special.cls, special.sep, special.mask, special.pad};
  for (std::size_t a = 0; a < ids.size(); ++a) {
    require(ids[a] >= 0 && ids[a] < vocab_size, ErrorCode::InvalidConfig,
            fmt::format("special token id {} outside vocabulary", ids[a]));
    for (std::size_t b = a + 1; b < ids.size(); ++b)
      require(ids[a] != ids[b], ErrorCode::InvalidConfig,
              fmt::format("special token id {} used twice", ids[a]));
  }
}

LayerWeights LayerWeights::zeros(const ModelConfig& cfg) {
  const int d = cfg.hidden_dim;
  LayerWeights w;
  w.num_heads = cfg.num_heads;
  w.w_query = w.w_key = w.w_value = w.w_output = Matrix::Zero(d, d);
  w.b_query = w.b_key = w.b_value = w.b_output = RowVector::Zero(d);
  w.ln_gamma = w.ffn_ln_gamma = RowVector::Ones(d);
  w.ln_beta = w.ffn_ln_beta = RowVector::Zero(d);
  w.w_ffn_in = Matrix::Zero(d, cfg.ffn_dim);
  w.b_ffn_in = RowVector::Zero(cfg.ffn_dim);
  w.w_ffn_out = Matrix::Zero(cfg.ffn_dim, d);
  w.b_ffn_out = RowVector::Zero(d);
  return w;
}

void LayerWeights::validate(const ModelConfig& cfg) const {
  const int d = cfg.hidden_dim;
  require(num_heads == cfg.num_heads, ErrorCode::ShapeMismatch, "layer head count differs from config");
  check_matrix(w_query, d, d, "attention.query.weight");
  check_matrix(w_key, d, d, "attention.key.weight");
  check_matrix(w_value, d, d, "attention.value.weight");
  check_matrix(w_output, d, d, "attention.output.weight");
  check_vector(b_query, d, "attention.query.bias");
  check_vector(b_key, d, "attention.key.bias");
  check_vector(b_value, d, "attention.value.bias");
  check_vector(b_output, d, "attention.output.bias");
  check_vector(ln_gamma, d, "attention.ln.gamma");
  check_vector(ln_beta, d, "attention.ln.beta");
  check_matrix(w_ffn_in, d, cfg.ffn_dim, "ffn.in.weight");
  check_vector(b_ffn_in, cfg.ffn_dim, "ffn.in.bias");
  check_matrix(w_ffn_out, cfg.ffn_dim, d, "ffn.out.weight");
  check_vector(b_ffn_out, d, "ffn.out.bias");
  check_vector(ffn_ln_gamma, d, "ffn.ln.gamma");
  check_vector(ffn_ln_beta, d, "ffn.ln.beta");
}

EmbeddingWeights EmbeddingWeights::zeros(const ModelConfig& cfg) {
  const int d = cfg.hidden_dim;
  EmbeddingWeights e;
  e.token = Matrix::Zero(cfg.vocab_size, d);
  e.position = Matrix::Zero(cfg.max_positions, d);
  e.segment = Matrix::Zero(cfg.num_segments, d);
  e.ln_gamma = RowVector::Ones(d);
  e.ln_beta = RowVector::Zero(d);
  return e;
}

void EmbeddingWeights::validate(const ModelConfig& cfg) const {
  const int d = cfg.hidden_dim;
  check_matrix(token, cfg.vocab_size, d, "embeddings.token");
  check_matrix(position, cfg.max_positions, d, "embeddings.position");
  check_matrix(segment, cfg.num_segments, d, "embeddings.segment");
  check_vector(ln_gamma, d, "embeddings.ln.gamma");
  check_vector(ln_beta, d, "embeddings.ln.beta");
}

void Model::validate() const {
  config.validate();
  embeddings.validate(config);
  require(static_cast<int>(layers.size()) == config.num_layers, ErrorCode::ShapeMismatch,
          fmt::format("{} layers present, config says {}", layers.size(), config.num_layers));
  for (const auto& layer : layers) layer.validate(config);
}

}  // namespace attnscope
