#include "attnscope/synthetic.hpp"

#include <cmath>
#include <random>

#include "attnscope/error.hpp"

namespace attnscope {

namespace {

constexpr std::int64_t kFirstNormalId = 4;

class Gaussian {
 public:
  explicit Gaussian(std::uint64_t seed) : engine_(seed) {}

  Matrix matrix(Eigen::Index rows, Eigen::Index cols, double stddev) {
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = stddev * dist_(engine_);
    return m;
  }
  RowVector vector(Eigen::Index size, double stddev, double mean = 0.0) {
    RowVector v(size);
    for (Eigen::Index i = 0; i < size; ++i) v[i] = mean + stddev * dist_(engine_);
    return v;
  }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> dist_;
};

}  // namespace

ModelConfig synthetic_config(int hidden_dim, int num_heads, int num_layers, int vocab_size, int max_positions) {
  ModelConfig cfg;
  cfg.hidden_dim = hidden_dim;
  cfg.num_heads = num_heads;
  cfg.head_dim = num_heads > 0 ? hidden_dim / num_heads : 0;
  cfg.num_layers = num_layers;
  cfg.ffn_dim = 2 * hidden_dim;
  cfg.ln_epsilon = 1e-12;
  cfg.vocab_size = vocab_size;
  cfg.max_positions = max_positions;
  cfg.num_segments = 2;
  cfg.special = {.cls = 1, .sep = 2, .mask = 3, .pad = 0};
  cfg.validate();
  return cfg;
}

Model random_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Gaussian g(seed);
  const int d = cfg.hidden_dim;
  const double proj = 1.0 / std::sqrt(static_cast<double>(d));

  Model model;
  model.config = cfg;
  auto& e = model.embeddings;
  e.token = g.matrix(cfg.vocab_size, d, 1.0);
  e.position = g.matrix(cfg.max_positions, d, 1.0);
  e.segment = g.matrix(cfg.num_segments, d, 1.0);
  e.ln_gamma = g.vector(d, 0.1, 1.0);
  e.ln_beta = g.vector(d, 0.1);

  for (int k = 0; k < cfg.num_layers; ++k) {
    LayerWeights w;
    w.num_heads = cfg.num_heads;
    w.w_query = g.matrix(d, d, proj);
    w.w_key = g.matrix(d, d, proj);
    w.w_value = g.matrix(d, d, proj);
    w.w_output = g.matrix(d, d, proj);
    w.b_query = g.vector(d, 0.1);
    w.b_key = g.vector(d, 0.1);
    w.b_value = g.vector(d, 0.1);
    w.b_output = RowVector::Zero(d);
    w.ln_gamma = g.vector(d, 0.1, 1.0);
    w.ln_beta = g.vector(d, 0.1);
    w.w_ffn_in = g.matrix(d, cfg.ffn_dim, proj);
    w.b_ffn_in = g.vector(cfg.ffn_dim, 0.1);
    w.w_ffn_out = g.matrix(cfg.ffn_dim, d, 1.0 / std::sqrt(static_cast<double>(cfg.ffn_dim)));
    w.b_ffn_out = g.vector(d, 0.1);
    w.ffn_ln_gamma = g.vector(d, 0.1, 1.0);
    w.ffn_ln_beta = g.vector(d, 0.1);
    model.layers.push_back(std::move(w));
  }
  model.validate();
  return model;
}

TokenizedSequence make_sequence(const std::vector<std::int64_t>& ids, const ModelConfig& cfg) {
  TokenizedSequence seq;
  seq.token_ids = ids;
  seq.original_ids = ids;
  int segment = 0;
  for (auto id : ids) {
    const TokenCategory c = category_of(id, cfg.special);
    seq.categories.push_back(c);
    seq.segment_ids.push_back(cfg.num_segments > 1 ? segment : 0);
    if (c == TokenCategory::Sep) segment = 1;
    seq.frequency_ranks.push_back(c == TokenCategory::Normal ? std::optional<std::int64_t>(id - kFirstNormalId + 1)
                                                             : std::nullopt);
  }
  validate(seq, cfg);
  return seq;
}

std::vector<TokenizedSequence> random_corpus(const ModelConfig& cfg, std::size_t count, std::size_t min_length,
                                             std::size_t max_length, std::uint64_t seed) {
  if (cfg.vocab_size <= kFirstNormalId) throw Error(ErrorCode::InvalidConfig, "vocabulary has no normal tokens");
  if (min_length < 3 || max_length < min_length || max_length > static_cast<std::size_t>(cfg.max_positions))
    throw Error(ErrorCode::InvalidArgument, "sequence lengths must satisfy 3 <= min <= max <= max_positions");

  std::mt19937_64 engine(seed);
  std::vector<double> zipf;
  for (std::int64_t id = kFirstNormalId; id < cfg.vocab_size; ++id)
    zipf.push_back(1.0 / static_cast<double>(id - kFirstNormalId + 1));
  std::discrete_distribution<std::int64_t> token(zipf.begin(), zipf.end());
  std::uniform_int_distribution<std::size_t> length(min_length, max_length);

  std::vector<TokenizedSequence> corpus;
  for (std::size_t s = 0; s < count; ++s) {
    const std::size_t n = length(engine);
    std::vector<std::int64_t> ids{cfg.special.cls};
    while (ids.size() + 1 < n) ids.push_back(kFirstNormalId + token(engine));
    ids.push_back(cfg.special.sep);
    corpus.push_back(make_sequence(ids, cfg));
  }
  return corpus;
}

}  // namespace attnscope
