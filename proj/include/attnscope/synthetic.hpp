#pragma once

#include <cstdint>
#include <vector>

#include "attnscope/corpus.hpp"
#include "attnscope/model.hpp"

namespace attnscope {

/// Config with special ids PAD=0, CLS=1, SEP=2, MASK=3.
ModelConfig synthetic_config(int hidden_dim, int num_heads, int num_layers, int vocab_size = 64,
                             int max_positions = 128);

/// Gaussian weights: projections ~ N(0, 1/d), biases and LN shifts ~ N(0, 0.1^2),
/// LN scales ~ 1 + N(0, 0.1^2), embeddings ~ N(0, 1).
Model random_model(const ModelConfig& cfg, std::uint64_t seed);

/// [CLS] body [SEP] sequences with body tokens drawn Zipf-like from the
/// non-special vocabulary; the frequency rank of token id t is t - 3.
std::vector<TokenizedSequence> random_corpus(const ModelConfig& cfg, std::size_t count, std::size_t min_length,
                                             std::size_t max_length, std::uint64_t seed);

/// Builds a validated sequence from ids, tagging categories and assigning the
/// synthetic ranks above.
TokenizedSequence make_sequence(const std::vector<std::int64_t>& ids, const ModelConfig& cfg);

}  // namespace attnscope
