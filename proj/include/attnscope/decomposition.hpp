#pragma once

#include <span>
#include <vector>

#include "attnscope/encoder.hpp"
#include "attnscope/linalg.hpp"
#include "attnscope/model.hpp"

namespace attnscope {

inline constexpr double kDefaultReconstructionTolerance = 1e-9;

/// Result of splitting LN(sum_j y_j) into per-part terms.
struct LnDecomposition {
  std::vector<RowVector> terms;  // g_y(y_j) for every input part
  RowVector beta;
};

/// Distributive law of layer normalization: with y = sum_j parts[j],
///   g_y(y_j) = (y_j - m(y_j)) / s(y) * gamma,   LN(y) = sum_j g_y(y_j) + beta.
/// The normalizer s(y) is shared by every term.
LnDecomposition ln_decompose(std::span<const RowVector> parts, const RowVector& gamma,
                             const RowVector& beta, double eps);

/// s(y) = sqrt(mean((y - m(y))^2) + eps).
double ln_scale(const RowVector& y, double eps);

/// g_y(part) for a precomputed s(y).
RowVector ln_term(const RowVector& part, double scale, const RowVector& gamma);

/// Norms for one token of one attention block.
struct TokenDecomposition {
  double mixing_norm = 0;     // ||sum_{j!=i} g_y(sum_h a_ij f(x_j))||
  double preserving_norm = 0; // ||g_y(sum_h a_ii f(x_i)) + g_y(x_i)||
  // Before LN: the context part of ATTN, its self part, and self part plus
  // the residual input.
  double pre_ln_mixing_norm = 0;
  double attn_self_norm = 0;
  double pre_ln_preserving_norm = 0;
  double residual = 0;  // max-abs reconstruction error against block_output
};

struct DecompositionRecord {
  int layer_index = 0;
  std::vector<TokenDecomposition> tokens;
  // Post-LN contribution norms; (i, j) = ||g_y(sum_h a_ij f(x_j))|| for j != i,
  // diagonal = preserving norm.
  Matrix contributions;
  // Pre-LN, pre-residual norms ||sum_h a_ij f(x_j)|| (diagonal included).
  Matrix attn_contributions;
  RowVector beta;
  double exactness_residual = 0;
  // Only filled by the materialized path: pair_vectors[i][j] = g_y term of
  // source j for target i, plus the residual term at index n and the output
  // bias term at index n + 1.
  std::vector<std::vector<RowVector>> pair_vectors;

  std::size_t size() const { return tokens.size(); }
};

struct DecomposeOptions {
  double tolerance = kDefaultReconstructionTolerance;
  // Builds every per-pair vector through the per-head maps and
  // ln_decompose instead of the streaming path. O(n^2 d) memory.
  bool materialize = false;
};

/// Throws Error(ReconstructionFailure) if mixing + preserving + bias terms +
/// beta differ from trace.block_output by more than options.tolerance in any
/// element.
DecompositionRecord decompose_block(const LayerTrace& trace, const LayerWeights& w,
                                    const ModelConfig& cfg, const DecomposeOptions& options = {});

enum class MapNormalization { Raw, PerMapMax };
enum class MapScope { AttnN, AttnResLnN };

Matrix contribution_map(const DecompositionRecord& record, MapNormalization normalize,
                        MapScope scope = MapScope::AttnResLnN);

}  // namespace attnscope
