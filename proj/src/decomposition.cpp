#include "attnscope/decomposition.hpp"

#include <fmt/format.h>

#include <cmath>
#include <limits>

#include "attnscope/error.hpp"

namespace attnscope {

double ln_scale(const RowVector& y, double eps) {
  const RowVector centered = y.array() - y.mean();
  return std::sqrt(centered.squaredNorm() / static_cast<double>(y.size()) + eps);
}

RowVector ln_term(const RowVector& part, double scale, const RowVector& gamma) {
  const RowVector centered = part.array() - part.mean();
  return (centered / scale).cwiseProduct(gamma);
}

LnDecomposition ln_decompose(std::span<const RowVector> parts, const RowVector& gamma, const RowVector& beta,
                             double eps) {
  if (parts.empty()) throw Error(ErrorCode::EmptyInput, "ln_decompose needs at least one part");
  RowVector y = RowVector::Zero(parts.front().size());
  for (const auto& p : parts) y += p;
  const double scale = ln_scale(y, eps);

  LnDecomposition out;
  out.terms.reserve(parts.size());
  for (const auto& p : parts) out.terms.push_back(ln_term(p, scale, gamma));
  out.beta = beta;
  return out;
}

namespace {

void check_residual(double residual, double tolerance, int layer, Eigen::Index token) {
  if (!(residual <= tolerance))
    throw Error(ErrorCode::ReconstructionFailure,
                fmt::format("layer {} token {}: residual {:.3e} exceeds tolerance {:.3e}", layer, token, residual,
                            tolerance));
}

// Max-abs difference; a non-finite entry on either side counts as infinite.
double reconstruction_residual(const RowVector& rebuilt, const RowVector& target) {
  const RowVector diff = rebuilt - target;
  if (!diff.allFinite()) return std::numeric_limits<double>::infinity();
  return diff.cwiseAbs().maxCoeff();
}

DecompositionRecord make_record(const LayerTrace& trace, const LayerWeights& w) {
  const Eigen::Index n = trace.input.rows();
  DecompositionRecord rec;
  rec.layer_index = trace.layer_index;
  rec.tokens.resize(static_cast<std::size_t>(n));
  rec.contributions = Matrix::Zero(n, n);
  rec.attn_contributions = Matrix::Zero(n, n);
  rec.beta = w.ln_beta;
  return rec;
}

// Per-pair vectors are produced one source at a time and folded into running
// sums, so only the per-head transformed inputs (H x n x d) are held.
DecompositionRecord decompose_streaming(const LayerTrace& trace, const LayerWeights& w, const ModelConfig& cfg,
                                        double tolerance) {
  const Eigen::Index n = trace.input.rows();
  const Eigen::Index d = trace.input.cols();
  DecompositionRecord rec = make_record(trace, w);

  std::vector<Matrix> transformed;
  transformed.reserve(static_cast<std::size_t>(w.num_heads));
  for (int h = 0; h < w.num_heads; ++h) transformed.push_back(f_head_rows(trace.input, w, h));

  RowVector pair(d), mixing_pre(d), mixing_post(d), self_attn(d);
  for (Eigen::Index i = 0; i < n; ++i) {
    const RowVector x_i = trace.input.row(i);
    const RowVector y = trace.attn_output.row(i) + x_i;
    const double scale = ln_scale(y, cfg.ln_epsilon);

    mixing_pre.setZero();
    mixing_post.setZero();
    self_attn.setZero();
    for (Eigen::Index j = 0; j < n; ++j) {
      pair.setZero();
      for (int h = 0; h < w.num_heads; ++h)
        pair.noalias() += trace.attention[static_cast<std::size_t>(h)](i, j) * transformed[static_cast<std::size_t>(h)].row(j);
      rec.attn_contributions(i, j) = pair.norm();
      if (j == i) {
        self_attn = pair;
        continue;
      }
      const RowVector term = ln_term(pair, scale, w.ln_gamma);
      rec.contributions(i, j) = term.norm();
      mixing_pre += pair;
      mixing_post += term;
    }

    const RowVector preserving = ln_term(self_attn, scale, w.ln_gamma) + ln_term(x_i, scale, w.ln_gamma);
    const RowVector bias_term = ln_term(w.b_output, scale, w.ln_gamma);
    rec.contributions(i, i) = preserving.norm();

    auto& t = rec.tokens[static_cast<std::size_t>(i)];
    t.mixing_norm = mixing_post.norm();
    t.preserving_norm = preserving.norm();
    t.pre_ln_mixing_norm = mixing_pre.norm();
    t.attn_self_norm = self_attn.norm();
    t.pre_ln_preserving_norm = (self_attn + x_i).norm();

    const RowVector rebuilt = mixing_post + preserving + bias_term + w.ln_beta;
    t.residual = reconstruction_residual(rebuilt, trace.block_output.row(i));
    rec.exactness_residual = std::max(rec.exactness_residual, t.residual);
    check_residual(t.residual, tolerance, trace.layer_index, i);
  }
  return rec;
}

// Materializes every per-pair vector from per-head f evaluations and splits
// LN with ln_decompose. Slow; used to cross-check the streaming path.
DecompositionRecord decompose_materialized(const LayerTrace& trace, const LayerWeights& w, const ModelConfig& cfg,
                                           double tolerance) {
  const Eigen::Index n = trace.input.rows();
  const Eigen::Index d = trace.input.cols();
  DecompositionRecord rec = make_record(trace, w);
  rec.pair_vectors.resize(static_cast<std::size_t>(n));

  for (Eigen::Index i = 0; i < n; ++i) {
    std::vector<RowVector> parts(static_cast<std::size_t>(n), RowVector::Zero(d));
    for (Eigen::Index j = 0; j < n; ++j)
      for (int h = 0; h < w.num_heads; ++h)
        parts[static_cast<std::size_t>(j)] +=
            trace.attention[static_cast<std::size_t>(h)](i, j) * f_head(trace.input.row(j), w, h);
    const RowVector x_i = trace.input.row(i);
    parts.push_back(x_i);
    parts.push_back(w.b_output);

    const LnDecomposition split = ln_decompose(parts, w.ln_gamma, w.ln_beta, cfg.ln_epsilon);

    RowVector mixing_pre = RowVector::Zero(d);
    RowVector mixing_post = RowVector::Zero(d);
    for (Eigen::Index j = 0; j < n; ++j) {
      rec.attn_contributions(i, j) = parts[static_cast<std::size_t>(j)].norm();
      if (j == i) continue;
      rec.contributions(i, j) = split.terms[static_cast<std::size_t>(j)].norm();
      mixing_pre += parts[static_cast<std::size_t>(j)];
      mixing_post += split.terms[static_cast<std::size_t>(j)];
    }
    const auto self = static_cast<std::size_t>(i);
    const auto residual_index = static_cast<std::size_t>(n);
    const RowVector preserving = split.terms[self] + split.terms[residual_index];
    rec.contributions(i, i) = preserving.norm();

    auto& t = rec.tokens[self];
    t.mixing_norm = mixing_post.norm();
    t.preserving_norm = preserving.norm();
    t.pre_ln_mixing_norm = mixing_pre.norm();
    t.attn_self_norm = parts[self].norm();
    t.pre_ln_preserving_norm = (parts[self] + x_i).norm();

    RowVector rebuilt = split.beta;
    for (const auto& term : split.terms) rebuilt += term;
    t.residual = reconstruction_residual(rebuilt, trace.block_output.row(i));
    rec.exactness_residual = std::max(rec.exactness_residual, t.residual);
    rec.pair_vectors[self] = split.terms;
    check_residual(t.residual, tolerance, trace.layer_index, i);
  }
  return rec;
}

}  // namespace

DecompositionRecord decompose_block(const LayerTrace& trace, const LayerWeights& w, const ModelConfig& cfg,
                                    const DecomposeOptions& options) {
  if (trace.attention.size() != static_cast<std::size_t>(w.num_heads) || trace.input.cols() != cfg.hidden_dim)
    throw Error(ErrorCode::ShapeMismatch, "trace does not match the layer weights");
  return options.materialize ? decompose_materialized(trace, w, cfg, options.tolerance)
                             : decompose_streaming(trace, w, cfg, options.tolerance);
}

Matrix contribution_map(const DecompositionRecord& record, MapNormalization normalize, MapScope scope) {
  Matrix map = scope == MapScope::AttnResLnN ? record.contributions : record.attn_contributions;
  if (normalize == MapNormalization::PerMapMax && map.size() > 0) {
    const double peak = map.maxCoeff();
    if (peak > 0) map /= peak;
  }
  return map;
}

}  // namespace attnscope
