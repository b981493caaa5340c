// Acceptance suite: one line per criterion, non-zero exit if any fails.
#include <fmt/format.h>

#include <Eigen/SVD>

#include <chrono>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "attnscope/decomposition.hpp"
#include "attnscope/encoder.hpp"
#include "attnscope/metrics.hpp"
#include "attnscope/synthetic.hpp"

using namespace attnscope;

namespace {

struct Outcome {
  bool passed;
  std::string detail;
};

Matrix gaussian(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double stddev = 1.0) {
  std::normal_distribution<double> normal(0.0, stddev);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = normal(rng);
  return m;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

Outcome decomposition_exactness() {
  const auto start = std::chrono::steady_clock::now();
  double worst = 0;
  std::size_t checked = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const ModelConfig cfg = synthetic_config(64, 4, 2);
    const Model model = random_model(cfg, 1000 + seed);
    const auto seq = random_corpus(cfg, 1, 16, 16, 2000 + seed).front();
    const ForwardResult fwd = full_forward(seq, model);
    for (std::size_t k = 0; k < fwd.layers.size(); ++k) {
      const auto rec = decompose_block(fwd.layers[k], model.layers[k], cfg,
                                       {.tolerance = std::numeric_limits<double>::infinity()});
      worst = std::max(worst, rec.exactness_residual);
      checked += rec.size();
    }
  }
  const double elapsed = seconds_since(start);
  return {worst <= 1e-9 && elapsed < 5.0,
          fmt::format("{} token reconstructions, max residual {:.2e} (<= 1e-9), {:.2f} s (< 5 s)", checked, worst,
                      elapsed)};
}

Outcome distributive_law() {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> dim(2, 128), count(1, 20);
  std::uniform_real_distribution<double> log_eps(-12.0, -5.0);
  double worst = 0;
  for (int instance = 0; instance < 1000; ++instance) {
    const int d = dim(rng);
    const double eps = std::pow(10.0, log_eps(rng));
    const Matrix parts_m = gaussian(count(rng), d, rng);
    std::vector<RowVector> parts;
    RowVector total = RowVector::Zero(d);
    for (Eigen::Index p = 0; p < parts_m.rows(); ++p) {
      parts.emplace_back(parts_m.row(p));
      total += parts.back();
    }
    const RowVector gamma = gaussian(1, d, rng), beta = gaussian(1, d, rng);
    const auto split = ln_decompose(parts, gamma, beta, eps);
    RowVector rebuilt = RowVector::Zero(d);
    for (const auto& t : split.terms) rebuilt += t;
    rebuilt += split.beta;

    // Layer norm of the sum, evaluated with scalar loops.
    double mean = 0, var = 0;
    for (Eigen::Index k = 0; k < d; ++k) mean += total[k];
    mean /= d;
    for (Eigen::Index k = 0; k < d; ++k) var += (total[k] - mean) * (total[k] - mean);
    var /= d;
    for (Eigen::Index k = 0; k < d; ++k) {
      const double expected = (total[k] - mean) / std::sqrt(var + eps) * gamma[k] + beta[k];
      worst = std::max(worst, std::abs(rebuilt[k] - expected));
    }
  }
  return {worst <= 1e-10, fmt::format("1000 instances, max abs error {:.2e} (<= 1e-10)", worst)};
}

Outcome residual_weight_identity() {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> tokens(1, 32), heads(1, 12);
  std::uniform_real_distribution<double> temperature(0.01, 20.0);
  std::size_t mismatches = 0, comparisons = 0;
  for (int draw = 0; draw < 10000; ++draw) {
    const int n = tokens(rng);
    std::vector<Matrix> attention;
    for (int h = heads(rng); h > 0; --h) {
      Matrix a = (gaussian(n, n, rng, temperature(rng))).array().exp().matrix();
      for (Eigen::Index i = 0; i < n; ++i) a.row(i) /= a.row(i).sum();
      attention.push_back(std::move(a));
    }
    const int i = std::uniform_int_distribution<int>(0, n - 1)(rng);
    ++comparisons;
    if (ratio_attnres_w(attention, i) != ratio_attn_w(attention, i) / 2) ++mismatches;
  }
  return {mismatches == 0, fmt::format("{} random attention draws, {} inexact", comparisons, mismatches)};
}

Outcome integrated_map_identity() {
  std::mt19937_64 rng(3);
  const std::array<std::pair<int, int>, 4> shapes{{{16, 1}, {32, 4}, {64, 8}, {96, 12}}};
  double worst = 0;
  for (int draw = 0; draw < 100; ++draw) {
    const auto [d, h] = shapes[static_cast<std::size_t>(draw) % shapes.size()];
    const ModelConfig cfg = synthetic_config(d, h, 1);
    const Model model = random_model(cfg, 3000 + static_cast<std::uint64_t>(draw));
    const LayerWeights& w = model.layers[0];
    const RowVector x = gaussian(1, d, rng);
    RowVector per_head = RowVector::Zero(d);
    for (int head = 0; head < h; ++head) per_head += f_head(x, w, head);
    worst = std::max(worst, (integrated_f(w).apply(x) - per_head).cwiseAbs().maxCoeff());
  }
  return {worst <= 1e-10, fmt::format("100 draws, max abs difference {:.2e} (<= 1e-10)", worst)};
}

Outcome expansion_rate_oracle() {
  std::mt19937_64 rng(4);
  double worst_rel = 0;
  for (int d : {64, 256}) {
    for (int draw = 0; draw < 20; ++draw) {
      const ModelConfig cfg = synthetic_config(d, 4, 1);
      const Model model = random_model(cfg, 4000 + static_cast<std::uint64_t>(d * 100 + draw));
      const LayerWeights& w = model.layers[0];
      const Matrix m = homogeneous_matrix(integrated_f(w));
      Matrix x = gaussian(10000, d + 1, rng);
      x.col(d).setOnes();
      const Matrix y = x * m;
      const double mc = (y.rowwise().norm().array() / x.rowwise().norm().array()).mean();
      worst_rel = std::max(worst_rel, std::abs(expansion_rate(w, 0).rate - mc) / mc);
    }
  }
  const ModelConfig cfg = synthetic_config(64, 4, 1);
  const Model model = random_model(cfg, 4999);
  const LayerWeights& w = model.layers[0];
  const double svd = Eigen::JacobiSVD<Matrix>(homogeneous_matrix(integrated_f(w))).singularValues().squaredNorm();
  const double svd_err = std::abs(svd - expansion_rate(w, 0).sum_sq_singulars);
  return {worst_rel <= 0.02 && svd_err <= 1e-8,
          fmt::format("40 draws at d=64,256, max relative gap {:.2e} (<= 0.02); SVD vs Frobenius {:.2e} (<= 1e-8)",
                      worst_rel, svd_err)};
}

Outcome streaming_vs_materialized() {
  double worst = 0;
  std::size_t pairs = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const ModelConfig cfg = synthetic_config(64, 4, 2);
    const Model model = random_model(cfg, 5000 + seed);
    const auto seq = random_corpus(cfg, 1, 16, 24, 6000 + seed).front();
    const ForwardResult fwd = full_forward(seq, model);
    for (std::size_t k = 0; k < fwd.layers.size(); ++k) {
      const auto fast = decompose_block(fwd.layers[k], model.layers[k], cfg);
      const auto slow = decompose_block(fwd.layers[k], model.layers[k], cfg, {.materialize = true});
      worst = std::max({worst, (fast.contributions - slow.contributions).cwiseAbs().maxCoeff(),
                        (fast.attn_contributions - slow.attn_contributions).cwiseAbs().maxCoeff()});
      pairs += static_cast<std::size_t>(fast.contributions.size());
    }
  }
  return {worst <= 1e-10, fmt::format("{} token pairs, max abs difference {:.2e} (<= 1e-10)", pairs, worst)};
}

Outcome degenerate_value_map() {
  const ModelConfig cfg = synthetic_config(64, 4, 2);
  Model model = random_model(cfg, 7000);
  for (auto& w : model.layers) {
    w.w_value.setZero();
    w.b_value.setZero();
  }
  std::size_t nonzero_ratios = 0, off_diagonal = 0, empty_diagonal = 0, ratios = 0;
  for (const auto& seq : random_corpus(cfg, 5, 8, 16, 7001)) {
    const ForwardResult fwd = full_forward(seq, model);
    for (std::size_t k = 0; k < fwd.layers.size(); ++k) {
      const auto rec = decompose_block(fwd.layers[k], model.layers[k], cfg);
      for (const auto& r :
           layer_ratios(fwd.layers[k], rec, seq, std::vector{Method::AttnN, Method::AttnResN, Method::AttnResLnN})) {
        ++ratios;
        if (r.ratio != 0.0) ++nonzero_ratios;
      }
      for (auto scope : {MapScope::AttnResLnN, MapScope::AttnN}) {
        const Matrix map = contribution_map(rec, MapNormalization::Raw, scope);
        for (Eigen::Index i = 0; i < map.rows(); ++i)
          for (Eigen::Index j = 0; j < map.cols(); ++j)
            if (i != j && map(i, j) != 0.0) ++off_diagonal;
        if (scope == MapScope::AttnResLnN && (map.diagonal().array() <= 0.0).any()) ++empty_diagonal;
      }
    }
  }
  return {nonzero_ratios == 0 && off_diagonal == 0 && empty_diagonal == 0,
          fmt::format("{} norm-based ratios, {} nonzero; {} nonzero off-diagonal cells; {} maps missing a diagonal",
                      ratios, nonzero_ratios, off_diagonal, empty_diagonal)};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"decomposition-exactness", decomposition_exactness},
      {"ln-distributive-law", distributive_law},
      {"attnres-w-is-half-attn-w", residual_weight_identity},
      {"integrated-map-identity", integrated_map_identity},
      {"expansion-rate-oracle", expansion_rate_oracle},
      {"streaming-vs-materialized", streaming_vs_materialized},
      {"zero-value-map-degenerate", degenerate_value_map},
  };
  int failures = 0;
  for (const auto& [name, check] : criteria) {
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, fmt::format("threw: {}", e.what())};
    }
    fmt::print("{}  {:<28} {}\n", o.passed ? "PASS" : "FAIL", name, o.detail);
    if (!o.passed) ++failures;
  }
  fmt::print("{} of {} acceptance criteria passed\n", criteria.size() - static_cast<std::size_t>(failures),
             criteria.size());
  return failures == 0 ? 0 : 1;
}
