#include "attnscope/analysis.hpp"

#include <fmt/format.h>

#include <atomic>
#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <limits>
#include <mutex>
#include <random>
#include <thread>

#include "attnscope/encoder.hpp"
#include "attnscope/error.hpp"

namespace attnscope {

void RunManifest::validate(Needs needs) const {
  auto require_file = [](const std::filesystem::path& p, const char* what) {
    if (p.empty()) throw Error(ErrorCode::InvalidArgument, fmt::format("no {} given", what));
    if (!std::filesystem::is_regular_file(p))
      throw Error(ErrorCode::Io, fmt::format("{} {} does not exist", what, p.string()));
  };
  require_file(model_path, "model");
  if (needs.corpus) require_file(corpus_path, "corpus");
  if (needs.activations) require_file(activations_path, "activation file");
  if (methods.empty()) throw Error(ErrorCode::InvalidArgument, "no methods selected");
  if (threads < 1) throw Error(ErrorCode::InvalidArgument, "threads must be >= 1");
  if (!(masking.select_fraction >= 0 && masking.select_fraction <= 1 && masking.mask_fraction >= 0 &&
        masking.mask_fraction <= 1))
    throw Error(ErrorCode::InvalidArgument, "masking fractions must lie in [0, 1]");
  if (!(tolerance > 0)) throw Error(ErrorCode::InvalidArgument, "tolerance must be positive");
}

double tolerance_from_env(double fallback) {
  const char* raw = std::getenv(kToleranceEnvVar);
  if (raw == nullptr || *raw == '\0') return fallback;
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(raw, &end);
  if (errno != 0 || end == raw || *end != '\0' || !(v > 0) || !std::isfinite(v))
    throw Error(ErrorCode::InvalidArgument, fmt::format("{}='{}' is not a positive number", kToleranceEnvVar, raw));
  return v;
}

std::uint64_t sequence_seed(std::uint64_t seed, std::size_t index) {
  std::uint64_t z = seed + static_cast<std::uint64_t>(index) * 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

SequenceAnalysis analyze_sequence(const Model& model, const TokenizedSequence& seq, std::span<const Method> methods,
                                  double tolerance) {
  SequenceAnalysis out;
  out.sequence = seq;
  const ForwardResult forward = full_forward(seq, model);
  for (std::size_t k = 0; k < forward.layers.size(); ++k) {
    const LayerTrace& trace = forward.layers[k];
    const DecompositionRecord rec = decompose_block(trace, model.layers[k], model.config, {.tolerance = tolerance});
    out.max_residual = std::max(out.max_residual, rec.exactness_residual);
    auto ratios = layer_ratios(trace, rec, seq, methods);
    for (Method m : methods) {
      for (const auto& t : rec.tokens) {
        const bool zero = (m == Method::AttnN && is_zero_norm_case(t.pre_ln_mixing_norm, t.attn_self_norm)) ||
                          (m == Method::AttnResN && is_zero_norm_case(t.pre_ln_mixing_norm, t.pre_ln_preserving_norm)) ||
                          (m == Method::AttnResLnN && is_zero_norm_case(t.mixing_norm, t.preserving_norm));
        if (zero) ++out.zero_norm_cases[m];
      }
    }
    out.records.insert(out.records.end(), ratios.begin(), ratios.end());
  }
  return out;
}

AnalysisRun run_analysis(const Model& model, const std::vector<TokenizedSequence>& corpus,
                         const RunManifest& manifest) {
  AnalysisRun run;
  run.sequences.resize(corpus.size());

  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t s = next++; s < corpus.size(); s = next++) {
      try {
        MaskingOptions masking = manifest.masking;
        masking.seed = sequence_seed(manifest.seed, s);
        const TokenizedSequence masked = apply_masking(corpus[s], masking, model.config.special);
        run.sequences[s] = analyze_sequence(model, masked, manifest.methods, manifest.tolerance);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = corpus.size();
      }
    }
  };

  const auto workers = static_cast<std::size_t>(std::max(1, manifest.threads));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < std::min(workers, corpus.size()); ++t) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);

  for (const auto& seq : run.sequences) {
    for (const auto& r : seq.records) run.table.add(r);
    for (const auto& [m, count] : seq.zero_norm_cases) run.zero_norm_cases[m] += count;
    run.max_residual = std::max(run.max_residual, seq.max_residual);
  }
  return run;
}

SpearmanResult frequency_correlation(const AnalysisRun& run, Method method, bool exclude_special) {
  std::vector<RankedRatio> pairs;
  for (const auto& seq : run.sequences)
    for (const auto& r : seq.records)
      if (r.method == method) pairs.push_back({r.frequency_rank, r.ratio, r.category});

  SpearmanResult out;
  for (const auto& p : pairs)
    if (p.frequency_rank && !(exclude_special && is_special(p.category))) ++out.pairs;
  try {
    out.rho = spearman_rho(pairs, exclude_special);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::InsufficientData) throw;
  }
  return out;
}

std::vector<VerifyCheck> verify_model(const Model& model, std::uint64_t seed, double reconstruction_tolerance) {
  const ModelConfig& cfg = model.config;
  std::mt19937_64 engine(seed);
  std::normal_distribution<double> normal;

  VerifyCheck row_sums{"attention-row-sum", 0, 1e-9};
  VerifyCheck exactness{"decomposition-exactness", 0, reconstruction_tolerance};
  VerifyCheck streaming{"streaming-vs-materialized", 0, 1e-10};
  VerifyCheck distributive{"ln-distributive-law", 0, 1e-10};
  VerifyCheck integrated{"integrated-f", 0, 1e-10};

  std::vector<std::int64_t> normal_ids;
  for (std::int64_t id = 0; id < cfg.vocab_size; ++id)
    if (category_of(id, cfg.special) == TokenCategory::Normal && id != cfg.special.pad) normal_ids.push_back(id);
  if (normal_ids.empty()) throw Error(ErrorCode::InvalidConfig, "vocabulary has no normal tokens");
  std::uniform_int_distribution<std::size_t> pick(0, normal_ids.size() - 1);

  constexpr int kProbeSequences = 3;
  const auto n = static_cast<std::size_t>(std::min(16, cfg.max_positions));
  for (int probe = 0; probe < kProbeSequences; ++probe) {
    std::vector<std::int64_t> ids;
    for (std::size_t i = 0; i < n; ++i) ids.push_back(normal_ids[pick(engine)]);
    if (n >= 2) {
      ids.front() = cfg.special.cls;
      ids.back() = cfg.special.sep;
    }
    const std::vector<int> segments(n, 0);
    Matrix x = embed(ids, segments, model.embeddings, cfg);
    for (std::size_t k = 0; k < model.layers.size(); ++k) {
      const LayerWeights& w = model.layers[k];
      const LayerTrace trace = layer_forward(x, w, cfg, static_cast<int>(k));
      for (const auto& a : trace.attention)
        row_sums.max_residual =
            std::max(row_sums.max_residual, (a.rowwise().sum().array() - 1.0).abs().maxCoeff());

      const double inf = std::numeric_limits<double>::infinity();
      const auto fast = decompose_block(trace, w, cfg, {.tolerance = inf});
      exactness.max_residual = std::max(exactness.max_residual, fast.exactness_residual);
      if (probe == 0) {
        const auto slow = decompose_block(trace, w, cfg, {.tolerance = inf, .materialize = true});
        streaming.max_residual =
            std::max(streaming.max_residual, (fast.contributions - slow.contributions).cwiseAbs().maxCoeff());
      }
      x = trace.layer_output;
    }
  }

  for (std::size_t k = 0; k < model.layers.size(); ++k) {
    const LayerWeights& w = model.layers[k];
    const AffineMap f = integrated_f(w);
    for (int draw = 0; draw < 8; ++draw) {
      std::vector<RowVector> parts;
      RowVector total = RowVector::Zero(cfg.hidden_dim);
      for (int p = 0; p < 6; ++p) {
        RowVector v(cfg.hidden_dim);
        for (auto& e : v) e = normal(engine);
        total += v;
        parts.push_back(std::move(v));
      }
      const auto split = ln_decompose(parts, w.ln_gamma, w.ln_beta, cfg.ln_epsilon);
      RowVector rebuilt = split.beta;
      for (const auto& t : split.terms) rebuilt += t;
      distributive.max_residual = std::max(
          distributive.max_residual,
          (rebuilt - layer_norm(total, w.ln_gamma, w.ln_beta, cfg.ln_epsilon)).cwiseAbs().maxCoeff());

      const RowVector& probe = parts.front();
      RowVector summed = RowVector::Zero(cfg.hidden_dim);
      for (int h = 0; h < w.num_heads; ++h) summed += f_head(probe, w, h);
      integrated.max_residual = std::max(integrated.max_residual, (f.apply(probe) - summed).cwiseAbs().maxCoeff());
    }
  }
  return {row_sums, exactness, streaming, distributive, integrated};
}

}  // namespace attnscope
