#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <vector>

#include "attnscope/corpus.hpp"
#include "attnscope/decomposition.hpp"
#include "attnscope/metrics.hpp"
#include "attnscope/model.hpp"

namespace attnscope {

inline constexpr const char* kToleranceEnvVar = "ATTNSCOPE_TOLERANCE";

/// Everything one CLI invocation needs.
struct RunManifest {
  std::filesystem::path model_path;
  std::filesystem::path corpus_path;
  std::filesystem::path activations_path;
  std::filesystem::path out_dir = ".";
  std::uint64_t seed = 0;
  MaskingOptions masking;  // seed field ignored; see sequence_seed
  std::vector<Method> methods{kAllMethods.begin(), kAllMethods.end()};
  int threads = 1;
  MapNormalization normalize = MapNormalization::Raw;
  double tolerance = kDefaultReconstructionTolerance;

  struct Needs {
    bool corpus = false;
    bool activations = false;
  };
  /// Throws Error(Io) for a missing input, Error(InvalidArgument) otherwise.
  void validate(Needs needs) const;
};

/// Parses ATTNSCOPE_TOLERANCE; returns fallback when unset. Throws
/// InvalidArgument for a non-positive or unparsable value.
double tolerance_from_env(double fallback);

/// Masking seed of the sequence at `index`: splitmix64(seed + index).
std::uint64_t sequence_seed(std::uint64_t seed, std::size_t index);

struct SequenceAnalysis {
  TokenizedSequence sequence;  // after masking
  std::vector<MixingRatioRecord> records;
  std::map<Method, std::size_t> zero_norm_cases;
  double max_residual = 0;
};

SequenceAnalysis analyze_sequence(const Model& model, const TokenizedSequence& seq, std::span<const Method> methods,
                                  double tolerance);

struct AnalysisRun {
  std::vector<SequenceAnalysis> sequences;
  MixingRatioTable table;
  std::map<Method, std::size_t> zero_norm_cases;
  double max_residual = 0;
};

/// Masks each sequence with its own seed, analyzes them on `threads` workers,
/// then merges in corpus order so the result does not depend on scheduling.
AnalysisRun run_analysis(const Model& model, const std::vector<TokenizedSequence>& corpus,
                         const RunManifest& manifest);

struct SpearmanResult {
  std::optional<double> rho;
  std::size_t pairs = 0;
};

/// Pools every (token, layer) record of the run for one method.
SpearmanResult frequency_correlation(const AnalysisRun& run, Method method, bool exclude_special);

/// Invariant checks on a checkpoint with seeded random probe sequences.
struct VerifyCheck {
  std::string name;
  double max_residual = 0;
  double tolerance = 0;
  bool passed() const { return max_residual <= tolerance; }
};

std::vector<VerifyCheck> verify_model(const Model& model, std::uint64_t seed, double reconstruction_tolerance);

}  // namespace attnscope
