#pragma once

#include <cstdint>
#include <filesystem>
#include <ostream>
#include <optional>

#include "attnscope/analysis.hpp"
#include "attnscope/model_io.hpp"

namespace attnscope {

// Exit statuses shared by every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitInputError = 1;
inline constexpr int kExitInvariantFailure = 2;

/// Where a command writes its human-readable report and diagnostics.
struct Console {
  std::ostream& out;
  std::ostream& err;
};

/// ratios.csv, summary.json, per_layer.csv and spearman.json in out_dir.
int cmd_analyze(const RunManifest& manifest, Console console);

/// Invariant checks on the checkpoint; prints one line per check.
int cmd_verify(const RunManifest& manifest, Console console);

/// expansion.csv in out_dir.
int cmd_expansion(const RunManifest& manifest, Console console);

/// heatmap_L{layer}.csv (AttnResLn-n scope) and heatmap_L{layer}_attn_n.csv
/// (Attn-n scope) for one corpus sequence, masked exactly as analyze masks it.
/// Without a layer, every layer is written.
int cmd_heatmap(const RunManifest& manifest, std::size_t sequence_index, std::optional<int> layer,
                Console console);

/// Compares the forward pass with exported reference activations.
int cmd_parity(const RunManifest& manifest, double tolerance, Console console);

struct SynthOptions {
  int hidden_dim = 64;
  int num_heads = 4;
  int num_layers = 2;
  int vocab_size = 64;
  int max_positions = 128;
  std::size_t sequences = 3;
  std::size_t min_length = 8;
  std::size_t max_length = 16;
  std::uint64_t seed = 0;
  DType dtype = DType::F32;
  std::filesystem::path model_path;
  std::filesystem::path corpus_path;
  std::filesystem::path activations_path;  // optional
};

/// Writes a random model, a matching corpus and optionally its activations.
int cmd_synth(const SynthOptions& options, Console console);

/// ReconstructionFailure is an invariant failure, everything else an input error.
int exit_code_for(const std::exception& e) noexcept;

/// Runs body, reporting any exception on console.err with its exit status.
template <typename Body>
int guarded(Console console, Body&& body) {
  try {
    return body();
  } catch (const std::exception& e) {
    console.err << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
}

}  // namespace attnscope
