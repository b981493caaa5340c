#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "attnscope/commands.hpp"
#include "attnscope/error.hpp"

using namespace attnscope;

namespace {

struct ManifestFlags {
  RunManifest manifest;
  std::vector<std::string> methods;
  std::string normalize = "raw";
  std::optional<double> tolerance;

  void add_model(CLI::App* cmd) {
    cmd->add_option("--model", manifest.model_path, "ABLK1 model file")->required();
    cmd->add_option("--seed", manifest.seed, "RNG seed");
    cmd->add_option("--tolerance", tolerance,
                    std::string("reconstruction tolerance (overrides ") + kToleranceEnvVar + ")");
  }

  void add_corpus(CLI::App* cmd) {
    cmd->add_option("--corpus", manifest.corpus_path, "JSON-lines corpus")->required();
    cmd->add_option("--mask-select", manifest.masking.select_fraction, "fraction of tokens selected for masking")
        ->capture_default_str();
    cmd->add_option("--mask-prob", manifest.masking.mask_fraction, "probability a selected token becomes MASK")
        ->capture_default_str();
  }

  void add_out(CLI::App* cmd) { cmd->add_option("--out", manifest.out_dir, "output directory")->capture_default_str(); }

  // Resolves list-valued and environment-dependent fields after parsing.
  RunManifest resolve() {
    if (!methods.empty()) {
      manifest.methods.clear();
      for (const auto& m : methods) manifest.methods.push_back(parse_method(m));
    }
    manifest.normalize = normalize == "max" ? MapNormalization::PerMapMax : MapNormalization::Raw;
    manifest.tolerance = tolerance ? *tolerance : tolerance_from_env(kDefaultReconstructionTolerance);
    return manifest;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Attention-block mixing analysis for post-LN encoders"};
  app.require_subcommand(1);
  Console console{std::cout, std::cerr};

  ManifestFlags analyze_flags;
  auto* analyze = app.add_subcommand("analyze", "mixing ratios for every token, layer and method");
  analyze_flags.add_model(analyze);
  analyze_flags.add_corpus(analyze);
  analyze_flags.add_out(analyze);
  analyze->add_option("--methods", analyze_flags.methods, "comma-separated subset of ATTN_W,ATTN_N,ATTNRES_W,"
                                                          "ATTNRES_N,ATTNRESLN_N")
      ->delimiter(',');
  analyze->add_option("--threads", analyze_flags.manifest.threads, "worker threads")->capture_default_str();

  ManifestFlags verify_flags;
  auto* verify = app.add_subcommand("verify", "invariant checks on a checkpoint");
  verify_flags.add_model(verify);

  ManifestFlags expansion_flags;
  auto* expansion = app.add_subcommand("expansion", "per-layer expansion rate of the value/output map");
  expansion_flags.add_model(expansion);
  expansion_flags.add_out(expansion);

  ManifestFlags heatmap_flags;
  std::size_t sequence_index = 0;
  std::optional<int> layer;
  auto* heatmap = app.add_subcommand("heatmap", "token-by-token contribution matrices");
  heatmap_flags.add_model(heatmap);
  heatmap_flags.add_corpus(heatmap);
  heatmap_flags.add_out(heatmap);
  heatmap->add_option("--sequence", sequence_index, "corpus index (0-based)")->capture_default_str();
  heatmap->add_option("--layer", layer, "layer index (0-based); all layers when omitted");
  heatmap->add_option("--normalize", heatmap_flags.normalize, "raw or max (divide by the map maximum)")
      ->check(CLI::IsMember({"raw", "max"}))
      ->capture_default_str();

  ManifestFlags parity_flags;
  double parity_tolerance = 1e-3;
  auto* parity = app.add_subcommand("parity", "compare the forward pass with reference activations");
  parity_flags.add_model(parity);
  parity->add_option("--activations", parity_flags.manifest.activations_path, "reference activation file")
      ->required();
  parity->add_option("--max-diff", parity_tolerance, "largest accepted absolute difference")->capture_default_str();

  SynthOptions synth_options;
  std::string synth_dtype = "f32";
  auto* synth = app.add_subcommand("synth", "write a random model and corpus");
  synth->add_option("--model", synth_options.model_path, "output model file")->required();
  synth->add_option("--corpus", synth_options.corpus_path, "output corpus file")->required();
  synth->add_option("--activations", synth_options.activations_path, "also write reference activations");
  synth->add_option("--hidden", synth_options.hidden_dim)->capture_default_str();
  synth->add_option("--heads", synth_options.num_heads)->capture_default_str();
  synth->add_option("--layers", synth_options.num_layers)->capture_default_str();
  synth->add_option("--vocab", synth_options.vocab_size)->capture_default_str();
  synth->add_option("--max-positions", synth_options.max_positions)->capture_default_str();
  synth->add_option("--sequences", synth_options.sequences)->capture_default_str();
  synth->add_option("--min-length", synth_options.min_length)->capture_default_str();
  synth->add_option("--max-length", synth_options.max_length)->capture_default_str();
  synth->add_option("--seed", synth_options.seed)->capture_default_str();
  synth->add_option("--dtype", synth_dtype)->check(CLI::IsMember({"f32", "f64"}))->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitInputError;
  }

  auto run = [&](ManifestFlags& flags, auto&& command) {
    std::optional<RunManifest> manifest;
    const int status = guarded(console, [&] {
      manifest = flags.resolve();
      return kExitOk;
    });
    return manifest ? command(*manifest) : status;
  };

  if (analyze->parsed()) return run(analyze_flags, [&](const RunManifest& m) { return cmd_analyze(m, console); });
  if (verify->parsed()) return run(verify_flags, [&](const RunManifest& m) { return cmd_verify(m, console); });
  if (expansion->parsed())
    return run(expansion_flags, [&](const RunManifest& m) { return cmd_expansion(m, console); });
  if (heatmap->parsed())
    return run(heatmap_flags,
               [&](const RunManifest& m) { return cmd_heatmap(m, sequence_index, layer, console); });
  if (parity->parsed())
    return run(parity_flags, [&](const RunManifest& m) { return cmd_parity(m, parity_tolerance, console); });
  synth_options.dtype = synth_dtype == "f64" ? DType::F64 : DType::F32;
  return cmd_synth(synth_options, console);
}
