#include "attnscope/commands.hpp"

#include <fmt/format.h>
#include <fmt/ostream.h>

#include <algorithm>
#include <fstream>

#include "attnscope/corpus.hpp"
#include "attnscope/encoder.hpp"
#include "attnscope/error.hpp"
#include "attnscope/report.hpp"
#include "attnscope/synthetic.hpp"

namespace attnscope {

namespace {

void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir))
    throw Error(ErrorCode::Io, fmt::format("cannot create output directory {}", dir.string()));
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, fmt::format("cannot write {}", path.string()));
  out << j.dump(2) << '\n';
}

std::string percent(const RatioStats* s) { return s ? fmt::format("{:.1f}", 100.0 * s->mean()) : "-"; }

void print_summary(const AnalysisRun& run, const RunManifest& manifest, std::ostream& out) {
  fmt::print(out, "{:<12} {:>8} {:>8} {:>8} {:>8} {:>8}\n", "method", "overall", "NORMAL", "MASK", "CLS", "SEP");
  for (Method m : manifest.methods) {
    fmt::print(out, "{:<12} {:>8} {:>8} {:>8} {:>8} {:>8}\n", method_label(m),
               percent(run.table.find(m, std::nullopt, std::nullopt)),
               percent(run.table.find(m, std::nullopt, TokenCategory::Normal)),
               percent(run.table.find(m, std::nullopt, TokenCategory::Mask)),
               percent(run.table.find(m, std::nullopt, TokenCategory::Cls)),
               percent(run.table.find(m, std::nullopt, TokenCategory::Sep)));
  }
  fmt::print(out, "max reconstruction residual {:.3e}\n", run.max_residual);
}

TokenizedSequence masked_sequence(const std::vector<TokenizedSequence>& corpus, std::size_t index,
                                  const RunManifest& manifest, const SpecialTokens& special) {
  MaskingOptions masking = manifest.masking;
  masking.seed = sequence_seed(manifest.seed, index);
  return apply_masking(corpus[index], masking, special);
}

}  // namespace

int exit_code_for(const std::exception& e) noexcept {
  if (const auto* err = dynamic_cast<const Error*>(&e); err && err->code() == ErrorCode::ReconstructionFailure)
    return kExitInvariantFailure;
  return kExitInputError;
}

int cmd_analyze(const RunManifest& manifest, Console console) {
  return guarded(console, [&] {
    manifest.validate({.corpus = true});
    const Model model = load_model(manifest.model_path);
    const auto corpus = load_corpus(manifest.corpus_path, model.config);
    if (corpus.empty()) throw Error(ErrorCode::EmptyInput, "corpus has no sequences");
    const AnalysisRun run = run_analysis(model, corpus, manifest);

    ensure_dir(manifest.out_dir);
    write_ratios_csv(manifest.out_dir / "ratios.csv", run);
    write_per_layer_csv(manifest.out_dir / "per_layer.csv", run.table);
    write_json(manifest.out_dir / "summary.json", summary_json(run, manifest));
    write_json(manifest.out_dir / "spearman.json", spearman_json(run, manifest.methods));
    print_summary(run, manifest, console.out);
    return kExitOk;
  });
}

int cmd_verify(const RunManifest& manifest, Console console) {
  return guarded(console, [&] {
    manifest.validate({});
    const Model model = load_model(manifest.model_path);
    const auto checks = verify_model(model, manifest.seed, manifest.tolerance);
    bool ok = true;
    for (const auto& c : checks) {
      fmt::print(console.out, "{:<28} max residual {:.3e}  tolerance {:.0e}  {}\n", c.name, c.max_residual,
                 c.tolerance, c.passed() ? "ok" : "FAILED");
      if (!c.passed()) {
        ok = false;
        fmt::print(console.err, "invariant {} failed: {:.3e} > {:.0e}\n", c.name, c.max_residual, c.tolerance);
      }
    }
    return ok ? kExitOk : kExitInvariantFailure;
  });
}

int cmd_expansion(const RunManifest& manifest, Console console) {
  return guarded(console, [&] {
    manifest.validate({});
    const Model model = load_model(manifest.model_path);
    std::vector<ExpansionRateRecord> records;
    for (std::size_t k = 0; k < model.layers.size(); ++k)
      records.push_back(expansion_rate(model.layers[k], static_cast<int>(k)));
    ensure_dir(manifest.out_dir);
    write_expansion_csv(manifest.out_dir / "expansion.csv", records);
    for (const auto& r : records)
      fmt::print(console.out, "layer {:>2}  rate {:.4f}  rate/sqrt(d) {:.4f}\n", r.layer_index, r.rate,
                 r.rate_sqrt_d);
    return kExitOk;
  });
}

int cmd_heatmap(const RunManifest& manifest, std::size_t sequence_index, std::optional<int> layer,
                Console console) {
  return guarded(console, [&] {
    manifest.validate({.corpus = true});
    const Model model = load_model(manifest.model_path);
    const auto corpus = load_corpus(manifest.corpus_path, model.config);
    if (sequence_index >= corpus.size())
      throw Error(ErrorCode::IndexOutOfRange,
                  fmt::format("sequence {} but the corpus has {}", sequence_index, corpus.size()));
    const int num_layers = model.config.num_layers;
    if (layer && (*layer < 0 || *layer >= num_layers))
      throw Error(ErrorCode::IndexOutOfRange, fmt::format("layer {} but the model has {}", *layer, num_layers));

    const TokenizedSequence seq = masked_sequence(corpus, sequence_index, manifest, model.config.special);
    const ForwardResult forward = full_forward(seq, model);
    const auto labels = token_labels(seq);
    ensure_dir(manifest.out_dir);
    for (int k = 0; k < num_layers; ++k) {
      if (layer && k != *layer) continue;
      const auto& trace = forward.layers[static_cast<std::size_t>(k)];
      const auto record =
          decompose_block(trace, model.layers[static_cast<std::size_t>(k)], model.config, {.tolerance = manifest.tolerance});
      write_heatmap_csv(manifest.out_dir / fmt::format("heatmap_L{}.csv", k),
                        {labels, contribution_map(record, manifest.normalize, MapScope::AttnResLnN)});
      write_heatmap_csv(manifest.out_dir / fmt::format("heatmap_L{}_attn_n.csv", k),
                        {labels, contribution_map(record, manifest.normalize, MapScope::AttnN)});
      fmt::print(console.out, "wrote heatmap_L{0}.csv and heatmap_L{0}_attn_n.csv\n", k);
    }
    return kExitOk;
  });
}

int cmd_parity(const RunManifest& manifest, double tolerance, Console console) {
  return guarded(console, [&] {
    manifest.validate({.activations = true});
    const Model model = load_model(manifest.model_path);
    const auto refs = load_reference_activations(manifest.activations_path);
    auto diff = [](const Matrix& a, const Matrix& b) {
      if (a.rows() != b.rows() || a.cols() != b.cols())
        throw Error(ErrorCode::ShapeMismatch, "reference activation shape differs from the forward pass");
      return a.rows() == 0 ? 0.0 : (a - b).cwiseAbs().maxCoeff();
    };
    double worst = 0;
    for (std::size_t s = 0; s < refs.size(); ++s) {
      const auto& ref = refs[s];
      if (ref.layer_outputs.size() != model.layers.size())
        throw Error(ErrorCode::ShapeMismatch,
                    fmt::format("sequence {} has {} layers, model has {}", s, ref.layer_outputs.size(),
                                model.layers.size()));
      Matrix x = embed(ref.token_ids, ref.segment_ids, model.embeddings, model.config);
      double seq_worst = diff(x, ref.embeddings);
      for (std::size_t k = 0; k < model.layers.size(); ++k) {
        const LayerTrace trace = layer_forward(x, model.layers[k], model.config, static_cast<int>(k));
        seq_worst = std::max({seq_worst, diff(trace.block_output, ref.block_outputs[k]),
                              diff(trace.layer_output, ref.layer_outputs[k])});
        x = trace.layer_output;
      }
      fmt::print(console.out, "sequence {:>3}  max abs difference {:.3e}\n", s, seq_worst);
      worst = std::max(worst, seq_worst);
    }
    if (worst > tolerance) {
      fmt::print(console.err, "forward parity failed: {:.3e} > {:.0e}\n", worst, tolerance);
      return kExitInvariantFailure;
    }
    return kExitOk;
  });
}

int cmd_synth(const SynthOptions& options, Console console) {
  return guarded(console, [&] {
    if (options.model_path.empty() || options.corpus_path.empty())
      throw Error(ErrorCode::InvalidArgument, "synth needs a model path and a corpus path");
    const ModelConfig cfg = synthetic_config(options.hidden_dim, options.num_heads, options.num_layers,
                                             options.vocab_size, options.max_positions);
    const Model model = random_model(cfg, options.seed);
    const auto corpus =
        random_corpus(cfg, options.sequences, options.min_length, options.max_length, options.seed + 1);
    save_model(options.model_path, model, options.dtype);
    save_corpus(options.corpus_path, corpus);
    if (!options.activations_path.empty()) {
      // Written from the model as stored, so a parity run sees identical weights.
      const Model stored = load_model(options.model_path);
      std::vector<ReferenceSequence> refs;
      for (const auto& seq : corpus) {
        const ForwardResult fwd = full_forward(seq, stored);
        ReferenceSequence ref{seq.token_ids, seq.segment_ids, fwd.embeddings, {}, {}};
        for (const auto& t : fwd.layers) {
          ref.block_outputs.push_back(t.block_output);
          ref.layer_outputs.push_back(t.layer_output);
        }
        refs.push_back(std::move(ref));
      }
      save_reference_activations(options.activations_path, refs, options.dtype);
    }
    fmt::print(console.out, "wrote {} ({} layers, d={}) and {} sequences\n", options.model_path.string(),
               cfg.num_layers, cfg.hidden_dim, corpus.size());
    return kExitOk;
  });
}

}  // namespace attnscope
