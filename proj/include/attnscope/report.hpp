#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "attnscope/analysis.hpp"
#include "attnscope/metrics.hpp"

namespace attnscope {

// Emitted files use a header row, '.' decimals and 6 significant digits.
// Ratios leave the library in [0, 1] and are written as percentages.

std::string format_number(double v);

// ratios.csv: sequence,layer,token,token_id,category,frequency_rank,method,ratio_percent
struct RatioRow {
  std::size_t sequence = 0;
  int layer = 0;
  int token = 0;
  std::int64_t token_id = 0;
  TokenCategory category = TokenCategory::Normal;
  std::optional<std::int64_t> frequency_rank;
  Method method = Method::AttnResLnN;
  double ratio_percent = 0;
};
void write_ratios_csv(const std::filesystem::path& path, const AnalysisRun& run);
std::vector<RatioRow> read_ratios_csv(const std::filesystem::path& path);

// per_layer.csv: method,layer,category,mean,max,min,count (category OVERALL
// aggregates all token types of the layer)
struct LayerRow {
  Method method = Method::AttnResLnN;
  int layer = 0;
  std::optional<TokenCategory> category;
  double mean = 0, max = 0, min = 0;
  std::size_t count = 0;
};
void write_per_layer_csv(const std::filesystem::path& path, const MixingRatioTable& table);
std::vector<LayerRow> read_per_layer_csv(const std::filesystem::path& path);

nlohmann::json summary_json(const AnalysisRun& run, const RunManifest& manifest);
nlohmann::json spearman_json(const AnalysisRun& run, std::span<const Method> methods);

// heatmap CSV: first row "target\source" then source labels; each further row
// is a target label followed by n values.
struct Heatmap {
  std::vector<std::string> labels;
  Matrix values;
};
void write_heatmap_csv(const std::filesystem::path& path, const Heatmap& map);
Heatmap read_heatmap_csv(const std::filesystem::path& path);
std::vector<std::string> token_labels(const TokenizedSequence& seq);

// expansion.csv: layer,rate,rate_sqrt_d,sum_sq_singulars,dimension followed by
// summary rows whose layer column is "mean", "max" or "min".
struct ExpansionRow {
  std::string layer;
  double rate = 0, rate_sqrt_d = 0, sum_sq_singulars = 0;
  int dimension = 0;
};
void write_expansion_csv(const std::filesystem::path& path, const std::vector<ExpansionRateRecord>& records);
std::vector<ExpansionRow> read_expansion_csv(const std::filesystem::path& path);

}  // namespace attnscope
