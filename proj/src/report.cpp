#include "attnscope/report.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <fstream>
#include <sstream>

#include "attnscope/error.hpp"

namespace attnscope {

namespace {

constexpr std::string_view kRatiosHeader = "sequence,layer,token,token_id,category,frequency_rank,method,ratio_percent";
constexpr std::string_view kPerLayerHeader = "method,layer,category,mean,max,min,count";
constexpr std::string_view kExpansionHeader = "layer,rate,rate_sqrt_d,sum_sq_singulars,dimension";
constexpr std::string_view kHeatmapCorner = "target\\source";
constexpr std::string_view kOverall = "OVERALL";

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, fmt::format("cannot write {}", path.string()));
  return out;
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> fields;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

class CsvReader {
 public:
  CsvReader(const std::filesystem::path& path, std::optional<std::string_view> header) : path_(path), in_(path) {
    if (!in_) throw Error(ErrorCode::Io, fmt::format("cannot open {}", path.string()));
    if (!std::getline(in_, header_line_)) fail("missing header row");
    if (header && header_line_ != *header) fail(fmt::format("unexpected header '{}'", header_line_));
  }

  const std::string& header_line() const { return header_line_; }

  std::optional<std::vector<std::string>> next(std::size_t expected_fields) {
    std::string line;
    if (!std::getline(in_, line)) return std::nullopt;
    ++line_;
    auto fields = split(line);
    if (expected_fields != 0 && fields.size() != expected_fields)
      fail(fmt::format("{} fields, expected {}", fields.size(), expected_fields));
    return fields;
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw Error(ErrorCode::MalformedFile, fmt::format("{} line {}: {}", path_.string(), line_ + 1, what));
  }

  double number(const std::string& s) const {
    try {
      std::size_t used = 0;
      const double v = std::stod(s, &used);
      if (used != s.size()) fail(fmt::format("bad number '{}'", s));
      return v;
    } catch (const std::logic_error&) {
      fail(fmt::format("bad number '{}'", s));
    }
  }

  std::int64_t integer(const std::string& s) const {
    try {
      std::size_t used = 0;
      const long long v = std::stoll(s, &used);
      if (used != s.size()) fail(fmt::format("bad integer '{}'", s));
      return v;
    } catch (const std::logic_error&) {
      fail(fmt::format("bad integer '{}'", s));
    }
  }

 private:
  std::filesystem::path path_;
  std::ifstream in_;
  std::string header_line_;
  std::size_t line_ = 0;
};

nlohmann::json stats_json(const RatioStats& s) {
  return {{"mean", 100.0 * s.mean()}, {"max", 100.0 * s.max}, {"min", 100.0 * s.min}, {"count", s.count}};
}

constexpr std::array<TokenCategory, 4> kCategories = {TokenCategory::Normal, TokenCategory::Mask, TokenCategory::Cls,
                                                      TokenCategory::Sep};

nlohmann::json cell_group_json(const MixingRatioTable& table, Method m, std::optional<int> layer) {
  nlohmann::json j;
  if (const auto* s = table.find(m, layer, std::nullopt)) j["overall"] = stats_json(*s);
  nlohmann::json cats = nlohmann::json::object();
  for (auto c : kCategories)
    if (const auto* s = table.find(m, layer, c)) cats[std::string(to_string(c))] = stats_json(*s);
  j["categories"] = cats;
  return j;
}

}  // namespace

std::string format_number(double v) { return fmt::format("{:.6g}", v); }

void write_ratios_csv(const std::filesystem::path& path, const AnalysisRun& run) {
  auto out = open_out(path);
  out << kRatiosHeader << '\n';
  for (std::size_t s = 0; s < run.sequences.size(); ++s) {
    const auto& seq = run.sequences[s];
    for (const auto& r : seq.records) {
      out << s << ',' << r.layer_index << ',' << r.token_index << ','
          << seq.sequence.token_ids[static_cast<std::size_t>(r.token_index)] << ',' << to_string(r.category) << ','
          << (r.frequency_rank ? std::to_string(*r.frequency_rank) : std::string()) << ',' << method_id(r.method)
          << ',' << format_number(100.0 * r.ratio) << '\n';
    }
  }
}

std::vector<RatioRow> read_ratios_csv(const std::filesystem::path& path) {
  CsvReader csv(path, kRatiosHeader);
  std::vector<RatioRow> rows;
  while (auto f = csv.next(8)) {
    const auto& v = *f;
    RatioRow r;
    try {
      r.sequence = static_cast<std::size_t>(csv.integer(v[0]));
      r.layer = static_cast<int>(csv.integer(v[1]));
      r.token = static_cast<int>(csv.integer(v[2]));
      r.token_id = csv.integer(v[3]);
      r.category = parse_category(v[4]);
      if (!v[5].empty()) r.frequency_rank = csv.integer(v[5]);
      r.method = parse_method(v[6]);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::MalformedFile) throw;
      csv.fail(e.what());
    }
    r.ratio_percent = csv.number(v[7]);
    if (r.ratio_percent < 0 || r.ratio_percent > 100) csv.fail("ratio outside [0, 100]");
    rows.push_back(r);
  }
  return rows;
}

void write_per_layer_csv(const std::filesystem::path& path, const MixingRatioTable& table) {
  auto out = open_out(path);
  out << kPerLayerHeader << '\n';
  for (const auto& [key, stats] : table.cells()) {
    const auto& [method, layer, category] = key;
    if (!layer) continue;
    out << method_id(method) << ',' << *layer << ',' << (category ? to_string(*category) : kOverall) << ','
        << format_number(100.0 * stats.mean()) << ',' << format_number(100.0 * stats.max) << ','
        << format_number(100.0 * stats.min) << ',' << stats.count << '\n';
  }
}

std::vector<LayerRow> read_per_layer_csv(const std::filesystem::path& path) {
  CsvReader csv(path, kPerLayerHeader);
  std::vector<LayerRow> rows;
  while (auto f = csv.next(7)) {
    const auto& v = *f;
    LayerRow r;
    try {
      r.method = parse_method(v[0]);
      if (v[2] != kOverall) r.category = parse_category(v[2]);
    } catch (const Error& e) {
      csv.fail(e.what());
    }
    r.layer = static_cast<int>(csv.integer(v[1]));
    r.mean = csv.number(v[3]);
    r.max = csv.number(v[4]);
    r.min = csv.number(v[5]);
    r.count = static_cast<std::size_t>(csv.integer(v[6]));
    rows.push_back(r);
  }
  return rows;
}

nlohmann::json summary_json(const AnalysisRun& run, const RunManifest& manifest) {
  std::size_t tokens = 0;
  for (const auto& s : run.sequences) tokens += s.sequence.size();

  nlohmann::json methods = nlohmann::json::object();
  for (Method m : run.table.methods()) {
    nlohmann::json j = cell_group_json(run.table, m, std::nullopt);
    j["label"] = std::string(method_label(m));
    nlohmann::json layers = nlohmann::json::array();
    for (int layer : run.table.layers()) {
      nlohmann::json lj = cell_group_json(run.table, m, layer);
      lj["layer"] = layer;
      layers.push_back(std::move(lj));
    }
    j["layers"] = std::move(layers);
    methods[std::string(method_id(m))] = std::move(j);
  }

  nlohmann::json zero = nlohmann::json::object();
  for (const auto& [m, count] : run.zero_norm_cases) zero[std::string(method_id(m))] = count;

  return {
      {"units", "percent"},
      {"sequences", run.sequences.size()},
      {"tokens", tokens},
      {"seed", manifest.seed},
      {"mask_select", manifest.masking.select_fraction},
      {"mask_prob", manifest.masking.mask_fraction},
      {"max_reconstruction_residual", run.max_residual},
      {"zero_norm_cases", zero},
      {"methods", methods},
  };
}

nlohmann::json spearman_json(const AnalysisRun& run, std::span<const Method> methods) {
  auto entry = [](const SpearmanResult& r) {
    return nlohmann::json{{"rho", r.rho ? nlohmann::json(*r.rho) : nlohmann::json(nullptr)}, {"pairs", r.pairs}};
  };
  nlohmann::json out = nlohmann::json::object();
  for (Method m : methods) {
    out[std::string(method_id(m))] = {
        {"all_tokens", entry(frequency_correlation(run, m, false))},
        {"without_special", entry(frequency_correlation(run, m, true))},
    };
  }
  return {
      {"pooling", "all (token, layer) records pooled into one correlation"},
      {"excluded", "positions without a frequency rank (MASK, and CLS/SEP in corpora that carry none)"},
      {"methods", out},
  };
}

std::vector<std::string> token_labels(const TokenizedSequence& seq) {
  std::vector<std::string> labels;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    const auto c = seq.categories[i];
    labels.push_back(c == TokenCategory::Normal ? fmt::format("{}:{}", i, seq.token_ids[i])
                                                : fmt::format("{}:[{}]", i, to_string(c)));
  }
  return labels;
}

void write_heatmap_csv(const std::filesystem::path& path, const Heatmap& map) {
  const auto n = static_cast<Eigen::Index>(map.labels.size());
  if (map.values.rows() != n || map.values.cols() != n)
    throw Error(ErrorCode::ShapeMismatch, "heatmap labels do not match the matrix");
  auto out = open_out(path);
  out << kHeatmapCorner;
  for (const auto& l : map.labels) out << ',' << l;
  out << '\n';
  for (Eigen::Index i = 0; i < n; ++i) {
    out << map.labels[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < n; ++j) out << ',' << format_number(map.values(i, j));
    out << '\n';
  }
}

Heatmap read_heatmap_csv(const std::filesystem::path& path) {
  CsvReader csv(path, std::nullopt);
  auto header = split(csv.header_line());
  if (header.empty() || header.front() != kHeatmapCorner) csv.fail("missing heatmap corner label");
  Heatmap map;
  map.labels.assign(header.begin() + 1, header.end());
  const auto n = map.labels.size();
  map.values.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  std::size_t row = 0;
  while (auto f = csv.next(n + 1)) {
    if (row >= n) csv.fail("more rows than labels");
    if ((*f)[0] != map.labels[row]) csv.fail(fmt::format("row label '{}' does not match column label", (*f)[0]));
    for (std::size_t j = 0; j < n; ++j)
      map.values(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(j)) = csv.number((*f)[j + 1]);
    ++row;
  }
  if (row != n) csv.fail("fewer rows than labels");
  return map;
}

void write_expansion_csv(const std::filesystem::path& path, const std::vector<ExpansionRateRecord>& records) {
  auto out = open_out(path);
  out << kExpansionHeader << '\n';
  for (const auto& r : records)
    out << r.layer_index << ',' << format_number(r.rate) << ',' << format_number(r.rate_sqrt_d) << ','
        << format_number(r.sum_sq_singulars) << ',' << r.dimension << '\n';
  if (records.empty()) return;

  auto summarize = [&](const char* name, auto reduce) {
    out << name << ',' << format_number(reduce(&ExpansionRateRecord::rate)) << ','
        << format_number(reduce(&ExpansionRateRecord::rate_sqrt_d)) << ','
        << format_number(reduce(&ExpansionRateRecord::sum_sq_singulars)) << ',' << records.front().dimension << '\n';
  };
  summarize("mean", [&](double ExpansionRateRecord::*field) {
    double sum = 0;
    for (const auto& r : records) sum += r.*field;
    return sum / static_cast<double>(records.size());
  });
  summarize("max", [&](double ExpansionRateRecord::*field) {
    return (*std::max_element(records.begin(), records.end(), [&](auto& a, auto& b) { return a.*field < b.*field; })).*field;
  });
  summarize("min", [&](double ExpansionRateRecord::*field) {
    return (*std::min_element(records.begin(), records.end(), [&](auto& a, auto& b) { return a.*field < b.*field; })).*field;
  });
}

std::vector<ExpansionRow> read_expansion_csv(const std::filesystem::path& path) {
  CsvReader csv(path, kExpansionHeader);
  std::vector<ExpansionRow> rows;
  while (auto f = csv.next(5)) {
    const auto& v = *f;
    ExpansionRow r;
    r.layer = v[0];
    if (r.layer != "mean" && r.layer != "max" && r.layer != "min") csv.integer(r.layer);
    r.rate = csv.number(v[1]);
    r.rate_sqrt_d = csv.number(v[2]);
    r.sum_sq_singulars = csv.number(v[3]);
    r.dimension = static_cast<int>(csv.integer(v[4]));
    rows.push_back(r);
  }
  return rows;
}

}  // namespace attnscope
