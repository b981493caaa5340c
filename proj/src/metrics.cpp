#include "attnscope/metrics.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "attnscope/error.hpp"

namespace attnscope {

std::string_view method_id(Method m) noexcept {
  switch (m) {
    case Method::AttnW: return "ATTN_W";
    case Method::AttnN: return "ATTN_N";
    case Method::AttnResW: return "ATTNRES_W";
    case Method::AttnResN: return "ATTNRES_N";
    case Method::AttnResLnN: return "ATTNRESLN_N";
  }
  return "ATTNRESLN_N";
}

std::string_view method_label(Method m) noexcept {
  switch (m) {
    case Method::AttnW: return "Attn-w";
    case Method::AttnN: return "Attn-n";
    case Method::AttnResW: return "AttnRes-w";
    case Method::AttnResN: return "AttnRes-n";
    case Method::AttnResLnN: return "AttnResLn-n";
  }
  return "AttnResLn-n";
}

Method parse_method(std::string_view s) {
  std::string key;
  for (char c : s) key.push_back(c == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
  for (Method m : kAllMethods)
    if (key == method_id(m)) return m;
  throw Error(ErrorCode::InvalidArgument, fmt::format("unknown method '{}'", s));
}

namespace {

double context_weight(const Matrix& a, int i) {
  double sum = 0;
  for (Eigen::Index j = 0; j < a.cols(); ++j)
    if (j != i) sum += a(i, j);
  return sum;
}

void check_row_stochastic(const Matrix& a, int i) {
  const double total = a.row(i).sum();
  if (std::abs(total - 1.0) > 1e-9)
    throw Error(ErrorCode::InvalidArgument, fmt::format("attention row {} sums to {}", i, total));
}

void check_token(std::span<const Matrix> attention, int i) {
  if (attention.empty()) throw Error(ErrorCode::EmptyInput, "no attention heads");
  if (i < 0 || i >= attention.front().rows())
    throw Error(ErrorCode::IndexOutOfRange, fmt::format("token {} outside attention matrix", i));
}

}  // namespace

double ratio_attn_w(std::span<const Matrix> attention, int i) {
  check_token(attention, i);
  double sum = 0;
  for (const auto& a : attention) sum += context_weight(a, i);
  return sum / static_cast<double>(attention.size());
}

double ratio_attnres_w(std::span<const Matrix> attention, int i) {
  check_token(attention, i);
  double sum = 0;
  for (const auto& a : attention) {
    check_row_stochastic(a, i);
    // Row i of 0.5 A + 0.5 I; its total 0.5 * 1 + 0.5 is exactly one.
    const double denominator = 0.5 * 1.0 + 0.5;
    sum += 0.5 * context_weight(a, i) / denominator;
  }
  return sum / static_cast<double>(attention.size());
}

bool is_zero_norm_case(double mix, double keep) noexcept { return mix + keep == 0.0; }

double norm_ratio(double mix, double keep) noexcept {
  if (is_zero_norm_case(mix, keep)) return 0.0;
  return mix / (mix + keep);
}

double ratio_attn_n(const TokenDecomposition& t) { return norm_ratio(t.pre_ln_mixing_norm, t.attn_self_norm); }
double ratio_attnres_n(const TokenDecomposition& t) {
  return norm_ratio(t.pre_ln_mixing_norm, t.pre_ln_preserving_norm);
}
double ratio_attnresln_n(const TokenDecomposition& t) { return norm_ratio(t.mixing_norm, t.preserving_norm); }

std::vector<MixingRatioRecord> layer_ratios(const LayerTrace& trace, const DecompositionRecord& record,
                                            const TokenizedSequence& seq, std::span<const Method> methods) {
  std::vector<MixingRatioRecord> out;
  const int n = static_cast<int>(record.size());
  out.reserve(static_cast<std::size_t>(n) * methods.size());
  for (Method m : methods) {
    for (int i = 0; i < n; ++i) {
      const auto& t = record.tokens[static_cast<std::size_t>(i)];
      double r = 0;
      switch (m) {
        case Method::AttnW: r = ratio_attn_w(trace.attention, i); break;
        case Method::AttnN: r = ratio_attn_n(t); break;
        case Method::AttnResW: r = ratio_attnres_w(trace.attention, i); break;
        case Method::AttnResN: r = ratio_attnres_n(t); break;
        case Method::AttnResLnN: r = ratio_attnresln_n(t); break;
      }
      const auto idx = static_cast<std::size_t>(i);
      out.push_back({m, record.layer_index, i, seq.categories[idx], seq.frequency_ranks[idx], r});
    }
  }
  return out;
}

void RatioStats::add(double r) {
  if (count == 0) {
    min = max = r;
  } else {
    min = std::min(min, r);
    max = std::max(max, r);
  }
  sum += r;
  ++count;
}

void RatioStats::merge(const RatioStats& other) {
  if (other.count == 0) return;
  if (count == 0) {
    *this = other;
    return;
  }
  min = std::min(min, other.min);
  max = std::max(max, other.max);
  sum += other.sum;
  count += other.count;
}

void MixingRatioTable::add(const MixingRatioRecord& r) {
  if (!(r.ratio >= 0.0 && r.ratio <= 1.0))
    throw Error(ErrorCode::InvalidArgument, fmt::format("mixing ratio {} outside [0, 1]", r.ratio));
  for (std::optional<int> layer : {std::optional<int>(r.layer_index), std::optional<int>()})
    for (std::optional<TokenCategory> cat : {std::optional<TokenCategory>(r.category), std::optional<TokenCategory>()})
      cells_[{r.method, layer, cat}].add(r.ratio);
}

void MixingRatioTable::merge(const MixingRatioTable& other) {
  for (const auto& [key, stats] : other.cells_) cells_[key].merge(stats);
}

const RatioStats* MixingRatioTable::find(Method m, std::optional<int> layer,
                                         std::optional<TokenCategory> category) const {
  auto it = cells_.find({m, layer, category});
  return it == cells_.end() ? nullptr : &it->second;
}

std::vector<Method> MixingRatioTable::methods() const {
  std::vector<Method> out;
  for (const auto& [key, _] : cells_)
    if (out.empty() || out.back() != std::get<0>(key)) out.push_back(std::get<0>(key));
  return out;
}

std::vector<int> MixingRatioTable::layers() const {
  std::vector<int> out;
  for (const auto& [key, _] : cells_)
    if (const auto& layer = std::get<1>(key)) out.push_back(*layer);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

MixingRatioTable aggregate(std::span<const MixingRatioRecord> records) {
  if (records.empty()) throw Error(ErrorCode::EmptyInput, "no mixing-ratio records to aggregate");
  MixingRatioTable table;
  for (const auto& r : records) table.add(r);
  return table;
}

std::vector<double> average_ranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  for (std::size_t start = 0; start < n;) {
    std::size_t end = start + 1;
    while (end < n && values[order[end]] == values[order[start]]) ++end;
    // Positions start..end-1 hold 1-based ranks start+1..end.
    const double shared = 0.5 * static_cast<double>(start + 1 + end);
    for (std::size_t k = start; k < end; ++k) ranks[order[k]] = shared;
    start = end;
  }
  return ranks;
}

double spearman_rho(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error(ErrorCode::InvalidArgument, "spearman inputs differ in length");
  if (a.size() < 2) throw Error(ErrorCode::InsufficientData, "spearman needs at least two pairs");
  const auto ra = average_ranks(a);
  const auto rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double cov = 0, va = 0, vb = 0;
  for (std::size_t k = 0; k < ra.size(); ++k) {
    cov += (ra[k] - ma) * (rb[k] - mb);
    va += (ra[k] - ma) * (ra[k] - ma);
    vb += (rb[k] - mb) * (rb[k] - mb);
  }
  if (va == 0 || vb == 0) throw Error(ErrorCode::InsufficientData, "spearman input has zero variance");
  return std::clamp(cov / std::sqrt(va * vb), -1.0, 1.0);
}

double spearman_rho(std::span<const RankedRatio> pairs, bool exclude_special) {
  std::vector<double> ranks, ratios;
  for (const auto& p : pairs) {
    if (!p.frequency_rank) continue;
    if (exclude_special && is_special(p.category)) continue;
    ranks.push_back(static_cast<double>(*p.frequency_rank));
    ratios.push_back(p.ratio);
  }
  return spearman_rho(ranks, ratios);
}

AffineMap integrated_f(const LayerWeights& w) { return {w.w_value * w.w_output, w.b_value * w.w_output}; }

Matrix homogeneous_matrix(const AffineMap& f) {
  const Eigen::Index d = f.linear.rows();
  Matrix m = Matrix::Zero(d + 1, d + 1);
  m.topLeftCorner(d, d) = f.linear;
  m.block(d, 0, 1, d) = f.bias;
  m(d, d) = 1.0;
  return m;
}

ExpansionRateRecord expansion_rate(const LayerWeights& w, int layer_index) {
  const AffineMap f = integrated_f(w);
  const Matrix m = homogeneous_matrix(f);
  ExpansionRateRecord r;
  r.layer_index = layer_index;
  r.sum_sq_singulars = m.squaredNorm();
  r.dimension = static_cast<int>(m.rows());
  r.rate = std::sqrt(r.sum_sq_singulars) / std::sqrt(static_cast<double>(r.dimension));
  r.rate_sqrt_d = std::sqrt(r.sum_sq_singulars) / std::sqrt(static_cast<double>(r.dimension - 1));
  return r;
}

double alpha_fnorm_correlation(const LayerTrace& trace, const LayerWeights& w, int head) {
  const Eigen::Index n = trace.input.rows();
  if (n < 3) throw Error(ErrorCode::InsufficientData, "alpha/norm correlation needs at least three tokens");
  if (head < 0 || head >= w.num_heads) throw Error(ErrorCode::IndexOutOfRange, fmt::format("head {}", head));
  const Matrix transformed = f_head_rows(trace.input, w, head);
  const Matrix& a = trace.attention[static_cast<std::size_t>(head)];
  std::vector<double> weights, norms;
  weights.reserve(static_cast<std::size_t>(n * n));
  norms.reserve(static_cast<std::size_t>(n * n));
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      weights.push_back(a(i, j));
      norms.push_back(transformed.row(j).norm());
    }
  return spearman_rho(weights, norms);
}

std::vector<double> alpha_fnorm_correlation(const LayerTrace& trace, const LayerWeights& w) {
  std::vector<double> out;
  for (int h = 0; h < w.num_heads; ++h) out.push_back(alpha_fnorm_correlation(trace, w, h));
  return out;
}

}  // namespace attnscope
