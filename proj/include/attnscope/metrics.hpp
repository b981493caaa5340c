#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string_view>
#include <tuple>
#include <vector>

#include "attnscope/corpus.hpp"
#include "attnscope/decomposition.hpp"
#include "attnscope/encoder.hpp"
#include "attnscope/linalg.hpp"

namespace attnscope {

enum class Method { AttnW, AttnN, AttnResW, AttnResN, AttnResLnN };

inline constexpr std::array<Method, 5> kAllMethods = {Method::AttnW, Method::AttnN, Method::AttnResW,
                                                      Method::AttnResN, Method::AttnResLnN};

/// "ATTN_W", "ATTN_N", ...
std::string_view method_id(Method m) noexcept;
/// "Attn-w", "Attn-n", ...
std::string_view method_label(Method m) noexcept;
/// Accepts either spelling, case-insensitively, with '-' or '_'.
Method parse_method(std::string_view s);

// ---- the five mixing ratios; all lie in [0, 1] ----

/// (1/H) sum_h sum_{j!=i} alpha^h_ij.
double ratio_attn_w(std::span<const Matrix> attention, int i);

/// Residual-aware weights 0.5 A + 0.5 I. Rows of A must sum to one (checked
/// to 1e-9); the per-head denominator sum_j 0.5 a_ij + 0.5 is then exactly 1,
/// so the result is bit-identical to ratio_attn_w / 2.
double ratio_attnres_w(std::span<const Matrix> attention, int i);

double ratio_attn_n(const TokenDecomposition& t);
double ratio_attnres_n(const TokenDecomposition& t);
double ratio_attnresln_n(const TokenDecomposition& t);

/// mix / (mix + keep), with 0/0 read as "no mixing" (0).
double norm_ratio(double mix, double keep) noexcept;
bool is_zero_norm_case(double mix, double keep) noexcept;

struct MixingRatioRecord {
  Method method = Method::AttnResLnN;
  int layer_index = 0;
  int token_index = 0;
  TokenCategory category = TokenCategory::Normal;
  std::optional<std::int64_t> frequency_rank;
  double ratio = 0;
};

/// Mixing ratios of every token of one layer under the requested methods.
std::vector<MixingRatioRecord> layer_ratios(const LayerTrace& trace, const DecompositionRecord& record,
                                            const TokenizedSequence& seq, std::span<const Method> methods);

struct RatioStats {
  double sum = 0;
  double min = 0;
  double max = 0;
  std::size_t count = 0;

  void add(double r);
  void merge(const RatioStats& other);
  double mean() const { return count == 0 ? 0.0 : sum / static_cast<double>(count); }
};

/// Aggregates keyed by method x layer x category. A missing layer means
/// "all layers"; a missing category means "overall".
class MixingRatioTable {
 public:
  using Key = std::tuple<Method, std::optional<int>, std::optional<TokenCategory>>;

  void add(const MixingRatioRecord& r);
  void merge(const MixingRatioTable& other);

  const RatioStats* find(Method m, std::optional<int> layer, std::optional<TokenCategory> category) const;
  const std::map<Key, RatioStats>& cells() const { return cells_; }
  bool empty() const { return cells_.empty(); }

  std::vector<Method> methods() const;
  std::vector<int> layers() const;

 private:
  std::map<Key, RatioStats> cells_;
};

/// Throws Error(EmptyInput) for no records.
MixingRatioTable aggregate(std::span<const MixingRatioRecord> records);

// ---- rank statistics ----

/// 1-based ranks, ties get the average of the positions they span.
std::vector<double> average_ranks(std::span<const double> values);

/// Spearman's rho with average-rank ties. Throws InsufficientData for fewer
/// than two pairs or a constant variable.
double spearman_rho(std::span<const double> a, std::span<const double> b);

struct RankedRatio {
  std::optional<std::int64_t> frequency_rank;
  double ratio = 0;
  TokenCategory category = TokenCategory::Normal;
};

/// Correlates frequency rank with mixing ratio over entries that carry a rank;
/// exclude_special additionally drops CLS and SEP entries.
double spearman_rho(std::span<const RankedRatio> pairs, bool exclude_special);

// ---- mechanism analysis ----

struct AffineMap {
  Matrix linear;  // d x d
  RowVector bias;

  RowVector apply(const RowVector& x) const { return x * linear + bias; }
};

/// f(x) = (x W_V + b_V) W_O, equal to sum_h f_head(x, h).
AffineMap integrated_f(const LayerWeights& w);

/// (d+1) x (d+1) matrix of the map acting on [x, 1]:
///   [[W_V W_O, 0], [b_V W_O, 1]].
Matrix homogeneous_matrix(const AffineMap& f);

struct ExpansionRateRecord {
  int layer_index = 0;
  double rate = 0;         // sqrt(sum sigma^2) / sqrt(d + 1)
  double rate_sqrt_d = 0;  // sqrt(sum sigma^2) / sqrt(d)
  double sum_sq_singulars = 0;
  int dimension = 0;       // d + 1
};

/// Sum of squared singular values of the homogeneous matrix, computed as its
/// squared Frobenius norm.
ExpansionRateRecord expansion_rate(const LayerWeights& w, int layer_index = 0);

/// Spearman rho between alpha^h_ij and ||f_head(x_j, h)|| pooled over all
/// (i, j). Requires n >= 3; throws InsufficientData for constant inputs.
double alpha_fnorm_correlation(const LayerTrace& trace, const LayerWeights& w, int head);
std::vector<double> alpha_fnorm_correlation(const LayerTrace& trace, const LayerWeights& w);

}  // namespace attnscope
