#include <gtest/gtest.h>

#include <Eigen/SVD>

#include <cmath>
#include <numeric>

#include "attnscope/metrics.hpp"
#include "attnscope/synthetic.hpp"
#include "test_support.hpp"

using namespace attnscope;
using attnscope::testing::expect_error;
using attnscope::testing::gaussian;
using attnscope::testing::gaussian_row;

namespace {

// Row-stochastic matrix from exponentiated Gaussian logits.
Matrix random_stochastic(Eigen::Index n, std::mt19937_64& rng, double scale = 1.0) {
  Matrix a = (gaussian(n, n, rng, scale)).array().exp().matrix();
  for (Eigen::Index i = 0; i < n; ++i) a.row(i) /= a.row(i).sum();
  return a;
}

MixingRatioRecord rec(Method m, int layer, TokenCategory c, double r) { return {m, layer, 0, c, std::nullopt, r}; }

// Monte-Carlo mean of ||[x, 1] M|| / ||[x, 1]|| with x ~ N(0, I_d).
double monte_carlo_rate(const Matrix& m, int samples, std::mt19937_64& rng) {
  const Eigen::Index d = m.rows() - 1;
  std::normal_distribution<double> normal;
  RowVector x(d + 1);
  double total = 0;
  for (int s = 0; s < samples; ++s) {
    for (Eigen::Index k = 0; k < d; ++k) x[k] = normal(rng);
    x[d] = 1.0;
    total += (x * m).norm() / x.norm();
  }
  return total / samples;
}

}  // namespace

TEST(Methods, NamesRoundTrip) {
  for (Method m : kAllMethods) {
    EXPECT_EQ(parse_method(method_id(m)), m);
    EXPECT_EQ(parse_method(method_label(m)), m);
  }
  EXPECT_EQ(parse_method("attnresln-n"), Method::AttnResLnN);
  expect_error(ErrorCode::InvalidArgument, [] { parse_method("ATTN"); });
}

TEST(WeightRatios, UniformAttention) {
  for (int n : {1, 2, 5, 16}) {
    const std::vector<Matrix> heads(3, Matrix::Constant(n, n, 1.0 / n));
    for (int i = 0; i < n; ++i) {
      EXPECT_NEAR(ratio_attn_w(heads, i), (n - 1.0) / n, 1e-15);
      EXPECT_NEAR(ratio_attnres_w(heads, i), (n - 1.0) / (2.0 * n), 1e-15);
    }
  }
}

TEST(WeightRatios, SelfAttentionOnlyIsZero) {
  const std::vector<Matrix> heads(2, Matrix::Identity(4, 4));
  EXPECT_EQ(ratio_attn_w(heads, 2), 0.0);
  EXPECT_EQ(ratio_attnres_w(heads, 2), 0.0);
}

TEST(WeightRatios, AveragesHeads) {
  Matrix a = Matrix::Identity(2, 2), b(2, 2);
  b << 0.0, 1.0, 1.0, 0.0;
  const std::vector<Matrix> heads{a, b};
  EXPECT_DOUBLE_EQ(ratio_attn_w(heads, 0), 0.5);
}

TEST(WeightRatios, ResidualVariantIsExactlyHalf) {
  std::mt19937_64 rng(1);
  for (int draw = 0; draw < 500; ++draw) {
    const std::vector<Matrix> heads{random_stochastic(7, rng, 3.0), random_stochastic(7, rng), random_stochastic(7, rng)};
    for (int i = 0; i < 7; ++i) EXPECT_EQ(ratio_attnres_w(heads, i), ratio_attn_w(heads, i) / 2);
  }
}

TEST(WeightRatios, ResidualVariantNeedsStochasticRows) {
  const std::vector<Matrix> heads{Matrix::Constant(3, 3, 0.5)};
  expect_error(ErrorCode::InvalidArgument, [&] { ratio_attnres_w(heads, 0); });
  expect_error(ErrorCode::IndexOutOfRange, [&] { ratio_attn_w(heads, 3); });
}

TEST(NormRatios, Definitions) {
  EXPECT_EQ(norm_ratio(0.0, 2.0), 0.0);
  EXPECT_EQ(norm_ratio(3.0, 3.0), 0.5);
  EXPECT_EQ(norm_ratio(2.0, 0.0), 1.0);
  EXPECT_EQ(norm_ratio(0.0, 0.0), 0.0);
  EXPECT_TRUE(is_zero_norm_case(0.0, 0.0));
  EXPECT_FALSE(is_zero_norm_case(0.0, 1e-300));

  TokenDecomposition t;
  t.mixing_norm = 1.0;
  t.preserving_norm = 3.0;
  t.pre_ln_mixing_norm = 2.0;
  t.attn_self_norm = 2.0;
  t.pre_ln_preserving_norm = 6.0;
  EXPECT_DOUBLE_EQ(ratio_attnresln_n(t), 0.25);
  EXPECT_DOUBLE_EQ(ratio_attn_n(t), 0.5);
  EXPECT_DOUBLE_EQ(ratio_attnres_n(t), 0.25);
}

TEST(LayerRatios, AllMethodsInUnitInterval) {
  const ModelConfig cfg = synthetic_config(32, 4, 2);
  const Model model = random_model(cfg, 2);
  const auto seq = random_corpus(cfg, 1, 12, 12, 3).front();
  const ForwardResult fwd = full_forward(seq, model);
  for (std::size_t k = 0; k < 2; ++k) {
    const auto dec = decompose_block(fwd.layers[k], model.layers[k], cfg);
    const auto rs = layer_ratios(fwd.layers[k], dec, seq, kAllMethods);
    ASSERT_EQ(rs.size(), 5u * 12u);
    for (const auto& r : rs) {
      EXPECT_GE(r.ratio, 0.0);
      EXPECT_LE(r.ratio, 1.0);
      EXPECT_EQ(r.layer_index, static_cast<int>(k));
      EXPECT_EQ(r.category, seq.categories[static_cast<std::size_t>(r.token_index)]);
    }
  }
}

TEST(Aggregate, KnownTable) {
  const std::vector<MixingRatioRecord> records{
      rec(Method::AttnW, 0, TokenCategory::Normal, 0.1), rec(Method::AttnW, 0, TokenCategory::Normal, 0.3),
      rec(Method::AttnW, 1, TokenCategory::Cls, 0.5), rec(Method::AttnN, 0, TokenCategory::Mask, 0.9)};
  const auto table = aggregate(records);
  const auto* all = table.find(Method::AttnW, std::nullopt, std::nullopt);
  ASSERT_NE(all, nullptr);
  EXPECT_NEAR(all->mean(), 0.3, 1e-15);
  EXPECT_EQ(all->count, 3u);
  EXPECT_DOUBLE_EQ(all->min, 0.1);
  EXPECT_DOUBLE_EQ(all->max, 0.5);
  EXPECT_NEAR(table.find(Method::AttnW, 0, std::nullopt)->mean(), 0.2, 1e-15);
  EXPECT_NEAR(table.find(Method::AttnW, 1, TokenCategory::Cls)->mean(), 0.5, 1e-15);
  EXPECT_EQ(table.find(Method::AttnW, 1, TokenCategory::Normal), nullptr);
  EXPECT_EQ(table.find(Method::AttnN, std::nullopt, TokenCategory::Mask)->count, 1u);
  EXPECT_EQ(table.methods(), (std::vector<Method>{Method::AttnW, Method::AttnN}));
  EXPECT_EQ(table.layers(), (std::vector<int>{0, 1}));
}

TEST(Aggregate, EmptyAndOutOfRange) {
  expect_error(ErrorCode::EmptyInput, [] { aggregate({}); });
  MixingRatioTable table;
  expect_error(ErrorCode::InvalidArgument, [&] { table.add(rec(Method::AttnW, 0, TokenCategory::Normal, 1.5)); });
}

TEST(Aggregate, OverallIsCountWeightedMeanOfCategories) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> unit;
  std::uniform_int_distribution<int> cat(0, 3), layer(0, 3);
  std::vector<MixingRatioRecord> records;
  for (int k = 0; k < 997; ++k)
    records.push_back(rec(Method::AttnResLnN, layer(rng), static_cast<TokenCategory>(cat(rng)), unit(rng)));
  const auto table = aggregate(records);
  for (std::optional<int> l : {std::optional<int>(), std::optional<int>(2)}) {
    double weighted = 0;
    std::size_t count = 0;
    for (int c = 0; c < 4; ++c)
      if (const auto* s = table.find(Method::AttnResLnN, l, static_cast<TokenCategory>(c))) {
        weighted += s->mean() * static_cast<double>(s->count);
        count += s->count;
      }
    const auto* overall = table.find(Method::AttnResLnN, l, std::nullopt);
    EXPECT_EQ(overall->count, count);
    EXPECT_NEAR(overall->mean(), weighted / static_cast<double>(count), 1e-12);
  }
}

TEST(Aggregate, MergeMatchesSinglePass) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> unit;
  std::vector<MixingRatioRecord> records;
  for (int k = 0; k < 200; ++k) records.push_back(rec(Method::AttnN, k % 3, static_cast<TokenCategory>(k % 4), unit(rng)));
  MixingRatioTable a = aggregate(std::span(records).first(77));
  a.merge(aggregate(std::span(records).subspan(77)));
  const auto whole = aggregate(records);
  ASSERT_EQ(a.cells().size(), whole.cells().size());
  for (const auto& [key, s] : whole.cells()) {
    const auto& m = a.cells().at(key);
    EXPECT_EQ(m.count, s.count);
    EXPECT_EQ(m.min, s.min);
    EXPECT_EQ(m.max, s.max);
    EXPECT_NEAR(m.sum, s.sum, 1e-12);
  }
}

TEST(Spearman, AverageRanksWithTies) {
  const std::vector<double> v{3.0, 1.0, 3.0, 2.0, 3.0};
  EXPECT_EQ(average_ranks(v), (std::vector<double>{4.0, 1.0, 4.0, 2.0, 4.0}));
}

TEST(Spearman, HandComputedTieCase) {
  const std::vector<double> a{1, 2, 2, 3}, b{1, 2, 3, 4};
  EXPECT_NEAR(spearman_rho(a, b), 4.5 / std::sqrt(22.5), 1e-15);
}

TEST(Spearman, MatchesSquaredRankDifferenceFormulaWithoutTies) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const RowVector a = gaussian_row(40, rng), b = gaussian_row(40, rng) + 0.5 * a;
    const std::vector<double> va(a.begin(), a.end()), vb(b.begin(), b.end());
    const auto ra = average_ranks(va), rb = average_ranks(vb);
    double d2 = 0;
    for (std::size_t k = 0; k < ra.size(); ++k) d2 += (ra[k] - rb[k]) * (ra[k] - rb[k]);
    const double n = 40;
    EXPECT_NEAR(spearman_rho(va, vb), 1.0 - 6.0 * d2 / (n * (n * n - 1.0)), 1e-12);
  }
}

TEST(Spearman, PerfectOrders) {
  const std::vector<double> a{1, 2, 3, 4, 5}, up{10, 20, 30, 40, 50}, down{5, 4, 3, 2, 1};
  EXPECT_DOUBLE_EQ(spearman_rho(a, up), 1.0);
  EXPECT_DOUBLE_EQ(spearman_rho(a, down), -1.0);
}

TEST(Spearman, MonotoneTransformInvariance) {
  std::mt19937_64 rng(7);
  const RowVector a = gaussian_row(60, rng), b = gaussian_row(60, rng) - a;
  std::vector<double> va(a.begin(), a.end()), vb(b.begin(), b.end()), ta, tb;
  for (double v : va) ta.push_back(std::exp(3 * v));
  for (double v : vb) tb.push_back(std::pow(v, 3) - 7);
  EXPECT_NEAR(spearman_rho(va, vb), spearman_rho(ta, tb), 1e-14);
}

TEST(Spearman, InsufficientData) {
  expect_error(ErrorCode::InsufficientData, [] { spearman_rho(std::vector<double>{1}, std::vector<double>{2}); });
  expect_error(ErrorCode::InsufficientData,
               [] { spearman_rho(std::vector<double>{1, 2, 3}, std::vector<double>{4, 4, 4}); });
}

TEST(Spearman, RankedRatiosSkipUnrankedAndSpecial) {
  const std::vector<RankedRatio> pairs{{1, 0.1, TokenCategory::Normal}, {2, 0.2, TokenCategory::Normal},
                                       {3, 0.3, TokenCategory::Normal}, {std::nullopt, 0.9, TokenCategory::Mask},
                                       {4, 0.0, TokenCategory::Cls}};
  EXPECT_DOUBLE_EQ(spearman_rho(pairs, true), 1.0);
  EXPECT_LT(spearman_rho(pairs, false), 1.0);
}

TEST(IntegratedMap, HomogeneousMatrixActsOnAugmentedInput) {
  const ModelConfig cfg = synthetic_config(16, 4, 1);
  const Model model = random_model(cfg, 8);
  const AffineMap f = integrated_f(model.layers[0]);
  const Matrix m = homogeneous_matrix(f);
  std::mt19937_64 rng(9);
  const RowVector x = gaussian_row(16, rng);
  RowVector xt(17);
  xt << x, 1.0;
  const RowVector y = xt * m;
  EXPECT_LE((y.head(16) - f.apply(x)).cwiseAbs().maxCoeff(), 1e-13);
  EXPECT_EQ(y[16], 1.0);
}

TEST(ExpansionRate, IdentityMap) {
  const ModelConfig cfg = synthetic_config(8, 2, 1);
  LayerWeights w = LayerWeights::zeros(cfg);
  w.w_value.setIdentity();
  w.w_output.setIdentity();
  const auto r = expansion_rate(w, 3);
  EXPECT_EQ(r.layer_index, 3);
  EXPECT_EQ(r.dimension, 9);
  EXPECT_DOUBLE_EQ(r.sum_sq_singulars, 9.0);
  EXPECT_DOUBLE_EQ(r.rate, 1.0);
  EXPECT_DOUBLE_EQ(r.rate_sqrt_d, std::sqrt(9.0 / 8.0));
}

TEST(ExpansionRate, ZeroMap) {
  const ModelConfig cfg = synthetic_config(8, 2, 1);
  const auto r = expansion_rate(LayerWeights::zeros(cfg), 0);
  EXPECT_DOUBLE_EQ(r.sum_sq_singulars, 1.0);
  EXPECT_DOUBLE_EQ(r.rate, 1.0 / 3.0);
}

TEST(ExpansionRate, FrobeniusMatchesSingularValues) {
  const ModelConfig cfg = synthetic_config(64, 4, 1);
  const Model model = random_model(cfg, 10);
  const Matrix m = homogeneous_matrix(integrated_f(model.layers[0]));
  const Eigen::JacobiSVD<Matrix> svd(m);
  const double from_svd = svd.singularValues().squaredNorm();
  EXPECT_NEAR(expansion_rate(model.layers[0], 0).sum_sq_singulars, from_svd, 1e-8);
}

TEST(ExpansionRate, AgreesWithMonteCarlo) {
  std::mt19937_64 rng(11);
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const ModelConfig cfg = synthetic_config(64, 4, 1);
    const Model model = random_model(cfg, 100 + seed);
    const auto r = expansion_rate(model.layers[0], 0);
    const double mc = monte_carlo_rate(homogeneous_matrix(integrated_f(model.layers[0])), 10000, rng);
    EXPECT_LE(std::abs(r.rate - mc) / mc, 0.02) << "closed form " << r.rate << " vs " << mc;
  }
}

TEST(AlphaNormCorrelation, InverselyOrderedIsMinusOne) {
  const ModelConfig cfg = synthetic_config(2, 1, 1);
  LayerWeights w = LayerWeights::zeros(cfg);
  w.w_value.setIdentity();
  w.w_output.setIdentity();
  w.w_key.setIdentity();
  w.b_query << -1.0, 0.0;  // every query prefers keys with a small first coordinate
  Matrix x(4, 2);
  x << 1, 0, 2, 0, 3, 0, 4, 0;
  const LayerTrace t = layer_forward(x, w, cfg);
  EXPECT_DOUBLE_EQ(alpha_fnorm_correlation(t, w, 0), -1.0);
  EXPECT_EQ(alpha_fnorm_correlation(t, w), std::vector<double>{-1.0});
}

TEST(AlphaNormCorrelation, DegenerateInputs) {
  const ModelConfig cfg = synthetic_config(4, 2, 1);
  const Model model = random_model(cfg, 12);
  std::mt19937_64 rng(13);
  const Matrix x = gaussian(2, 4, rng);
  expect_error(ErrorCode::InsufficientData,
               [&] { alpha_fnorm_correlation(layer_forward(x, model.layers[0], cfg), model.layers[0], 0); });
  const Matrix same = Matrix::Ones(5, 1) * gaussian_row(4, rng);
  expect_error(ErrorCode::InsufficientData,
               [&] { alpha_fnorm_correlation(layer_forward(same, model.layers[0], cfg), model.layers[0], 1); });
  const Matrix y = gaussian(5, 4, rng);
  expect_error(ErrorCode::IndexOutOfRange,
               [&] { alpha_fnorm_correlation(layer_forward(y, model.layers[0], cfg), model.layers[0], 2); });
}
