#include <gtest/gtest.h>

#include <fstream>
#include <random>

#include "attnscope/corpus.hpp"
#include "attnscope/synthetic.hpp"
#include "test_support.hpp"

using namespace attnscope;
using attnscope::testing::expect_error;
using attnscope::testing::TempDir;

namespace {

const ModelConfig kCfg = synthetic_config(8, 2, 1, 64, 32);

// [CLS] a b [SEP] with a = 10, b = 11.
const char* kRecord =
    R"({"tokens":[1,10,11,2],"segments":[0,0,0,0],"categories":["CLS","NORMAL","NORMAL","SEP"],"ranks":[null,7,8,null]})";

// Straight transcription of the documented masking procedure.
std::vector<std::size_t> reference_masked_positions(const TokenizedSequence& seq, double select, double mask,
                                                    std::uint64_t seed) {
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < seq.size(); ++i)
    if (seq.categories[i] != TokenCategory::Cls && seq.categories[i] != TokenCategory::Sep) pool.push_back(i);
  const auto m = static_cast<std::size_t>(std::floor(select * static_cast<double>(pool.size()) + 1e-9));
  std::mt19937_64 gen(seed);
  for (std::size_t k = 0; k < m; ++k) {
    const std::uint64_t bound = pool.size() - k;
    const std::uint64_t reject_below = (~bound + 1) % bound;
    std::uint64_t v = gen();
    while (v < reject_below) v = gen();
    std::swap(pool[k], pool[k + v % bound]);
  }
  std::vector<std::size_t> masked;
  for (std::size_t k = 0; k < m; ++k) {
    const double u = std::ldexp(static_cast<double>(gen() >> 11), -53);
    if (u < mask) masked.push_back(pool[k]);
  }
  std::sort(masked.begin(), masked.end());
  return masked;
}

std::vector<std::size_t> masked_positions(const TokenizedSequence& before, const TokenizedSequence& after) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < before.size(); ++i)
    if (before.token_ids[i] != after.token_ids[i]) out.push_back(i);
  return out;
}

TokenizedSequence long_sequence(std::size_t body) {
  std::vector<std::int64_t> ids{kCfg.special.cls};
  for (std::size_t i = 0; i < body; ++i) ids.push_back(4 + static_cast<std::int64_t>(i % 60));
  ids.push_back(kCfg.special.sep);
  ModelConfig cfg = kCfg;
  cfg.max_positions = static_cast<int>(ids.size());
  return make_sequence(ids, cfg);
}

}  // namespace

TEST(Corpus, ParsesClsTokensSep) {
  const auto seq = parse_corpus_record(kRecord, kCfg);
  EXPECT_EQ(seq.token_ids, (std::vector<std::int64_t>{1, 10, 11, 2}));
  EXPECT_EQ(seq.categories,
            (std::vector{TokenCategory::Cls, TokenCategory::Normal, TokenCategory::Normal, TokenCategory::Sep}));
  EXPECT_FALSE(seq.frequency_ranks[0].has_value());
  EXPECT_EQ(seq.frequency_ranks[1], 7);
  EXPECT_EQ(seq.original_ids, seq.token_ids);
}

TEST(Corpus, RecordRoundTrips) {
  auto seq = parse_corpus_record(kRecord, kCfg);
  EXPECT_EQ(parse_corpus_record(format_corpus_record(seq), kCfg), seq);
  seq.token_ids[1] = kCfg.special.mask;
  seq.categories[1] = TokenCategory::Mask;
  seq.frequency_ranks[1].reset();
  EXPECT_EQ(parse_corpus_record(format_corpus_record(seq), kCfg), seq);
}

TEST(Corpus, RankOnClsIsRejected) {
  const char* bad =
      R"({"tokens":[1,10,2],"segments":[0,0,0],"categories":["CLS","NORMAL","SEP"],"ranks":[3,7,null]})";
  expect_error(ErrorCode::MalformedRecord, [&] { parse_corpus_record(bad, kCfg); });
}

TEST(Corpus, NormalTokenNeedsRank) {
  const char* bad =
      R"({"tokens":[1,10,2],"segments":[0,0,0],"categories":["CLS","NORMAL","SEP"],"ranks":[null,null,null]})";
  expect_error(ErrorCode::MalformedRecord, [&] { parse_corpus_record(bad, kCfg); });
}

TEST(Corpus, CategoryMustMatchToken) {
  const char* bad =
      R"({"tokens":[1,10,2],"segments":[0,0,0],"categories":["CLS","SEP","SEP"],"ranks":[null,null,null]})";
  expect_error(ErrorCode::MalformedRecord, [&] { parse_corpus_record(bad, kCfg); });
}

TEST(Corpus, LengthMismatchIsMalformed) {
  const char* bad =
      R"({"tokens":[1,10,2],"segments":[0,0],"categories":["CLS","NORMAL","SEP"],"ranks":[null,1,null]})";
  expect_error(ErrorCode::MalformedRecord, [&] { parse_corpus_record(bad, kCfg); });
  expect_error(ErrorCode::MalformedRecord, [&] { parse_corpus_record("{not json", kCfg); });
}

TEST(Corpus, UnknownTokenId) {
  const char* bad =
      R"({"tokens":[1,64,2],"segments":[0,0,0],"categories":["CLS","NORMAL","SEP"],"ranks":[null,1,null]})";
  expect_error(ErrorCode::UnknownTokenId, [&] { parse_corpus_record(bad, kCfg); });
}

TEST(Corpus, PadIsRejected) {
  const char* bad =
      R"({"tokens":[1,0,2],"segments":[0,0,0],"categories":["CLS","NORMAL","SEP"],"ranks":[null,1,null]})";
  expect_error(ErrorCode::MalformedRecord, [&] { parse_corpus_record(bad, kCfg); });
}

TEST(Corpus, LengthExceeded) {
  std::vector<std::int64_t> ids(33, 5);
  ids.front() = 1;
  ids.back() = 2;
  ModelConfig roomy = kCfg;
  roomy.max_positions = 64;
  const auto seq = make_sequence(ids, roomy);
  expect_error(ErrorCode::LengthExceeded, [&] { validate(seq, kCfg); });
}

TEST(Corpus, LoadSkipsBlankLinesAndNamesBadLine) {
  TempDir dir;
  {
    std::ofstream out(dir / "c.jsonl");
    out << kRecord << "\n\n   \n" << kRecord << "\n";
  }
  EXPECT_EQ(load_corpus(dir / "c.jsonl", kCfg).size(), 2u);
  {
    std::ofstream out(dir / "bad.jsonl");
    out << kRecord << "\n" << R"({"tokens":[1]})" << "\n";
  }
  try {
    load_corpus(dir / "bad.jsonl", kCfg);
    FAIL() << "expected MalformedRecord";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MalformedRecord);
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
  }
}

TEST(Corpus, SaveLoadRoundTrip) {
  TempDir dir;
  const auto corpus = random_corpus(kCfg, 5, 3, 20, 4);
  save_corpus(dir / "c.jsonl", corpus);
  EXPECT_EQ(load_corpus(dir / "c.jsonl", kCfg), corpus);
}

TEST(Masking, ZeroSelectionIsIdentity) {
  const auto seq = long_sequence(30);
  EXPECT_EQ(apply_masking(seq, {.select_fraction = 0.0, .mask_fraction = 1.0, .seed = 3}, kCfg.special), seq);
}

TEST(Masking, FullSelectionMasksEveryNormalToken) {
  const auto seq = long_sequence(30);
  const auto out = apply_masking(seq, {.select_fraction = 1.0, .mask_fraction = 1.0, .seed = 3}, kCfg.special);
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (is_special(seq.categories[i])) {
      EXPECT_EQ(out.token_ids[i], seq.token_ids[i]);
    } else {
      EXPECT_EQ(out.token_ids[i], kCfg.special.mask);
      EXPECT_EQ(out.categories[i], TokenCategory::Mask);
      EXPECT_FALSE(out.frequency_ranks[i].has_value());
    }
  }
  EXPECT_EQ(out.original_ids, seq.original_ids);
}

TEST(Masking, SelectsFifteenOfHundred) {
  const auto seq = long_sequence(100);
  const auto out = apply_masking(seq, {.select_fraction = 0.15, .mask_fraction = 1.0, .seed = 7}, kCfg.special);
  EXPECT_EQ(masked_positions(seq, out).size(), 15u);
}

TEST(Masking, MatchesDocumentedProcedure) {
  const auto seq = long_sequence(100);
  for (std::uint64_t seed : {0ULL, 7ULL, 12345ULL, 0xFFFFFFFFFFFFULL}) {
    const auto out = apply_masking(seq, {.select_fraction = 0.15, .mask_fraction = 0.8, .seed = seed}, kCfg.special);
    EXPECT_EQ(masked_positions(seq, out), reference_masked_positions(seq, 0.15, 0.8, seed)) << "seed " << seed;
  }
}

TEST(Masking, DeterministicPerSeed) {
  const auto seq = long_sequence(50);
  const MaskingOptions a{.select_fraction = 0.3, .mask_fraction = 0.8, .seed = 11};
  EXPECT_EQ(apply_masking(seq, a, kCfg.special), apply_masking(seq, a, kCfg.special));
  MaskingOptions b = a;
  b.seed = 12;
  EXPECT_NE(apply_masking(seq, a, kCfg.special), apply_masking(seq, b, kCfg.special));
}

TEST(Masking, MaskRateConvergesToProduct) {
  const auto seq = long_sequence(100);
  std::size_t masked = 0;
  constexpr int kTrials = 400;
  for (int t = 0; t < kTrials; ++t)
    masked += masked_positions(seq, apply_masking(seq, {.select_fraction = 0.15, .mask_fraction = 0.8,
                                                        .seed = static_cast<std::uint64_t>(t)},
                                                  kCfg.special))
                  .size();
  // 15 selected per trial, each masked with probability 0.8: mean 12, sd per trial ~1.55.
  EXPECT_NEAR(static_cast<double>(masked) / kTrials, 12.0, 0.35);
}

TEST(Masking, OutputStaysValid) {
  for (const auto& seq : random_corpus(kCfg, 20, 3, 32, 8)) {
    const auto out = apply_masking(seq, {.select_fraction = 0.5, .mask_fraction = 0.8, .seed = 2}, kCfg.special);
    EXPECT_NO_THROW(validate(out, kCfg));
    EXPECT_EQ(out.original_ids, seq.token_ids);
  }
}
