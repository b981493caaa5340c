#include "attnscope/corpus.hpp"

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <random>

#include "attnscope/error.hpp"

namespace attnscope {

std::string_view to_string(TokenCategory c) noexcept {
  switch (c) {
    case TokenCategory::Normal: return "NORMAL";
    case TokenCategory::Mask: return "MASK";
    case TokenCategory::Cls: return "CLS";
    case TokenCategory::Sep: return "SEP";
  }
  return "NORMAL";
}

TokenCategory parse_category(std::string_view s) {
  if (s == "NORMAL") return TokenCategory::Normal;
  if (s == "MASK") return TokenCategory::Mask;
  if (s == "CLS") return TokenCategory::Cls;
  if (s == "SEP") return TokenCategory::Sep;
  throw Error(ErrorCode::MalformedRecord, fmt::format("unknown category '{}'", s));
}

TokenCategory category_of(std::int64_t token_id, const SpecialTokens& special) noexcept {
  if (token_id == special.cls) return TokenCategory::Cls;
  if (token_id == special.sep) return TokenCategory::Sep;
  if (token_id == special.mask) return TokenCategory::Mask;
  return TokenCategory::Normal;
}

void validate(const TokenizedSequence& seq, const ModelConfig& cfg) {
  const std::size_t n = seq.token_ids.size();
  if (n == 0) throw Error(ErrorCode::MalformedRecord, "empty sequence");
  if (seq.segment_ids.size() != n || seq.categories.size() != n || seq.frequency_ranks.size() != n ||
      seq.original_ids.size() != n)
    throw Error(ErrorCode::MalformedRecord, "field lengths differ");
  if (n > static_cast<std::size_t>(cfg.max_positions))
    throw Error(ErrorCode::LengthExceeded, fmt::format("{} tokens, model supports {}", n, cfg.max_positions));

  const int segment_limit = std::max(1, std::min(2, cfg.num_segments));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::int64_t id : {seq.token_ids[i], seq.original_ids[i]}) {
      if (id < 0 || id >= cfg.vocab_size)
        throw Error(ErrorCode::UnknownTokenId, fmt::format("token id {} at position {}", id, i));
    }
    if (seq.token_ids[i] == cfg.special.pad)
      throw Error(ErrorCode::MalformedRecord, fmt::format("PAD token at position {}", i));
    if (seq.segment_ids[i] < 0 || seq.segment_ids[i] >= segment_limit)
      throw Error(ErrorCode::MalformedRecord, fmt::format("segment id {} at position {}", seq.segment_ids[i], i));
    const TokenCategory expected = category_of(seq.token_ids[i], cfg.special);
    if (seq.categories[i] != expected)
      throw Error(ErrorCode::MalformedRecord, fmt::format("position {} is tagged {} but token {} is {}", i,
                                                          to_string(seq.categories[i]), seq.token_ids[i],
                                                          to_string(expected)));
    const auto& rank = seq.frequency_ranks[i];
    if (expected == TokenCategory::Normal) {
      if (!rank) throw Error(ErrorCode::MalformedRecord, fmt::format("position {} has no frequency rank", i));
      if (*rank < 1) throw Error(ErrorCode::MalformedRecord, fmt::format("position {} has rank {}", i, *rank));
    } else if (rank) {
      throw Error(ErrorCode::MalformedRecord,
                  fmt::format("position {} ({}) must not carry a frequency rank", i, to_string(expected)));
    }
  }
}

TokenizedSequence parse_corpus_record(std::string_view line, const ModelConfig& cfg) {
  TokenizedSequence seq;
  try {
    const auto j = nlohmann::json::parse(line);
    seq.token_ids = j.at("tokens").get<std::vector<std::int64_t>>();
    seq.segment_ids = j.at("segments").get<std::vector<int>>();
    for (const auto& c : j.at("categories")) seq.categories.push_back(parse_category(c.get<std::string>()));
    for (const auto& r : j.at("ranks")) {
      if (r.is_null())
        seq.frequency_ranks.emplace_back();
      else
        seq.frequency_ranks.emplace_back(r.get<std::int64_t>());
    }
    seq.original_ids = j.contains("original") ? j.at("original").get<std::vector<std::int64_t>>() : seq.token_ids;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedRecord, e.what());
  }
  validate(seq, cfg);
  return seq;
}

std::string format_corpus_record(const TokenizedSequence& seq) {
  nlohmann::json j;
  j["tokens"] = seq.token_ids;
  j["segments"] = seq.segment_ids;
  auto& cats = j["categories"] = nlohmann::json::array();
  for (auto c : seq.categories) cats.push_back(std::string(to_string(c)));
  auto& ranks = j["ranks"] = nlohmann::json::array();
  for (const auto& r : seq.frequency_ranks) ranks.push_back(r ? nlohmann::json(*r) : nlohmann::json(nullptr));
  if (seq.original_ids != seq.token_ids) j["original"] = seq.original_ids;
  return j.dump();
}

std::vector<TokenizedSequence> load_corpus(const std::filesystem::path& path, const ModelConfig& cfg) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, fmt::format("cannot open {}", path.string()));
  std::vector<TokenizedSequence> corpus;
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    if (std::all_of(line.begin(), line.end(), [](unsigned char ch) { return std::isspace(ch); })) continue;
    try {
      corpus.push_back(parse_corpus_record(line, cfg));
    } catch (const Error& e) {
      throw Error(e.code(), fmt::format("{} line {}: {}", path.string(), lineno, e.what()));
    }
  }
  return corpus;
}

void save_corpus(const std::filesystem::path& path, const std::vector<TokenizedSequence>& corpus) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, fmt::format("cannot write {}", path.string()));
  for (const auto& seq : corpus) out << format_corpus_record(seq) << '\n';
}

namespace {

std::uint64_t uniform_below(std::mt19937_64& engine, std::uint64_t bound) {
  const std::uint64_t threshold = (0 - bound) % bound;
  for (;;) {
    const std::uint64_t v = engine();
    if (v >= threshold) return v % bound;
  }
}

double unit_interval(std::mt19937_64& engine) { return static_cast<double>(engine() >> 11) * 0x1.0p-53; }

}  // namespace

TokenizedSequence apply_masking(const TokenizedSequence& seq, const MaskingOptions& options,
                                const SpecialTokens& special) {
  const double select = std::clamp(options.select_fraction, 0.0, 1.0);
  TokenizedSequence out = seq;

  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < seq.size(); ++i)
    if (!is_special(seq.categories[i])) candidates.push_back(i);

  // The epsilon keeps products such as 0.29 * 100 from flooring to 28.
  const auto selected = static_cast<std::size_t>(std::floor(select * static_cast<double>(candidates.size()) + 1e-9));
  if (selected == 0) return out;

  std::mt19937_64 engine(options.seed);
  for (std::size_t k = 0; k < selected; ++k) {
    const std::size_t r = k + static_cast<std::size_t>(uniform_below(engine, candidates.size() - k));
    std::swap(candidates[k], candidates[r]);
  }
  for (std::size_t k = 0; k < selected; ++k) {
    if (unit_interval(engine) < options.mask_fraction) {
      const std::size_t pos = candidates[k];
      out.token_ids[pos] = special.mask;
      out.categories[pos] = TokenCategory::Mask;
      out.frequency_ranks[pos].reset();
    }
  }
  return out;
}

}  // namespace attnscope
