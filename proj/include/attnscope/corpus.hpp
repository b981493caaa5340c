#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "attnscope/model.hpp"

namespace attnscope {

enum class TokenCategory { Normal, Mask, Cls, Sep };

std::string_view to_string(TokenCategory c) noexcept;
/// Accepts "NORMAL", "MASK", "CLS", "SEP"; throws MalformedRecord otherwise.
TokenCategory parse_category(std::string_view s);

/// Surface category of a token id.
TokenCategory category_of(std::int64_t token_id, const SpecialTokens& special) noexcept;

inline bool is_special(TokenCategory c) noexcept {
  return c == TokenCategory::Cls || c == TokenCategory::Sep;
}

struct TokenizedSequence {
  std::vector<std::int64_t> token_ids;
  std::vector<int> segment_ids;
  std::vector<TokenCategory> categories;
  // Rank 1 = most frequent. Absent for CLS, SEP and MASK positions.
  std::vector<std::optional<std::int64_t>> frequency_ranks;
  std::vector<std::int64_t> original_ids;

  std::size_t size() const { return token_ids.size(); }

  bool operator==(const TokenizedSequence&) const = default;
};

/// Throws MalformedRecord, UnknownTokenId or LengthExceeded.
void validate(const TokenizedSequence& seq, const ModelConfig& cfg);

/// Parses one JSON-lines record:
///   {"tokens": [int], "segments": [int], "categories": [str], "ranks": [int|null]}
/// An optional "original" array carries pre-masking ids; it defaults to tokens.
TokenizedSequence parse_corpus_record(std::string_view line, const ModelConfig& cfg);
std::string format_corpus_record(const TokenizedSequence& seq);

/// Blank lines are skipped. Errors name the offending 1-based line.
std::vector<TokenizedSequence> load_corpus(const std::filesystem::path& path, const ModelConfig& cfg);
void save_corpus(const std::filesystem::path& path, const std::vector<TokenizedSequence>& corpus);

struct MaskingOptions {
  double select_fraction = 0.15;
  double mask_fraction = 0.80;
  std::uint64_t seed = 0;
};

/// Seeded masking over the non-CLS/SEP positions.
///
/// With N candidates (in position order) and m = floor(select_fraction * N),
/// a std::mt19937_64 seeded with `seed` drives a partial Fisher-Yates shuffle:
/// for k in [0, m) the candidate at k is swapped with the one at
/// k + uniform_below(N - k). uniform_below(b) draws v from the engine,
/// rejecting v < (2^64 - b) mod b, and returns v mod b. Then, for each of
/// the m selected positions in selection order, u = (engine() >> 11) * 2^-53
/// is drawn and the position becomes MASK iff u < mask_fraction. Unmasked
/// selected positions keep their token, category and rank.
TokenizedSequence apply_masking(const TokenizedSequence& seq, const MaskingOptions& options,
                                const SpecialTokens& special);

}  // namespace attnscope
