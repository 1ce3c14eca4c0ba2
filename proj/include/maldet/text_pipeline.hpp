#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "maldet/report_ingest.hpp"

namespace maldet::text {

using TokenId = std::int32_t;

inline constexpr TokenId kPadId = 0;
inline constexpr TokenId kOovId = 1;
inline constexpr std::string_view kOovLiteral = "<OOV>";

/// Bijective token <-> id map. Ids 0 (padding) and 1 (out-of-vocabulary) are
/// reserved; real tokens occupy 2..size()-1 without gaps.
class Vocabulary {
 public:
  Vocabulary() = default;

  /// Rebuilds a vocabulary from its real tokens listed in id order (id 2 first).
  static Vocabulary from_tokens(std::vector<std::string> tokens);

  std::size_t size() const noexcept { return tokens_.size() + 2; }
  /// Real tokens in id order.
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

  /// Id of `token`, or kOovId when unseen.
  TokenId id(std::string_view token) const;
  bool contains(std::string_view token) const { return index_.contains(std::string(token)); }
  /// Inverse map for ids >= 2. Throws UnknownId otherwise.
  const std::string& token(TokenId id) const;

  /// Hex SHA-256 over the token list; identifies a vocabulary across files.
  std::string digest() const;

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

/// Assigns ids by descending corpus frequency, ties by ascending token.
/// `max_vocab`, when set, caps size() (reserved ids included); rarer tokens
/// become OOV. Throws EmptyCorpus.
Vocabulary fit_vocabulary(std::span<const ingest::LabeledSequence> train,
                          std::optional<std::size_t> max_vocab = std::nullopt);

/// Exactly `n` ids: head of the sequence, unseen tokens as kOovId, post-padded with kPadId.
std::vector<TokenId> encode(std::span<const std::string> seq, const Vocabulary& vocab, std::size_t n);

/// Drops padding and renders OOV as `<OOV>`. Throws UnknownId for ids >= size().
std::vector<std::string> decode(std::span<const TokenId> ids, const Vocabulary& vocab);

/// Fixed-length encoded samples stored row-major.
struct EncodedDataset {
  std::size_t n = 0;
  std::vector<TokenId> ids;
  std::vector<int> labels;

  std::size_t num_samples() const noexcept { return labels.size(); }
  std::span<const TokenId> row(std::size_t i) const { return std::span<const TokenId>(ids).subspan(i * n, n); }
  /// Rows `indices`, in the given order.
  EncodedDataset subset(std::span<const std::size_t> indices) const;
};

EncodedDataset encode_dataset(std::span<const ingest::LabeledSequence> data, const Vocabulary& vocab, std::size_t n);

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Seeded, stratified shuffle split. |train| == floor(ratio * N) and each
/// class's share of the training side is within one sample of ratio * N_c.
/// Both sides keep the shuffled order. Throws DegenerateSplit when either side
/// would be empty or ratio is outside (0, 1).
SplitIndices split_indices(std::span<const int> labels, double ratio, std::uint64_t seed);

template <typename T>
std::pair<std::vector<T>, std::vector<T>> train_test_split(std::span<const T> data, std::span<const int> labels,
                                                           double ratio, std::uint64_t seed) {
  const SplitIndices idx = split_indices(labels, ratio, seed);
  std::pair<std::vector<T>, std::vector<T>> out;
  out.first.reserve(idx.train.size());
  out.second.reserve(idx.test.size());
  for (auto i : idx.train) out.first.push_back(data[i]);
  for (auto i : idx.test) out.second.push_back(data[i]);
  return out;
}

std::pair<std::vector<ingest::LabeledSequence>, std::vector<ingest::LabeledSequence>> train_test_split(
    std::span<const ingest::LabeledSequence> data, double ratio, std::uint64_t seed);

}  // namespace maldet::text
