#include "maldet/text_pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "maldet/digest.hpp"
#include "maldet/error.hpp"
#include "maldet/rng.hpp"

namespace maldet::text {

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
  Vocabulary v;
  v.tokens_ = std::move(tokens);
  for (std::size_t i = 0; i < v.tokens_.size(); ++i) {
    if (!ingest::is_valid_api_name(v.tokens_[i])) {
      throw Error(ErrorKind::InvalidApiName, "vocabulary token '" + v.tokens_[i] + "'");
    }
    if (!v.index_.emplace(v.tokens_[i], static_cast<TokenId>(i + 2)).second) {
      throw Error(ErrorKind::CorruptBundle, "vocabulary token '" + v.tokens_[i] + "' listed twice");
    }
  }
  return v;
}

TokenId Vocabulary::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kOovId : it->second;
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 2 || static_cast<std::size_t>(id) >= size()) {
    throw Error(ErrorKind::UnknownId, "id " + std::to_string(id) + " has no token (size " + std::to_string(size()) + ")");
  }
  return tokens_[static_cast<std::size_t>(id) - 2];
}

std::string Vocabulary::digest() const {
  std::string joined;
  for (const auto& t : tokens_) {
    joined += t;
    joined += '\n';
  }
  return sha256_hex(joined);
}

Vocabulary fit_vocabulary(std::span<const ingest::LabeledSequence> train, std::optional<std::size_t> max_vocab) {
  std::map<std::string, std::size_t> counts;
  for (const auto& row : train) {
    for (const auto& call : row.calls) ++counts[call];
  }
  if (counts.empty()) throw Error(ErrorKind::EmptyCorpus, "no tokens in training corpus");

  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  // Stable sort on a lexicographically ordered input keeps the tie-break.
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  if (max_vocab) {
    const std::size_t keep = *max_vocab > 2 ? *max_vocab - 2 : 0;
    if (ranked.size() > keep) ranked.resize(keep);
  }
  std::vector<std::string> tokens;
  tokens.reserve(ranked.size());
  for (auto& [token, count] : ranked) tokens.push_back(std::move(token));
  return Vocabulary::from_tokens(std::move(tokens));
}

std::vector<TokenId> encode(std::span<const std::string> seq, const Vocabulary& vocab, std::size_t n) {
  if (n == 0) throw Error(ErrorKind::InvalidConfig, "sequence length must be at least 1");
  std::vector<TokenId> out(n, kPadId);
  const std::size_t len = std::min(n, seq.size());
  for (std::size_t i = 0; i < len; ++i) out[i] = vocab.id(seq[i]);
  return out;
}

std::vector<std::string> decode(std::span<const TokenId> ids, const Vocabulary& vocab) {
  std::vector<std::string> out;
  for (TokenId id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab.size()) {
      throw Error(ErrorKind::UnknownId, "id " + std::to_string(id) + " outside vocabulary of " +
                                            std::to_string(vocab.size()));
    }
    if (id == kPadId) continue;
    out.push_back(id == kOovId ? std::string(kOovLiteral) : vocab.token(id));
  }
  return out;
}

EncodedDataset EncodedDataset::subset(std::span<const std::size_t> indices) const {
  EncodedDataset out;
  out.n = n;
  out.ids.reserve(indices.size() * n);
  out.labels.reserve(indices.size());
  for (auto i : indices) {
    auto r = row(i);
    out.ids.insert(out.ids.end(), r.begin(), r.end());
    out.labels.push_back(labels.at(i));
  }
  return out;
}

EncodedDataset encode_dataset(std::span<const ingest::LabeledSequence> data, const Vocabulary& vocab, std::size_t n) {
  EncodedDataset out;
  out.n = n;
  out.ids.reserve(data.size() * n);
  out.labels.reserve(data.size());
  for (const auto& row : data) {
    auto ids = encode(row.calls, vocab, n);
    out.ids.insert(out.ids.end(), ids.begin(), ids.end());
    out.labels.push_back(static_cast<int>(row.label));
  }
  return out;
}

SplitIndices split_indices(std::span<const int> labels, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw Error(ErrorKind::DegenerateSplit, "ratio must lie in (0, 1)");
  const std::size_t total = labels.size();
  const auto target = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(total)));
  if (target == 0 || target == total) {
    throw Error(ErrorKind::DegenerateSplit, std::to_string(total) + " samples cannot be split at ratio " +
                                                std::to_string(ratio));
  }

  std::vector<std::size_t> order(total);
  for (std::size_t i = 0; i < total; ++i) order[i] = i;
  nd::Rng rng = nd::Rng::derive(seed, 0x5b117);
  rng.shuffle(std::span<std::size_t>(order));

  // Per-class quotas: floor share first, then the remainder to the largest
  // fractional parts (ties to the smaller class label).
  std::map<int, std::size_t> class_count;
  for (int l : labels) ++class_count[l];
  struct Quota {
    int label;
    std::size_t take;
    double frac;
  };
  std::vector<Quota> quotas;
  std::size_t assigned = 0;
  for (auto [label, count] : class_count) {
    const double exact = ratio * static_cast<double>(count);
    const auto take = static_cast<std::size_t>(std::floor(exact));
    quotas.push_back({label, take, exact - static_cast<double>(take)});
    assigned += take;
  }
  std::vector<std::size_t> by_frac(quotas.size());
  for (std::size_t i = 0; i < by_frac.size(); ++i) by_frac[i] = i;
  std::stable_sort(by_frac.begin(), by_frac.end(), [&](auto a, auto b) { return quotas[a].frac > quotas[b].frac; });
  for (std::size_t k = 0; assigned < target; k = (k + 1) % by_frac.size()) {
    auto& q = quotas[by_frac[k]];
    if (q.take < class_count[q.label]) {
      ++q.take;
      ++assigned;
    }
  }

  std::map<int, std::size_t> remaining;
  for (const auto& q : quotas) remaining[q.label] = q.take;
  SplitIndices out;
  out.train.reserve(target);
  out.test.reserve(total - target);
  for (auto i : order) {
    auto& left = remaining[labels[i]];
    if (left > 0) {
      --left;
      out.train.push_back(i);
    } else {
      out.test.push_back(i);
    }
  }
  return out;
}

std::pair<std::vector<ingest::LabeledSequence>, std::vector<ingest::LabeledSequence>> train_test_split(
    std::span<const ingest::LabeledSequence> data, double ratio, std::uint64_t seed) {
  std::vector<int> labels;
  labels.reserve(data.size());
  for (const auto& row : data) labels.push_back(static_cast<int>(row.label));
  return train_test_split<ingest::LabeledSequence>(data, labels, ratio, seed);
}

}  // namespace maldet::text
