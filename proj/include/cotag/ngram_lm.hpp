#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "cotag/error.hpp"

namespace cotag {

// Add-alpha smoothed n-gram language model used as the native fluency
// scorer. Sentence starts are padded with a begin marker; the vocabulary is
// the set of distinct training tokens plus an end marker that receives only
// smoothing mass, so each conditional distribution sums to one over the
// vocabulary without end-of-sentence events being scored.

inline constexpr const char* kSentenceBegin = "\x02";
inline constexpr const char* kSentenceEnd = "\x03";

struct FluencyScore {
  double total_logprob = 0.0;
  double per_token_logprob = 0.0;
};

class NgramLM {
 public:
  NgramLM() = default;

  static NgramLM train(const std::vector<std::vector<std::string>>& corpus, int order,
                       double alpha) {
    if (order < 1) throw Error("n-gram order must be at least 1");
    if (!(alpha > 0.0)) throw Error("smoothing alpha must be positive");
    if (corpus.empty()) throw Error("cannot train a language model on an empty corpus");
    NgramLM lm;
    lm.order_ = order;
    lm.alpha_ = alpha;
    std::set<std::string> vocab;
    for (const auto& tokens : corpus) {
      for (std::size_t i = 0; i < tokens.size(); ++i) {
        vocab.insert(tokens[i]);
        std::string hist = lm.history_key(tokens, i);
        ++lm.counts_[hist];
        ++lm.counts_[hist.empty() ? tokens[i] : hist + kSep + tokens[i]];
      }
    }
    vocab.insert(kSentenceEnd);
    lm.vocab_.assign(vocab.begin(), vocab.end());
    return lm;
  }

  int order() const { return order_; }
  double alpha() const { return alpha_; }
  std::size_t vocab_size() const { return vocab_.size(); }

  // Distinct training tokens plus the end marker, sorted.
  const std::vector<std::string>& vocabulary() const { return vocab_; }

  // Raw training count of a gram of length order-1 (a history, begin-padded)
  // or length order (history plus word). Exposed for verification.
  std::uint64_t gram_count(std::span<const std::string> gram) const {
    std::string key;
    for (std::size_t i = 0; i < gram.size(); ++i) {
      if (i > 0) key += kSep;
      key += gram[i];
    }
    auto it = counts_.find(key);
    return it == counts_.end() ? 0 : it->second;
  }

  // log P(word | history) with the history truncated to the last order-1
  // items and begin-padded if shorter.
  double cond_logprob(std::span<const std::string> history, const std::string& word) const {
    std::string hist = normalized_history(history);
    double num = static_cast<double>(count_of(hist.empty() ? word : hist + kSep + word)) + alpha_;
    double den = static_cast<double>(count_of(hist)) +
                 alpha_ * static_cast<double>(vocab_.size());
    return std::log(num / den);
  }

  // Total and per-token log-probability of the token sequence. An empty
  // sequence scores zero.
  FluencyScore score(std::span<const std::string> tokens) const {
    FluencyScore s;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      s.total_logprob += cond_logprob(tokens.first(i), tokens[i]);
    }
    if (!tokens.empty()) {
      s.per_token_logprob = s.total_logprob / static_cast<double>(tokens.size());
    }
    return s;
  }

 private:
  static constexpr char kSep = '\x1f';

  std::uint64_t count_of(const std::string& key) const {
    auto it = counts_.find(key);
    return it == counts_.end() ? 0 : it->second;
  }

  // Key for the length order-1 history ending just before position i.
  std::string history_key(const std::vector<std::string>& tokens, std::size_t i) const {
    std::string key;
    for (int k = order_ - 1; k >= 1; --k) {
      std::ptrdiff_t idx = static_cast<std::ptrdiff_t>(i) - k;
      if (!key.empty()) key += kSep;
      key += idx < 0 ? kSentenceBegin : tokens[static_cast<std::size_t>(idx)];
    }
    return key;
  }

  std::string normalized_history(std::span<const std::string> history) const {
    std::string key;
    for (int k = order_ - 1; k >= 1; --k) {
      std::ptrdiff_t idx = static_cast<std::ptrdiff_t>(history.size()) - k;
      if (!key.empty()) key += kSep;
      key += idx < 0 ? kSentenceBegin : history[static_cast<std::size_t>(idx)];
    }
    return key;
  }

  int order_ = 3;
  double alpha_ = 0.1;
  std::vector<std::string> vocab_;
  std::unordered_map<std::string, std::uint64_t> counts_;
};

}  // namespace cotag
