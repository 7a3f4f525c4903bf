// Copyright 2026 The Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "xner/error.hpp"

namespace xner {

using TokenId = std::int32_t;

// Entries below this are raised before taking a logarithm.
inline constexpr double kProbabilityFloor = 1e-12;

// Probability vector over a provider's vocabulary at one position.
struct VocabDistribution {
  std::vector<double> probs;

  std::size_t vocab_size() const { return probs.size(); }
  double operator[](std::size_t v) const { return probs[v]; }

  // Entries non-negative and summing to one within 1e-6.
  bool is_valid() const {
    double sum = 0.0;
    for (double p : probs) {
      if (!(p >= 0.0) || !std::isfinite(p)) return false;
      sum += p;
    }
    return !probs.empty() && std::abs(sum - 1.0) <= 1e-6;
  }
};

// Softmax in double precision.
template <typename T>
VocabDistribution softmax(std::span<const T> logits) {
  VocabDistribution out;
  out.probs.resize(logits.size());
  double mx = -INFINITY;
  for (auto x : logits) mx = std::max(mx, static_cast<double>(x));
  double sum = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    out.probs[k] = std::exp(static_cast<double>(logits[k]) - mx);
    sum += out.probs[k];
  }
  for (auto& p : out.probs) p /= sum;
  return out;
}

// q with every entry raised to at least kProbabilityFloor, renormalised.
// Returned unchanged when no entry needs raising.
inline std::vector<double> floored(const std::vector<double>& q) {
  bool low = false;
  for (double x : q) low = low || x < kProbabilityFloor;
  if (!low) return q;
  std::vector<double> out(q.size());
  double sum = 0.0;
  for (std::size_t k = 0; k < q.size(); ++k) {
    out[k] = std::max(q[k], kProbabilityFloor);
    sum += out[k];
  }
  for (auto& x : out) x /= sum;
  return out;
}

inline bool nearly_identical(const VocabDistribution& p, const VocabDistribution& q) {
  for (std::size_t v = 0; v < p.probs.size(); ++v)
    if (std::abs(p.probs[v] - q.probs[v]) > kProbabilityFloor) return false;
  return true;
}

// KL(p || q) in nats. p is the reference (original context) distribution.
// Terms with p_v = 0 contribute nothing; q is floored before the log.
// Distributions that agree entrywise within 1e-12 have divergence exactly 0.
inline double kl_divergence(const VocabDistribution& p, const VocabDistribution& q) {
  if (p.vocab_size() != q.vocab_size())
    throw std::invalid_argument("kl_divergence: vocabulary sizes differ (" +
                                std::to_string(p.vocab_size()) + " vs " +
                                std::to_string(q.vocab_size()) + ")");
  if (nearly_identical(p, q)) return 0.0;
  const auto qf = floored(q.probs);
  double sum = 0.0;
  for (std::size_t v = 0; v < p.probs.size(); ++v) {
    const double pv = p.probs[v];
    if (pv > 0.0) sum += pv * std::log(pv / qf[v]);
  }
  return std::max(sum, 0.0);
}

// ---------------------------------------------------------------------------
// Providers

enum class LmMode { mlm, clm };

inline std::string_view to_string(LmMode m) { return m == LmMode::mlm ? "MLM" : "CLM"; }

// Inclusive range of provider-token positions covering one word.
struct TokenRange {
  int first = 0;
  int last = 0;

  int size() const { return last - first + 1; }
  bool operator==(const TokenRange&) const = default;
};

// Provider token ids for a word sequence, including any special prefix and
// suffix tokens, plus the provider positions of every word.
struct ProviderTokenization {
  std::vector<TokenId> ids;
  std::vector<TokenRange> word_to_range;

  std::size_t word_count() const { return word_to_range.size(); }

  // Provider range covering words [first_word, last_word].
  TokenRange range_of(int first_word, int last_word) const {
    return {word_to_range.at(first_word).first, word_to_range.at(last_word).last};
  }

  // Ranges are ordered, contiguous, non-empty and inside ids.
  bool is_consistent() const {
    int next = word_to_range.empty() ? 0 : word_to_range.front().first;
    for (const auto& r : word_to_range) {
      if (r.first != next || r.last < r.first) return false;
      next = r.last + 1;
    }
    return word_to_range.empty() || (word_to_range.front().first >= 0 &&
                                      next <= static_cast<int>(ids.size()));
  }
};

// One distribution request: predict position `position` of `ids`. MLM
// providers mask `position` and every entry of `also_masked`; CLM providers
// condition on ids[0, position) only.
struct DistributionQuery {
  std::vector<TokenId> ids;
  int position = 0;
  std::vector<int> also_masked;
};

// Source of per-position vocabulary distributions and hidden states.
//
// Implementations must be safe for concurrent const calls and deterministic:
// the same query returns a bit-identical vector regardless of what else is in
// the batch. distributions() counts every query it serves.
class DistributionProvider {
 public:
  virtual ~DistributionProvider() = default;

  virtual LmMode mode() const = 0;
  virtual std::size_t vocab_size() const = 0;
  virtual std::size_t hidden_size() const = 0;
  virtual std::optional<TokenId> mask_token() const = 0;
  virtual std::optional<TokenId> unknown_token() const = 0;
  virtual ProviderTokenization tokenize(std::span<const std::string> words) const = 0;
  // One row of hidden_size() values per provider token.
  virtual std::vector<std::vector<double>> hidden_states(const ProviderTokenization& t) const = 0;
  virtual std::string token_text(TokenId id) const = 0;
  // Stable identity of the model and tokenizer, stored with trained taggers.
  virtual std::string fingerprint() const = 0;

  std::vector<VocabDistribution> distributions(std::span<const DistributionQuery> batch) const {
    for (const auto& q : batch) {
      if (q.position < 0 || q.position >= static_cast<int>(q.ids.size()))
        throw std::out_of_range("distribution query position " + std::to_string(q.position) +
                                " outside sequence of length " + std::to_string(q.ids.size()));
      if (mode() == LmMode::clm && q.position == 0)
        throw std::out_of_range("causal query at position 0 has no prefix");
    }
    served_.fetch_add(batch.size(), std::memory_order_relaxed);
    return compute(batch);
  }

  VocabDistribution distribution_at(const ProviderTokenization& t, int position) const {
    DistributionQuery q{t.ids, position, {}};
    return distributions(std::span<const DistributionQuery>(&q, 1)).front();
  }

  std::uint64_t queries_served() const { return served_.load(std::memory_order_relaxed); }

 protected:
  virtual std::vector<VocabDistribution> compute(std::span<const DistributionQuery> batch) const = 0;

 private:
  mutable std::atomic<std::uint64_t> served_{0};
};

// 64-bit FNV-1a, used for provider fingerprints.
inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 14695981039346656037ull) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int k = 15; k >= 0; --k, v >>= 4) s[k] = kDigits[v & 0xf];
  return s;
}

}  // namespace xner
