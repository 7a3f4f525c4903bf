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

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "xner/corpus.hpp"
#include "xner/lm.hpp"

namespace xner {

inline std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  for (auto w : detail::split_ws(text)) out.emplace_back(w);
  return out;
}

// One entity type's supervision: a label, a context-free seed entity, and
// the annotation-free context that hosts the seed.
//
// MLM context: "The <label>: <seed>"   (the colon stays attached to the label)
// CLM context: "<seed> is a/an <label> name"
struct SeedSpec {
  std::string type_label;
  std::string tag;  // BIO type written for mined spans
  std::vector<std::string> seed_tokens;
  Sentence context;
  int seed_first = 0;  // word positions of the seed inside `context`
  int seed_last = 0;
};

inline std::string indefinite_article(std::string_view word) {
  if (word.empty()) return "a";
  const char c = static_cast<char>(std::tolower(static_cast<unsigned char>(word.front())));
  return std::string_view("aeiou").find(c) != std::string_view::npos ? "an" : "a";
}

// "Creative work" -> "Creative_work"
inline std::string tag_for_label(std::string_view label) {
  std::string out;
  for (auto w : detail::split_ws(label)) {
    if (!out.empty()) out += '_';
    out += w;
  }
  return out;
}

inline SeedSpec make_seed_spec(const std::string& type_label, const std::string& seed,
                               LmMode mode = LmMode::mlm, std::string tag = {}) {
  SeedSpec s;
  s.type_label = type_label;
  s.tag = tag.empty() ? tag_for_label(type_label) : std::move(tag);
  if (s.tag.find_first_of(" \t") != std::string::npos) throw DataError("tag type contains whitespace: " + s.tag);
  s.seed_tokens = split_words(seed);
  const auto label_words = split_words(type_label);
  if (label_words.empty()) throw DataError("seed type label is empty");
  if (s.seed_tokens.empty()) throw DataError("seed entity for '" + type_label + "' is empty");
  std::vector<std::string> words;
  if (mode == LmMode::mlm) {
    words.push_back("The");
    words.insert(words.end(), label_words.begin(), label_words.end());
    words.back() += ":";
    s.seed_first = static_cast<int>(words.size());
    words.insert(words.end(), s.seed_tokens.begin(), s.seed_tokens.end());
    s.seed_last = static_cast<int>(words.size()) - 1;
  } else {
    words = s.seed_tokens;
    s.seed_first = 0;
    s.seed_last = static_cast<int>(words.size()) - 1;
    words.push_back("is");
    words.push_back(indefinite_article(label_words.front()));
    words.insert(words.end(), label_words.begin(), label_words.end());
    words.push_back("name");
  }
  s.context = make_sentence(-1, std::move(words));
  return s;
}

// Score of one candidate span against one seed; type_label holds the seed's tag. Divergence scorers store a
// distance (lower is more similar); cosine and prompt scorers store a
// similarity in the same fields.
struct ScoredSpan {
  Span span;
  std::string type_label;
  double x_side = 0.0;
  double y_side = 0.0;
  double total = 0.0;

  bool operator==(const ScoredSpan&) const = default;
};

// Which context positions a one-way test compares. Explicit positions are
// provider-token positions in the original (unsubstituted) tokenization.
struct NeighborSet {
  enum class Kind { adjacent, all, explicit_positions };
  Kind kind = Kind::adjacent;
  std::vector<int> positions;

  static NeighborSet adjacent() { return {}; }
  static NeighborSet all() { return {Kind::all, {}}; }
  static NeighborSet at(std::vector<int> p) { return {Kind::explicit_positions, std::move(p)}; }
};

// Reference distributions of one unsubstituted context, keyed by provider
// position. Lets callers reuse them across many span tests.
struct ContextDistributions {
  ProviderTokenization tokens;
  std::unordered_map<int, VocabDistribution> at;
};

namespace detail {

// A substituted context and the position pairs compared across it.
struct SideTest {
  ProviderTokenization original;
  ProviderTokenization replaced;
  TokenRange original_range;
  TokenRange replaced_range;
  std::vector<std::pair<int, int>> pairs;  // (original position, replaced position)
};

inline int map_position(const SideTest& t, int p) {
  if (p < t.original_range.first) return p;
  return p + (t.replaced_range.size() - t.original_range.size());
}

inline std::vector<int> context_positions(const ProviderTokenization& tok, int first_word, int last_word,
                                          const NeighborSet& which, LmMode mode) {
  std::vector<int> out;
  const int n = static_cast<int>(tok.word_count());
  const TokenRange range = tok.range_of(first_word, last_word);
  switch (which.kind) {
    case NeighborSet::Kind::adjacent:
      if (mode == LmMode::mlm && first_word > 0) out.push_back(tok.word_to_range[first_word - 1].last);
      if (last_word + 1 < n) out.push_back(tok.word_to_range[last_word + 1].first);
      break;
    case NeighborSet::Kind::all:
      for (int w = 0; w < n; ++w) {
        if (w >= first_word && w <= last_word) continue;
        if (mode == LmMode::clm && w < first_word) continue;
        for (int p = tok.word_to_range[w].first; p <= tok.word_to_range[w].last; ++p) out.push_back(p);
      }
      break;
    case NeighborSet::Kind::explicit_positions: {
      const int lo = tok.word_to_range.front().first;
      const int hi = tok.word_to_range.back().last;
      for (int p : which.positions) {
        if (p < lo || p > hi) throw DataError("neighbor position " + std::to_string(p) + " is not a word token");
        if (p >= range.first && p <= range.last)
          throw DataError("neighbor position " + std::to_string(p) + " lies inside the span");
        out.push_back(p);
      }
      std::sort(out.begin(), out.end());
      out.erase(std::unique(out.begin(), out.end()), out.end());
      break;
    }
  }
  return out;
}

inline SideTest make_side(const DistributionProvider& provider, const Sentence& context, const Span& span,
                          std::span<const std::string> replacement, const NeighborSet& which,
                          const ProviderTokenization* pre_tokenized = nullptr) {
  if (!span_fits(span, context.size())) throw DataError("span out of sentence bounds");
  if (replacement.empty()) throw DataError("replacement is empty");
  SideTest t;
  t.original = pre_tokenized != nullptr ? *pre_tokenized : provider.tokenize(context.tokens);
  const Sentence replaced = substitute(context, span, replacement);
  t.replaced = provider.tokenize(replaced.tokens);
  t.original_range = t.original.range_of(span.start, span.end);
  t.replaced_range = t.replaced.range_of(span.start, span.start + static_cast<int>(replacement.size()) - 1);
  for (int p : context_positions(t.original, span.start, span.end, which, provider.mode())) {
    const int q = map_position(t, p);
    if (q < 0 || q >= static_cast<int>(t.replaced.ids.size()) || t.replaced.ids[q] != t.original.ids[p])
      throw ProviderError("tokenizer is not word-local: context token moved under substitution");
    t.pairs.emplace_back(p, q);
  }
  return t;
}

// Fetches every distribution the tests need in one provider batch. Entries
// available in a reference cache are taken from there instead.
struct FetchedSide {
  std::vector<VocabDistribution> original;
  std::vector<VocabDistribution> replaced;
};

inline std::vector<FetchedSide> fetch(const DistributionProvider& provider, std::span<const SideTest> sides,
                                      std::span<const ContextDistributions* const> caches) {
  std::vector<DistributionQuery> queries;
  struct Slot {
    std::size_t side;
    std::size_t pair;
    bool original;
  };
  std::vector<Slot> slots;
  std::vector<FetchedSide> out(sides.size());
  for (std::size_t s = 0; s < sides.size(); ++s) {
    const auto* cache = s < caches.size() ? caches[s] : nullptr;
    out[s].original.resize(sides[s].pairs.size());
    out[s].replaced.resize(sides[s].pairs.size());
    for (std::size_t k = 0; k < sides[s].pairs.size(); ++k) {
      const auto [p, q] = sides[s].pairs[k];
      const VocabDistribution* hit = nullptr;
      if (cache != nullptr) {
        auto it = cache->at.find(p);
        if (it != cache->at.end()) hit = &it->second;
      }
      if (hit != nullptr) {
        out[s].original[k] = *hit;
      } else {
        queries.push_back({sides[s].original.ids, p, {}});
        slots.push_back({s, k, true});
      }
      queries.push_back({sides[s].replaced.ids, q, {}});
      slots.push_back({s, k, false});
    }
  }
  if (queries.empty()) return out;
  auto dists = provider.distributions(queries);
  for (std::size_t k = 0; k < slots.size(); ++k) {
    auto& dst = slots[k].original ? out[slots[k].side].original : out[slots[k].side].replaced;
    dst[slots[k].pair] = std::move(dists[k]);
  }
  return out;
}

inline double side_distance(const FetchedSide& f) {
  double sum = 0.0;
  for (std::size_t k = 0; k < f.original.size(); ++k) sum += kl_divergence(f.original[k], f.replaced[k]);
  return sum;
}

inline Span seed_span(const SeedSpec& seed) { return {seed.context.id, seed.seed_first, seed.seed_last}; }

}  // namespace detail

// Sum over the chosen context positions of KL(f(x_k|X) || f(x_k|X[span -> replacement])).
inline double one_way_distance(const Sentence& sentence, const Span& span, std::span<const std::string> replacement,
                               const DistributionProvider& provider,
                               const NeighborSet& neighbors = NeighborSet::adjacent()) {
  const auto side = detail::make_side(provider, sentence, span, replacement, neighbors);
  if (side.pairs.empty()) throw NoContextError("span has no context position to compare");
  const auto fetched = detail::fetch(provider, std::span<const detail::SideTest>(&side, 1), {});
  return detail::side_distance(fetched.front());
}

// Reference distributions for `context` at the given provider positions.
inline ContextDistributions precompute_context(const DistributionProvider& provider, const Sentence& context,
                                               std::vector<int> positions) {
  ContextDistributions c;
  c.tokens = provider.tokenize(context.tokens);
  std::sort(positions.begin(), positions.end());
  positions.erase(std::unique(positions.begin(), positions.end()), positions.end());
  std::vector<DistributionQuery> queries;
  for (int p : positions)
    if (!(provider.mode() == LmMode::clm && p == 0)) queries.push_back({c.tokens.ids, p, {}});
  if (queries.empty()) return c;
  auto dists = provider.distributions(queries);
  for (std::size_t k = 0; k < queries.size(); ++k) c.at.emplace(queries[k].position, std::move(dists[k]));
  return c;
}

// Every position an adjacent-neighbour test in this sentence can ask for.
inline ContextDistributions precompute_sentence(const DistributionProvider& provider, const Sentence& sentence) {
  const auto tok = provider.tokenize(sentence.tokens);
  std::vector<int> positions;
  for (const auto& r : tok.word_to_range) {
    positions.push_back(r.first);
    positions.push_back(r.last);
  }
  return precompute_context(provider, sentence, std::move(positions));
}

// Every position a seed-context test can ask for.
inline ContextDistributions precompute_seed(const DistributionProvider& provider, const SeedSpec& seed) {
  const auto tok = provider.tokenize(seed.context.tokens);
  return precompute_context(
      provider, seed.context,
      detail::context_positions(tok, seed.seed_first, seed.seed_last, NeighborSet::all(), provider.mode()));
}

// Two-way divergence distance: the X side swaps the span for the seed and
// compares the span's adjacent tokens; the Y side swaps the seed inside its
// context for the span and compares every other context token.
inline ScoredSpan two_way_distance(const Sentence& sentence, const Span& span, const SeedSpec& seed,
                                   const DistributionProvider& provider,
                                   const ContextDistributions* sentence_cache = nullptr,
                                   const ContextDistributions* seed_cache = nullptr) {
  const auto span_words = span_tokens(sentence, span);
  const detail::SideTest sides[2] = {
      detail::make_side(provider, sentence, span, seed.seed_tokens, NeighborSet::adjacent(),
                        sentence_cache ? &sentence_cache->tokens : nullptr),
      detail::make_side(provider, seed.context, detail::seed_span(seed), span_words, NeighborSet::all(),
                        seed_cache ? &seed_cache->tokens : nullptr)};
  if (sides[0].pairs.empty()) throw NoContextError("span covers the whole sentence");
  const ContextDistributions* caches[2] = {sentence_cache, seed_cache};
  const auto fetched = detail::fetch(provider, sides, caches);
  ScoredSpan out{span, seed.tag};
  out.x_side = detail::side_distance(fetched[0]);
  out.y_side = detail::side_distance(fetched[1]);
  out.total = out.x_side + out.y_side;
  return out;
}

// X-side-only variant of the divergence test.
inline ScoredSpan one_way_score(const Sentence& sentence, const Span& span, const SeedSpec& seed,
                                const DistributionProvider& provider,
                                const ContextDistributions* sentence_cache = nullptr) {
  const auto side = detail::make_side(provider, sentence, span, seed.seed_tokens, NeighborSet::adjacent(),
                                      sentence_cache ? &sentence_cache->tokens : nullptr);
  if (side.pairs.empty()) throw NoContextError("span covers the whole sentence");
  const ContextDistributions* caches[1] = {sentence_cache};
  const auto fetched = detail::fetch(provider, std::span<const detail::SideTest>(&side, 1), caches);
  ScoredSpan out{span, seed.tag};
  out.x_side = detail::side_distance(fetched.front());
  out.total = out.x_side;
  return out;
}

// ---------------------------------------------------------------------------
// Cosine baseline

namespace detail {

inline std::vector<double> mean_pool(const std::vector<std::vector<double>>& h, TokenRange r) {
  std::vector<double> out(h.at(r.first).size(), 0.0);
  for (int p = r.first; p <= r.last; ++p)
    for (std::size_t d = 0; d < out.size(); ++d) out[d] += h[p][d];
  for (auto& x : out) x /= r.size();
  return out;
}

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t d = 0; d < a.size(); ++d) {
    dot += a[d] * b[d];
    na += a[d] * a[d];
    nb += b[d] * b[d];
  }
  if (na == 0.0 || nb == 0.0) throw DataError("zero-norm pooled representation");
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

// Cosine between the pooled original span and the pooled replacement in the
// substituted context.
inline double substitution_cosine(const DistributionProvider& provider, const Sentence& context, const Span& span,
                                  std::span<const std::string> replacement) {
  const auto original = provider.tokenize(context.tokens);
  const auto replaced_words = substitute(context, span, replacement);
  const auto replaced = provider.tokenize(replaced_words.tokens);
  const auto a = mean_pool(provider.hidden_states(original), original.range_of(span.start, span.end));
  const auto b = mean_pool(provider.hidden_states(replaced),
                           replaced.range_of(span.start, span.start + static_cast<int>(replacement.size()) - 1));
  return cosine(a, b);
}

}  // namespace detail

// Two-way cosine similarity in [-2, 2]; higher is more similar.
inline ScoredSpan cosine_scores(const Sentence& sentence, const Span& span, const SeedSpec& seed,
                                const DistributionProvider& provider) {
  const auto span_words = span_tokens(sentence, span);
  ScoredSpan out{span, seed.tag};
  out.x_side = detail::substitution_cosine(provider, sentence, span, seed.seed_tokens);
  // Y side: the span inside the seed context against the seed itself.
  const Sentence y_replaced = substitute(seed.context, detail::seed_span(seed), span_words);
  const Span x_in_y{seed.context.id, seed.seed_first, seed.seed_first + static_cast<int>(span_words.size()) - 1};
  out.y_side = detail::substitution_cosine(provider, y_replaced, x_in_y, seed.seed_tokens);
  out.total = out.x_side + out.y_side;
  return out;
}

inline double cosine_similarity_score(const Sentence& sentence, const Span& span, const SeedSpec& seed,
                                      const DistributionProvider& provider) {
  return cosine_scores(sentence, span, seed, provider).total;
}

// ---------------------------------------------------------------------------
// Prompt-probability baseline

// Words of the prompt "X, <span> is a/an <label> entity." (MLM) or
// "X, <span> is a/an <label>" (CLM), with the label's word range.
struct PromptWords {
  std::vector<std::string> words;
  int label_first = 0;
  int label_last = 0;
};

inline PromptWords prompt_words(const Sentence& sentence, const Span& span, const std::string& type_label,
                                LmMode mode) {
  const auto label = split_words(type_label);
  if (label.empty()) throw DataError("type label is empty");
  PromptWords p;
  p.words = sentence.tokens;
  p.words.back() += ",";
  const auto sw = span_tokens(sentence, span);
  p.words.insert(p.words.end(), sw.begin(), sw.end());
  p.words.push_back("is");
  p.words.push_back(indefinite_article(label.front()));
  p.label_first = static_cast<int>(p.words.size());
  p.words.insert(p.words.end(), label.begin(), label.end());
  p.label_last = static_cast<int>(p.words.size()) - 1;
  if (mode == LmMode::mlm) p.words.push_back("entity.");
  return p;
}

// Probability that the provider fills the prompt's label slot with the
// label. Multi-token labels multiply per-token probabilities, predicting
// left to right with the not-yet-predicted tokens masked.
inline double prompt_probability(const Sentence& sentence, const Span& span, const std::string& type_label,
                                 const DistributionProvider& provider) {
  const auto p = prompt_words(sentence, span, type_label, provider.mode());
  const auto tok = provider.tokenize(p.words);
  const auto range = tok.range_of(p.label_first, p.label_last);
  const auto unk = provider.unknown_token();
  for (int k = range.first; k <= range.last; ++k)
    if (unk && tok.ids[k] == *unk) throw DataError("label '" + type_label + "' is not in the provider vocabulary");
  if (provider.mode() == LmMode::mlm && !provider.mask_token()) throw ProviderError("MLM provider without mask token");
  std::vector<DistributionQuery> queries;
  for (int k = range.first; k <= range.last; ++k) {
    DistributionQuery q{tok.ids, k, {}};
    if (provider.mode() == LmMode::mlm)
      for (int m = k + 1; m <= range.last; ++m) q.also_masked.push_back(m);
    queries.push_back(std::move(q));
  }
  const auto dists = provider.distributions(queries);
  double prob = 1.0;
  for (std::size_t k = 0; k < dists.size(); ++k) prob *= dists[k].probs.at(tok.ids[range.first + k]);
  return prob;
}

// ---------------------------------------------------------------------------
// Supervisor-wise explanation

enum class Side { x, y };

inline std::string_view to_string(Side s) { return s == Side::x ? "x" : "y"; }

// Contribution of one vocabulary item v at one context position:
// p(v | original) * ln(p(v | original) / p(v | substituted)).
struct SupervisorWeight {
  Side side = Side::x;
  int position = 0;  // provider position in the original context
  TokenId vocab_id = 0;
  std::string token;
  double weight = 0.0;
  double p_original = 0.0;
  double p_replaced = 0.0;
};

struct PositionDivergence {
  Side side = Side::x;
  int position = 0;
  std::string context_token;
  double kl = 0.0;
};

struct Explanation {
  ScoredSpan score;
  std::vector<PositionDivergence> positions;
  // Per position, sorted by descending weight and cut to top_k (0 keeps all).
  std::vector<SupervisorWeight> supervisors;
};

inline Explanation explain(const Sentence& sentence, const Span& span, const SeedSpec& seed,
                           const DistributionProvider& provider, std::size_t top_k) {
  const auto span_words = span_tokens(sentence, span);
  const detail::SideTest sides[2] = {
      detail::make_side(provider, sentence, span, seed.seed_tokens, NeighborSet::adjacent()),
      detail::make_side(provider, seed.context, detail::seed_span(seed), span_words, NeighborSet::all())};
  if (sides[0].pairs.empty()) throw NoContextError("span covers the whole sentence");
  const auto fetched = detail::fetch(provider, sides, {});
  Explanation out;
  out.score = {span, seed.tag};
  for (int s = 0; s < 2; ++s) {
    const Side side = s == 0 ? Side::x : Side::y;
    for (std::size_t k = 0; k < sides[s].pairs.size(); ++k) {
      const auto& p = fetched[s].original[k];
      const auto& q = fetched[s].replaced[k];
      const int pos = sides[s].pairs[k].first;
      const double kl = kl_divergence(p, q);
      out.positions.push_back({side, pos, provider.token_text(sides[s].original.ids[pos]), kl});
      (s == 0 ? out.score.x_side : out.score.y_side) += kl;
      const bool same = nearly_identical(p, q);
      const auto qf = floored(q.probs);
      std::vector<SupervisorWeight> ws;
      ws.reserve(p.probs.size());
      for (std::size_t v = 0; v < p.probs.size(); ++v) {
        const double pv = p.probs[v];
        const double w = (same || pv <= 0.0) ? 0.0 : pv * std::log(pv / qf[v]);
        ws.push_back({side, pos, static_cast<TokenId>(v), {}, w, pv, q.probs[v]});
      }
      std::stable_sort(ws.begin(), ws.end(), [](const auto& a, const auto& b) { return a.weight > b.weight; });
      if (top_k > 0 && ws.size() > top_k) ws.resize(top_k);
      for (auto& w : ws) w.token = provider.token_text(w.vocab_id);
      out.supervisors.insert(out.supervisors.end(), ws.begin(), ws.end());
    }
  }
  out.score.total = out.score.x_side + out.score.y_side;
  return out;
}

}  // namespace xner
