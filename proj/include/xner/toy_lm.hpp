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
#include <map>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "xner/corpus.hpp"
#include "xner/lm.hpp"

namespace xner {

// Word-level bigram masked LM fitted on a corpus. Deterministic and exact,
// used as a stand-in for a pretrained model in tests and small runs.
//
// The distribution at position k mixes the two neighbour bigrams:
//   0.5 * P(w | word on the left) + 0.5 * P(w | word on the right)
// with add-`smoothing` estimates over the vocabulary. Sentence edges use
// begin/end markers; unseen or masked neighbours give a uniform component.
// Hidden states are per-word co-occurrence rows, L2-normalised.
class ToyLm final : public DistributionProvider {
 public:
  ToyLm(std::span<const Sentence> corpus, double smoothing) : smoothing_(smoothing) {
    if (corpus.empty()) throw DataError("toy LM needs a non-empty corpus");
    if (!(smoothing >= 0.0)) throw UsageError("toy LM smoothing must be >= 0");
    std::map<std::string, int> sorted;
    for (const auto& s : corpus)
      for (const auto& t : s.tokens) sorted.emplace(t, 0);
    for (auto& [w, id] : sorted) {
      id = static_cast<int>(words_.size());
      words_.push_back(w);
      ids_.emplace(w, id);
    }
    unk_ = static_cast<TokenId>(words_.size());
    words_.push_back("<unk>");
    const int v = static_cast<int>(words_.size());
    bos_ = v;
    eos_ = v + 1;

    std::vector<std::map<int, double>> left(v + 2), right(v + 2), cooc(v);
    for (const auto& s : corpus) {
      const int n = static_cast<int>(s.size());
      for (int k = 0; k < n; ++k) {
        const int w = ids_.at(s.tokens[k]);
        const int l = k > 0 ? ids_.at(s.tokens[k - 1]) : bos_;
        const int r = k + 1 < n ? ids_.at(s.tokens[k + 1]) : eos_;
        left[l][w] += 1.0;
        right[r][w] += 1.0;
        cooc[w][l] += 1.0;
        cooc[w][r] += 1.0;
      }
    }
    auto pack = [](const std::vector<std::map<int, double>>& m, std::vector<Row>& rows) {
      rows.resize(m.size());
      for (std::size_t c = 0; c < m.size(); ++c) {
        rows[c].entries.assign(m[c].begin(), m[c].end());
        for (const auto& e : rows[c].entries) rows[c].total += e.second;
      }
    };
    pack(left, left_);
    pack(right, right_);
    pack(cooc, cooc_);

    std::uint64_t h = fnv1a("toy-lm");
    h = fnv1a(std::to_string(smoothing_), h);
    for (const auto& w : words_) h = fnv1a(w + '\n', h);
    for (const auto* rows : {&left_, &right_})
      for (const auto& row : *rows)
        for (const auto& [w, c] : row.entries) h = fnv1a(std::to_string(w) + ':' + std::to_string(c), h);
    fingerprint_ = "toy:" + hex64(h);
  }

  LmMode mode() const override { return LmMode::mlm; }
  std::size_t vocab_size() const override { return words_.size(); }
  std::size_t hidden_size() const override { return words_.size() + 2; }
  std::optional<TokenId> mask_token() const override { return static_cast<TokenId>(words_.size()); }
  std::optional<TokenId> unknown_token() const override { return unk_; }
  std::string fingerprint() const override { return fingerprint_; }
  double smoothing() const { return smoothing_; }

  TokenId id_of(const std::string& word) const {
    auto it = ids_.find(word);
    return it == ids_.end() ? unk_ : it->second;
  }

  std::string token_text(TokenId id) const override {
    if (id >= 0 && id < static_cast<TokenId>(words_.size())) return words_[id];
    return id == static_cast<TokenId>(words_.size()) ? "<mask>" : "<?>";
  }

  ProviderTokenization tokenize(std::span<const std::string> words) const override {
    ProviderTokenization t;
    for (std::size_t k = 0; k < words.size(); ++k) {
      t.ids.push_back(id_of(words[k]));
      t.word_to_range.push_back({static_cast<int>(k), static_cast<int>(k)});
    }
    return t;
  }

  std::vector<std::vector<double>> hidden_states(const ProviderTokenization& t) const override {
    std::vector<std::vector<double>> out;
    out.reserve(t.ids.size());
    for (TokenId id : t.ids) {
      std::vector<double> row(hidden_size(), 0.0);
      if (id >= 0 && id < unk_) {
        double norm = 0.0;
        for (const auto& [c, n] : cooc_[id].entries) norm += n * n;
        norm = std::sqrt(norm);
        for (const auto& [c, n] : cooc_[id].entries) row[c] = n / norm;
      }
      out.push_back(std::move(row));
    }
    return out;
  }

 protected:
  std::vector<VocabDistribution> compute(std::span<const DistributionQuery> batch) const override {
    std::vector<VocabDistribution> out;
    out.reserve(batch.size());
    for (const auto& q : batch) out.push_back(at(q));
    return out;
  }

 private:
  struct Row {
    std::vector<std::pair<int, double>> entries;
    double total = 0.0;
  };

  // Context row for a neighbouring token, or nullptr when unseen/masked.
  const Row* context(const std::vector<Row>& rows, const DistributionQuery& q, int k, int edge) const {
    if (k < 0 || k >= static_cast<int>(q.ids.size())) return &rows[edge];
    if (std::find(q.also_masked.begin(), q.also_masked.end(), k) != q.also_masked.end()) return nullptr;
    const TokenId id = q.ids[k];
    if (id < 0 || id >= unk_) return nullptr;
    return &rows[id];
  }

  void add_component(std::vector<double>& probs, const Row* row) const {
    const double v = static_cast<double>(words_.size());
    if (row == nullptr || row->total == 0.0) {
      for (auto& p : probs) p += 0.5 / v;
      return;
    }
    const double denom = row->total + smoothing_ * v;
    for (auto& p : probs) p += 0.5 * smoothing_ / denom;
    for (const auto& [w, c] : row->entries) probs[w] += 0.5 * c / denom;
  }

  VocabDistribution at(const DistributionQuery& q) const {
    VocabDistribution d;
    d.probs.assign(words_.size(), 0.0);
    add_component(d.probs, context(left_, q, q.position - 1, bos_));
    add_component(d.probs, context(right_, q, q.position + 1, eos_));
    return d;
  }

  double smoothing_;
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> ids_;
  TokenId unk_ = 0;
  int bos_ = 0;
  int eos_ = 0;
  std::vector<Row> left_;   // indexed by left-neighbour context, counts of the following word
  std::vector<Row> right_;  // indexed by right-neighbour context, counts of the preceding word
  std::vector<Row> cooc_;
  std::string fingerprint_;
};

inline std::unique_ptr<ToyLm> fit_toy_lm(std::span<const Sentence> corpus, double smoothing) {
  return std::make_unique<ToyLm>(corpus, smoothing);
}

}  // namespace xner
