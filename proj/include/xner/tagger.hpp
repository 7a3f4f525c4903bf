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
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <mutex>
#include <random>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "xner/corpus.hpp"
#include "xner/lm.hpp"

namespace xner {

struct TaggerHyperparams {
  double learning_rate = 0.1;
  int epochs = 100;
  std::size_t batch_size = 32;
  std::uint64_t seed = 13;

  void validate() const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw UsageError("learning rate must be > 0");
    if (epochs < 0) throw UsageError("epochs must be >= 0");
    if (batch_size == 0) throw UsageError("batch size must be >= 1");
  }
};

// Per-tag weight rows over [hidden state, 1].
struct TaggerModel {
  static constexpr int kFormatVersion = 1;

  std::vector<std::string> tags;
  std::size_t dim = 0;
  std::vector<double> weights;  // tags.size() x (dim + 1), row major
  TaggerHyperparams hyperparams;
  std::string provider_fingerprint;

  std::size_t width() const { return dim + 1; }
  bool operator==(const TaggerModel& o) const {
    return tags == o.tags && dim == o.dim && weights == o.weights && provider_fingerprint == o.provider_fingerprint;
  }
};

// "O" first, then the remaining tags sorted; every B-t brings its I-t.
inline std::vector<std::string> closed_tag_set(std::span<const TaggedSentence> data) {
  std::set<std::string> seen;
  for (const auto& ts : data)
    for (const auto& t : ts.tags) {
      const auto parts = split_tag(t);
      if (!parts) throw DataError("not a BIO tag: " + t);
      if (parts->prefix == 'O') continue;
      seen.insert("B-" + parts->type);
      seen.insert("I-" + parts->type);
    }
  std::vector<std::string> out{"O"};
  out.insert(out.end(), seen.begin(), seen.end());
  return out;
}

// One feature row per word: the hidden state of its first provider token.
inline std::vector<std::vector<double>> word_features(const Sentence& s, const DistributionProvider& provider) {
  const auto tok = provider.tokenize(s.tokens);
  const auto h = provider.hidden_states(tok);
  std::vector<std::vector<double>> out;
  out.reserve(s.size());
  for (const auto& r : tok.word_to_range) out.push_back(h.at(r.first));
  return out;
}

// Mean cross-entropy of a softmax regression; exposed for gradient checks.
struct TaggerObjective {
  std::vector<std::vector<double>> x;
  std::vector<int> y;
  std::size_t classes = 0;
  std::size_t dim = 0;

  std::size_t width() const { return dim + 1; }

  void logits(const std::vector<double>& w, std::size_t i, std::vector<double>& z) const {
    z.assign(classes, 0.0);
    for (std::size_t c = 0; c < classes; ++c) {
      const double* row = &w[c * width()];
      double acc = row[dim];
      for (std::size_t d = 0; d < dim; ++d) acc += row[d] * x[i][d];
      z[c] = acc;
    }
  }

  // log-sum-exp of the logits, overwriting z with softmax probabilities.
  static double normalize(std::vector<double>& z) {
    const double m = *std::max_element(z.begin(), z.end());
    double s = 0.0;
    for (auto& v : z) s += (v = std::exp(v - m));
    for (auto& v : z) v /= s;
    return m + std::log(s);
  }

  double loss(const std::vector<double>& w, std::span<const std::size_t> batch) const {
    std::vector<double> z;
    double total = 0.0;
    for (std::size_t i : batch) {
      logits(w, i, z);
      const double target = z[y[i]];
      total += normalize(z) - target;
    }
    return batch.empty() ? 0.0 : total / static_cast<double>(batch.size());
  }

  std::vector<double> gradient(const std::vector<double>& w, std::span<const std::size_t> batch) const {
    std::vector<double> g(w.size(), 0.0);
    std::vector<double> z;
    for (std::size_t i : batch) {
      logits(w, i, z);
      normalize(z);
      z[y[i]] -= 1.0;
      for (std::size_t c = 0; c < classes; ++c) {
        double* row = &g[c * width()];
        for (std::size_t d = 0; d < dim; ++d) row[d] += z[c] * x[i][d];
        row[dim] += z[c];
      }
    }
    if (!batch.empty())
      for (auto& v : g) v /= static_cast<double>(batch.size());
    return g;
  }

  std::vector<std::size_t> all() const {
    std::vector<std::size_t> idx(x.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    return idx;
  }
};

inline TaggerObjective make_objective(std::span<const TaggedSentence> data, const std::vector<std::string>& tags,
                                      const DistributionProvider& provider) {
  TaggerObjective obj;
  obj.classes = tags.size();
  obj.dim = provider.hidden_size();
  for (const auto& ts : data) {
    if (ts.tags.size() != ts.sentence.size()) throw DataError("tag count differs from token count");
    auto feats = word_features(ts.sentence, provider);
    for (std::size_t k = 0; k < feats.size(); ++k) {
      if (feats[k].size() != obj.dim) throw ProviderError("hidden state width differs from hidden_size");
      const auto it = std::find(tags.begin(), tags.end(), ts.tags[k]);
      obj.x.push_back(std::move(feats[k]));
      obj.y.push_back(static_cast<int>(it - tags.begin()));
    }
  }
  return obj;
}

// Fisher-Yates over raw 64-bit draws, so the order is the same on every
// standard library.
inline void shuffle_indices(std::vector<std::size_t>& idx, std::mt19937_64& rng) {
  for (std::size_t i = idx.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(idx[i - 1], idx[j]);
  }
}

// Weights start at zero; mini-batch gradient descent on the mean loss.
inline void fit(TaggerObjective& obj, std::vector<double>& w, const TaggerHyperparams& hp) {
  std::mt19937_64 rng(hp.seed);
  auto order = obj.all();
  for (int epoch = 0; epoch < hp.epochs; ++epoch) {
    shuffle_indices(order, rng);
    for (std::size_t b = 0; b < order.size(); b += hp.batch_size) {
      const std::size_t e = std::min(order.size(), b + hp.batch_size);
      const auto g = obj.gradient(w, std::span<const std::size_t>(order.data() + b, e - b));
      for (std::size_t k = 0; k < w.size(); ++k) w[k] -= hp.learning_rate * g[k];
    }
  }
}

inline TaggerModel train_tagger(std::span<const TaggedSentence> pseudo, const DistributionProvider& provider,
                                const TaggerHyperparams& hp = {}) {
  hp.validate();
  if (pseudo.empty()) throw DataError("pseudo dataset is empty");
  TaggerModel m;
  m.tags = closed_tag_set(pseudo);
  m.dim = provider.hidden_size();
  m.hyperparams = hp;
  m.provider_fingerprint = provider.fingerprint();
  auto obj = make_objective(pseudo, m.tags, provider);
  m.weights.assign(m.tags.size() * m.width(), 0.0);
  fit(obj, m.weights, hp);
  return m;
}

inline Tags predict(const TaggerModel& m, const Sentence& s, const DistributionProvider& provider) {
  const auto feats = word_features(s, provider);
  Tags out;
  out.reserve(feats.size());
  for (const auto& f : feats) {
    if (f.size() != m.dim) throw ProviderError("hidden state width differs from the tagger's");
    std::size_t best = 0;
    double best_score = -INFINITY;
    for (std::size_t c = 0; c < m.tags.size(); ++c) {
      const double* row = &m.weights[c * m.width()];
      double acc = row[m.dim];
      for (std::size_t d = 0; d < m.dim; ++d) acc += row[d] * f[d];
      if (acc > best_score) {
        best_score = acc;
        best = c;
      }
    }
    out.push_back(m.tags[best]);
  }
  return repair_bio(std::move(out));
}

inline std::vector<TaggedSentence> predict_all(const TaggerModel& m, std::span<const Sentence> sentences,
                                               const DistributionProvider& provider, unsigned workers = 1) {
  std::vector<TaggedSentence> out(sentences.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex mu;
  auto work = [&] {
    for (std::size_t k; (k = next.fetch_add(1)) < sentences.size();) {
      try {
        out[k] = {sentences[k], predict(m, sentences[k], provider)};
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failure) failure = std::current_exception();
        next.store(sentences.size());
      }
    }
  };
  workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(sentences.size())));
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

inline nlohmann::json to_json(const TaggerModel& m) {
  return {{"format", "xner-tagger"},
          {"version", TaggerModel::kFormatVersion},
          {"provider", m.provider_fingerprint},
          {"tags", m.tags},
          {"dim", m.dim},
          {"hyperparams",
           {{"learning_rate", m.hyperparams.learning_rate},
            {"epochs", m.hyperparams.epochs},
            {"batch_size", m.hyperparams.batch_size},
            {"seed", m.hyperparams.seed}}},
          {"weights", m.weights}};
}

inline TaggerModel tagger_from_json(const nlohmann::json& j) {
  TaggerModel m;
  try {
    if (j.at("format") != "xner-tagger") throw DataError("not a tagger model file");
    if (j.at("version").get<int>() != TaggerModel::kFormatVersion)
      throw DataError("unsupported tagger model version " + j.at("version").dump());
    m.provider_fingerprint = j.at("provider").get<std::string>();
    m.tags = j.at("tags").get<std::vector<std::string>>();
    m.dim = j.at("dim").get<std::size_t>();
    const auto& hp = j.at("hyperparams");
    m.hyperparams.learning_rate = hp.at("learning_rate").get<double>();
    m.hyperparams.epochs = hp.at("epochs").get<int>();
    m.hyperparams.batch_size = hp.at("batch_size").get<std::size_t>();
    m.hyperparams.seed = hp.at("seed").get<std::uint64_t>();
    m.weights = j.at("weights").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad tagger model: ") + e.what());
  }
  if (m.tags.empty() || m.tags.front() != "O") throw DataError("bad tagger model: tag set must start with O");
  if (m.weights.size() != m.tags.size() * m.width()) throw DataError("bad tagger model: weight count");
  return m;
}

inline std::string save_tagger(const TaggerModel& m) { return to_json(m).dump() + "\n"; }

// Refuses a model trained against a different provider.
inline TaggerModel load_tagger(std::string_view text, const DistributionProvider& provider) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(std::string("bad tagger model: ") + e.what());
  }
  auto m = tagger_from_json(j);
  if (m.provider_fingerprint != provider.fingerprint())
    throw ProviderError("tagger was trained with provider " + m.provider_fingerprint + ", not " +
                        provider.fingerprint());
  return m;
}

}  // namespace xner
