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
#include <cstdio>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "xner/corpus.hpp"
#include "xner/scorer.hpp"

namespace xner {

inline double f1_from(double p, double r) { return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0; }

struct Prf {
  std::size_t correct = 0;
  std::size_t predicted = 0;
  std::size_t gold = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;

  void finish() {
    precision = predicted > 0 ? static_cast<double>(correct) / predicted : 0.0;
    recall = gold > 0 ? static_cast<double>(correct) / gold : 0.0;
    f1 = f1_from(precision, recall);
  }
};

struct EntityScores {
  std::map<std::string, Prf> per_type;
  Prf micro;
};

// Exact-match entity scoring. Sentences are aligned by position and must
// carry the same tokens.
inline EntityScores entity_prf(std::span<const TaggedSentence> pred, std::span<const TaggedSentence> gold) {
  if (pred.size() != gold.size())
    throw DataError("prediction has " + std::to_string(pred.size()) + " sentences, gold has " +
                    std::to_string(gold.size()));
  EntityScores out;
  for (std::size_t k = 0; k < pred.size(); ++k) {
    if (pred[k].sentence.tokens != gold[k].sentence.tokens)
      throw DataError("sentence " + std::to_string(k) + " differs between prediction and gold");
    const auto pe = entities_from_bio(repair_bio(pred[k].tags), static_cast<int>(k));
    const auto ge = entities_from_bio(repair_bio(gold[k].tags), static_cast<int>(k));
    const std::set<Entity> gs(ge.begin(), ge.end());
    for (const auto& e : pe) {
      ++out.per_type[e.type].predicted;
      if (gs.count(e)) ++out.per_type[e.type].correct;
    }
    for (const auto& e : ge) ++out.per_type[e.type].gold;
  }
  for (auto& [type, prf] : out.per_type) {
    prf.finish();
    out.micro.correct += prf.correct;
    out.micro.predicted += prf.predicted;
    out.micro.gold += prf.gold;
  }
  out.micro.finish();
  return out;
}

// Share of the first min(k, |ranked|) spans that match a gold occurrence of
// the same type. Each (sentence, span) counts once.
inline double precision_at_k(std::span<const ScoredSpan> ranked, std::span<const Entity> gold, std::size_t k) {
  if (k == 0) throw UsageError("k must be >= 1");
  const std::size_t n = std::min(k, ranked.size());
  if (n == 0) return 0.0;
  const std::set<Entity> gs(gold.begin(), gold.end());
  std::set<Entity> seen;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i) {
    Entity e{ranked[i].span, ranked[i].type_label};
    if (gs.count(e) && seen.insert(e).second) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

inline nlohmann::json to_json(const Prf& p) {
  return {{"precision", p.precision}, {"recall", p.recall}, {"f1", p.f1},
          {"correct", p.correct},     {"predicted", p.predicted}, {"gold", p.gold}};
}

inline nlohmann::json to_json(const EntityScores& s) {
  nlohmann::json j;
  j["micro"] = to_json(s.micro);
  j["types"] = nlohmann::json::object();
  for (const auto& [type, prf] : s.per_type) j["types"][type] = to_json(prf);
  return j;
}

// Percentages, one row per type plus the micro average.
inline std::string format_table(const EntityScores& s) {
  std::size_t w = 5;
  for (const auto& [type, prf] : s.per_type) w = std::max(w, type.size());
  std::ostringstream out;
  char buf[160];
  auto row = [&](const std::string& name, const Prf& p) {
    std::snprintf(buf, sizeof buf, "%-*s %7.2f %7.2f %7.2f %7zu %7zu %7zu\n", static_cast<int>(w), name.c_str(),
                  100.0 * p.precision, 100.0 * p.recall, 100.0 * p.f1, p.correct, p.predicted, p.gold);
    out << buf;
  };
  std::snprintf(buf, sizeof buf, "%-*s %7s %7s %7s %7s %7s %7s\n", static_cast<int>(w), "type", "P", "R", "F1",
                "correct", "pred", "gold");
  out << buf;
  for (const auto& [type, prf] : s.per_type) row(type, prf);
  row("micro", s.micro);
  return out.str();
}

}  // namespace xner
