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
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "xner/corpus.hpp"
#include "xner/eval.hpp"
#include "xner/miner.hpp"

namespace xner {

// Maximum coverage over gold occurrences: subset i is the set of
// occurrences mined with seed i.
struct CoverageInstance {
  std::vector<Entity> universe;
  std::vector<std::string> seeds;
  std::vector<std::vector<std::size_t>> subsets;  // indices into universe
  std::size_t budget = 1;

  void validate() const {
    if (budget < 1) throw UsageError("budget must be >= 1");
    if (seeds.size() != subsets.size()) throw DataError("one subset per seed expected");
    for (const auto& s : subsets)
      for (auto e : s)
        if (e >= universe.size()) throw DataError("subset element outside the universe");
  }
};

struct CoverageStep {
  std::size_t subset = 0;
  std::string seed;
  std::size_t marginal = 0;
  std::size_t cumulative = 0;
};

// Repeatedly takes the subset adding the most uncovered elements; the
// earliest subset wins ties. Stops at the budget or when nothing is gained.
inline std::vector<CoverageStep> greedy_cover(const CoverageInstance& inst) {
  inst.validate();
  std::vector<char> covered(inst.universe.size(), 0);
  std::vector<char> used(inst.subsets.size(), 0);
  std::vector<CoverageStep> steps;
  std::size_t total = 0;
  while (steps.size() < inst.budget) {
    std::size_t best = inst.subsets.size();
    std::size_t gain = 0;
    for (std::size_t i = 0; i < inst.subsets.size(); ++i) {
      if (used[i]) continue;
      std::set<std::size_t> fresh;
      for (auto e : inst.subsets[i])
        if (!covered[e]) fresh.insert(e);
      if (fresh.size() > gain) {
        gain = fresh.size();
        best = i;
      }
    }
    if (gain == 0) break;
    used[best] = 1;
    for (auto e : inst.subsets[best]) covered[e] = 1;
    total += gain;
    steps.push_back({best, inst.seeds[best], gain, total});
  }
  return steps;
}

struct DecomposeOptions {
  std::string type_label;  // template label, e.g. "LOC"
  std::string tag;         // gold type; empty: derived from the label
  std::size_t per_seed_top_k = 100;
  // When set, each subset is the correct spans among the longest ranked
  // prefix whose precision is at least this value.
  std::optional<double> min_precision;
  std::size_t budget = 5;
  MiningConfig mining;
};

// Mines the gold corpus with each candidate seed and intersects the result
// with the gold occurrences of the coarse type.
inline CoverageInstance build_instance(std::span<const TaggedSentence> gold, std::span<const std::string> seeds,
                                       const DistributionProvider& provider, const DecomposeOptions& opt) {
  if (opt.min_precision && !(*opt.min_precision >= 0.0 && *opt.min_precision <= 1.0))
    throw UsageError("min_precision must lie in [0, 1]");
  const std::string tag = opt.tag.empty() ? tag_for_label(opt.type_label) : opt.tag;
  CoverageInstance inst;
  inst.budget = opt.budget;
  std::vector<Sentence> corpus;
  for (const auto& ts : gold) corpus.push_back(ts.sentence);
  std::map<Entity, std::size_t> index;
  for (const auto& e : gold_entities(gold)) {
    if (e.type != tag) continue;
    index.emplace(e, inst.universe.size());
    inst.universe.push_back(e);
  }
  MiningConfig cfg = opt.mining;
  cfg.selection = TopK{opt.per_seed_top_k};
  for (const auto& seed : seeds) {
    inst.seeds.push_back(seed);
    auto& subset = inst.subsets.emplace_back();
    if (opt.per_seed_top_k == 0 && !opt.min_precision) continue;
    const SeedSpec spec = make_seed_spec(opt.type_label, seed, provider.mode(), tag);
    const auto scored = score_corpus(corpus, std::span<const SeedSpec>(&spec, 1), provider, cfg);
    const auto& ranked = scored.front().spans;
    std::size_t keep = std::min(ranked.size(), opt.per_seed_top_k);
    if (opt.min_precision) {
      keep = 0;
      std::size_t hits = 0;
      for (std::size_t k = 0; k < ranked.size(); ++k) {
        if (index.count({ranked[k].span, tag})) ++hits;
        if (static_cast<double>(hits) >= *opt.min_precision * static_cast<double>(k + 1)) keep = k + 1;
      }
    }
    std::set<std::size_t> members;
    for (std::size_t k = 0; k < keep; ++k) {
      auto it = index.find({ranked[k].span, tag});
      if (it != index.end()) members.insert(it->second);
    }
    subset.assign(members.begin(), members.end());
  }
  return inst;
}

inline nlohmann::json coverage_report(const CoverageInstance& inst, const std::vector<CoverageStep>& steps) {
  nlohmann::json j;
  j["universe"] = inst.universe.size();
  j["budget"] = inst.budget;
  j["candidates"] = nlohmann::json::array();
  for (std::size_t i = 0; i < inst.seeds.size(); ++i)
    j["candidates"].push_back({{"seed", inst.seeds[i]}, {"mined", inst.subsets[i].size()}});
  j["steps"] = nlohmann::json::array();
  for (const auto& s : steps)
    j["steps"].push_back({{"seed", s.seed}, {"subset", s.subset}, {"marginal", s.marginal},
                          {"cumulative", s.cumulative}});
  j["coverage"] = steps.empty() ? 0 : steps.back().cumulative;
  return j;
}

}  // namespace xner
