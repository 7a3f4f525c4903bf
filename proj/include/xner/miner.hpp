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
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <unordered_map>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "xner/corpus.hpp"
#include "xner/lm.hpp"
#include "xner/scorer.hpp"

namespace xner {

enum class ScorerKind { divergence_two_way, divergence_one_way, cosine, prompt };

inline std::string_view to_string(ScorerKind k) {
  switch (k) {
    case ScorerKind::divergence_two_way: return "divergence_2way";
    case ScorerKind::divergence_one_way: return "divergence_1way";
    case ScorerKind::cosine: return "cosine";
    case ScorerKind::prompt: return "prompt";
  }
  return "?";
}

inline ScorerKind parse_scorer_kind(std::string_view s) {
  if (s == "divergence_2way" || s == "divergence") return ScorerKind::divergence_two_way;
  if (s == "divergence_1way") return ScorerKind::divergence_one_way;
  if (s == "cosine") return ScorerKind::cosine;
  if (s == "prompt") return ScorerKind::prompt;
  throw UsageError("unknown scorer '" + std::string(s) + "'");
}

// Cosine and prompt scores are similarities, the divergences distances.
inline bool higher_is_better(ScorerKind k) { return k == ScorerKind::cosine || k == ScorerKind::prompt; }

struct Threshold {
  double value = 0.15;
};
struct TopK {
  std::size_t k = 0;
};
struct TopPercent {
  double percent = 2.0;
};
using Selection = std::variant<Threshold, TopK, TopPercent>;

struct MiningConfig {
  ScorerKind scorer = ScorerKind::divergence_two_way;
  Selection selection = Threshold{0.15};
  EnumConfig enumeration;
  unsigned workers = 0;  // 0: hardware concurrency
  // Reuse unsubstituted-context distributions across span tests.
  bool reuse_reference = true;
  // Written with the spans scored so far if mining aborts.
  std::filesystem::path partial_dump;

  void validate() const {
    enumeration.validate();
    if (const auto* t = std::get_if<Threshold>(&selection)) {
      if (!std::isfinite(t->value)) throw UsageError("threshold must be finite");
      if (scorer == ScorerKind::cosine && (t->value < -2.0 || t->value > 2.0))
        throw UsageError("cosine threshold must lie in [-2, 2]");
      if (scorer == ScorerKind::prompt && (t->value < 0.0 || t->value > 1.0))
        throw UsageError("prompt threshold must lie in [0, 1]");
      if (!higher_is_better(scorer) && t->value < 0.0) throw UsageError("divergence threshold must be >= 0");
    } else if (const auto* p = std::get_if<TopPercent>(&selection)) {
      if (!(p->percent >= 0.0 && p->percent <= 100.0)) throw UsageError("top_percent must lie in [0, 100]");
    }
  }
};

inline unsigned resolve_workers(unsigned w) {
  if (w > 0) return w;
  const unsigned hc = std::thread::hardware_concurrency();
  return hc > 0 ? hc : 1;
}

struct TypeCounts {
  std::size_t scored = 0;
  std::size_t selected = 0;
  std::size_t dropped_overlap = 0;
};

struct MiningReport {
  std::string scorer;
  std::map<std::string, TypeCounts> per_type;
  std::size_t sentences = 0;
  std::size_t candidates = 0;
  std::size_t skipped_no_context = 0;  // span tests with no context position
  std::size_t skipped_aborted = 0;     // span tests never run after an abort
  std::uint64_t forward_passes = 0;    // distribution queries answered by the provider
  std::uint64_t hidden_state_passes = 0;
  unsigned workers = 1;
  double wall_seconds = 0.0;
};

inline nlohmann::json to_json(const MiningReport& r) {
  nlohmann::json j;
  j["scorer"] = r.scorer;
  j["sentences"] = r.sentences;
  j["candidates"] = r.candidates;
  j["skipped_no_context"] = r.skipped_no_context;
  j["skipped_aborted"] = r.skipped_aborted;
  j["forward_passes"] = r.forward_passes;
  j["hidden_state_passes"] = r.hidden_state_passes;
  j["workers"] = r.workers;
  j["wall_seconds"] = r.wall_seconds;
  auto& t = j["types"];
  t = nlohmann::json::object();
  for (const auto& [type, c] : r.per_type)
    t[type] = {{"scored", c.scored}, {"selected", c.selected}, {"dropped_overlap", c.dropped_overlap}};
  return j;
}

// Ranked spans for one type.
struct TypedScores {
  std::string type;
  std::vector<ScoredSpan> spans;
};
using ScoredCorpus = std::vector<TypedScores>;

// Best first; ties by sentence id, start, length.
inline bool rank_before(const ScoredSpan& a, const ScoredSpan& b, bool higher_better) {
  if (a.total != b.total) return higher_better ? a.total > b.total : a.total < b.total;
  if (a.span.sentence_id != b.span.sentence_id) return a.span.sentence_id < b.span.sentence_id;
  if (a.span.start != b.span.start) return a.span.start < b.span.start;
  return a.span.length() < b.span.length();
}

inline void rank(std::vector<ScoredSpan>& spans, bool higher_better) {
  std::stable_sort(spans.begin(), spans.end(),
                   [&](const auto& a, const auto& b) { return rank_before(a, b, higher_better); });
}

// ---------------------------------------------------------------------------
// Scored-span dump: sentence_id, start, end, type, x_side, y_side, total

inline std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_dump(std::ostream& out, const ScoredCorpus& scores) {
  for (const auto& t : scores)
    for (const auto& s : t.spans)
      out << s.span.sentence_id << '\t' << s.span.start << '\t' << s.span.end << '\t' << s.type_label << '\t'
          << format_real(s.x_side) << '\t' << format_real(s.y_side) << '\t' << format_real(s.total) << '\n';
}

inline std::string dump_to_string(const ScoredCorpus& scores) {
  std::ostringstream out;
  write_dump(out, scores);
  return out.str();
}

// Types keep their order of first appearance; spans keep file order.
inline ScoredCorpus parse_dump(std::string_view text) {
  ScoredCorpus out;
  std::map<std::string, std::size_t, std::less<>> index;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::size_t a = 0;
    while (true) {
      auto b = line.find('\t', a);
      cols.emplace_back(line.substr(a, b == std::string_view::npos ? std::string_view::npos : b - a));
      if (b == std::string_view::npos) break;
      a = b + 1;
    }
    if (cols.size() != 7) throw ParseError(line_no, "expected 7 tab-separated columns, got " + std::to_string(cols.size()));
    ScoredSpan s;
    try {
      std::size_t used = 0;
      auto whole_int = [&](const std::string& c) {
        const int v = std::stoi(c, &used);
        if (used != c.size()) throw std::invalid_argument(c);
        return v;
      };
      auto whole_real = [&](const std::string& c) {
        const double v = std::stod(c, &used);
        if (used != c.size()) throw std::invalid_argument(c);
        return v;
      };
      s.span = {whole_int(cols[0]), whole_int(cols[1]), whole_int(cols[2])};
      s.type_label = cols[3];
      s.x_side = whole_real(cols[4]);
      s.y_side = whole_real(cols[5]);
      s.total = whole_real(cols[6]);
    } catch (const std::logic_error&) {
      throw ParseError(line_no, "malformed number");
    }
    if (s.span.start < 0 || s.span.end < s.span.start) throw ParseError(line_no, "invalid span bounds");
    auto [it, fresh] = index.try_emplace(s.type_label, out.size());
    if (fresh) out.push_back({s.type_label, {}});
    out[it->second].spans.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Scoring

namespace detail {

struct SentenceResult {
  std::vector<std::vector<ScoredSpan>> per_seed;
  std::size_t candidates = 0;
  std::size_t no_context = 0;
  bool done = false;
};

inline void check_seeds(std::span<const SeedSpec> seeds) {
  if (seeds.empty()) throw DataError("no seeds given");
  std::vector<std::string> tags;
  for (const auto& s : seeds) tags.push_back(s.tag);
  std::sort(tags.begin(), tags.end());
  if (std::adjacent_find(tags.begin(), tags.end()) != tags.end())
    throw DataError("two seeds share the tag type '" + *std::adjacent_find(tags.begin(), tags.end()) + "'");
}

}  // namespace detail

// Scores every candidate span of every sentence against every seed.
// Sentences are distributed over worker threads; the merged result does not
// depend on the worker count.
inline ScoredCorpus score_corpus(std::span<const Sentence> corpus, std::span<const SeedSpec> seeds,
                                 const DistributionProvider& provider, const MiningConfig& config,
                                 MiningReport* report = nullptr) {
  config.validate();
  if (corpus.empty()) throw DataError("corpus is empty");
  detail::check_seeds(seeds);

  const auto t0 = std::chrono::steady_clock::now();
  const std::uint64_t served0 = provider.queries_served();
  const bool divergence =
      config.scorer == ScorerKind::divergence_two_way || config.scorer == ScorerKind::divergence_one_way;

  std::vector<ContextDistributions> seed_caches;
  if (config.reuse_reference && config.scorer == ScorerKind::divergence_two_way)
    for (const auto& s : seeds) seed_caches.push_back(precompute_seed(provider, s));

  std::vector<detail::SentenceResult> results(corpus.size());
  std::atomic<std::size_t> next{0};
  std::atomic<bool> abort{false};
  std::atomic<std::uint64_t> hidden{0};
  std::exception_ptr failure;
  std::mutex failure_mu;

  auto work = [&] {
    while (!abort.load()) {
      const std::size_t k = next.fetch_add(1);
      if (k >= corpus.size()) return;
      const Sentence& sentence = corpus[k];
      auto& res = results[k];
      try {
        const auto spans = enumerate_candidates(sentence, config.enumeration);
        res.candidates = spans.size();
        res.per_seed.resize(seeds.size());
        if (spans.empty()) {
          res.done = true;
          continue;
        }
        std::optional<ContextDistributions> sentence_cache;
        if (config.reuse_reference && divergence) sentence_cache = precompute_sentence(provider, sentence);
        for (const auto& span : spans) {
          for (std::size_t s = 0; s < seeds.size(); ++s) {
            try {
              switch (config.scorer) {
                case ScorerKind::divergence_two_way:
                  res.per_seed[s].push_back(two_way_distance(sentence, span, seeds[s], provider,
                                                             sentence_cache ? &*sentence_cache : nullptr,
                                                             seed_caches.empty() ? nullptr : &seed_caches[s]));
                  break;
                case ScorerKind::divergence_one_way:
                  res.per_seed[s].push_back(
                      one_way_score(sentence, span, seeds[s], provider, sentence_cache ? &*sentence_cache : nullptr));
                  break;
                case ScorerKind::cosine:
                  res.per_seed[s].push_back(cosine_scores(sentence, span, seeds[s], provider));
                  hidden.fetch_add(4);
                  break;
                case ScorerKind::prompt: {
                  ScoredSpan out{span, seeds[s].tag};
                  out.total = out.x_side = prompt_probability(sentence, span, seeds[s].type_label, provider);
                  res.per_seed[s].push_back(std::move(out));
                  break;
                }
              }
            } catch (const NoContextError&) {
              ++res.no_context;
            }
          }
        }
        res.done = true;
      } catch (...) {
        std::lock_guard lock(failure_mu);
        if (!failure) failure = std::current_exception();
        abort.store(true);
        return;
      }
    }
  };

  const unsigned workers = std::max(1u, std::min<unsigned>(resolve_workers(config.workers),
                                                          static_cast<unsigned>(corpus.size())));
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }

  ScoredCorpus out;
  for (const auto& s : seeds) out.push_back({s.tag, {}});
  MiningReport rep;
  rep.scorer = std::string(to_string(config.scorer));
  rep.workers = workers;
  rep.sentences = corpus.size();
  for (std::size_t k = 0; k < results.size(); ++k) {
    const auto& r = results[k];
    if (!r.done) {
      if (failure) rep.skipped_aborted += enumerate_candidates(corpus[k], config.enumeration).size() * seeds.size();
      continue;
    }
    rep.candidates += r.candidates;
    rep.skipped_no_context += r.no_context;
    for (std::size_t s = 0; s < seeds.size(); ++s)
      out[s].spans.insert(out[s].spans.end(), r.per_seed[s].begin(), r.per_seed[s].end());
  }
  for (auto& t : out) {
    rank(t.spans, higher_is_better(config.scorer));
    rep.per_type[t.type].scored = t.spans.size();
  }
  rep.forward_passes = provider.queries_served() - served0;
  rep.hidden_state_passes = hidden.load();
  rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (report != nullptr) *report = rep;

  if (failure) {
    if (!config.partial_dump.empty()) {
      std::ofstream f(config.partial_dump, std::ios::binary);
      write_dump(f, out);
    }
    std::rethrow_exception(failure);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Selection

// Threshold mode keeps distance < t (similarity > t); both strict.
// top_percent keeps floor(n * p / 100) spans per type.
inline ScoredCorpus select(const ScoredCorpus& scored, const Selection& selection, ScorerKind kind) {
  const bool hb = higher_is_better(kind);
  ScoredCorpus out;
  for (const auto& t : scored) {
    auto spans = t.spans;
    rank(spans, hb);
    std::size_t keep = spans.size();
    if (const auto* th = std::get_if<Threshold>(&selection)) {
      keep = 0;
      while (keep < spans.size() && (hb ? spans[keep].total > th->value : spans[keep].total < th->value)) ++keep;
    } else if (const auto* k = std::get_if<TopK>(&selection)) {
      keep = std::min(keep, k->k);
    } else {
      const double p = std::get<TopPercent>(selection).percent;
      keep = std::min(keep, static_cast<std::size_t>(std::floor(static_cast<double>(spans.size()) * p / 100.0 + 1e-9)));
    }
    spans.resize(keep);
    out.push_back({t.type, std::move(spans)});
  }
  return out;
}

struct OverlapResult {
  std::vector<Entity> kept;  // ordered by sentence id, then start
  std::map<std::string, std::size_t> dropped;
};

// Greedy in global rank order across types: a span is kept iff it shares no
// token with an already kept span of the same sentence. Equal scores across
// types fall back to type order.
inline OverlapResult resolve_overlaps(const ScoredCorpus& selected, ScorerKind kind) {
  const bool hb = higher_is_better(kind);
  struct Item {
    const ScoredSpan* s;
    std::size_t type;
  };
  std::vector<Item> all;
  for (std::size_t t = 0; t < selected.size(); ++t)
    for (const auto& s : selected[t].spans) all.push_back({&s, t});
  std::stable_sort(all.begin(), all.end(), [&](const Item& a, const Item& b) {
    if (rank_before(*a.s, *b.s, hb)) return true;
    if (rank_before(*b.s, *a.s, hb)) return false;
    return a.type < b.type;
  });
  OverlapResult out;
  std::unordered_map<int, std::vector<Span>> taken;
  for (const auto& it : all) {
    auto& spans = taken[it.s->span.sentence_id];
    const bool clash = std::any_of(spans.begin(), spans.end(), [&](const Span& o) { return o.overlaps(it.s->span); });
    if (clash) {
      ++out.dropped[selected[it.type].type];
      continue;
    }
    spans.push_back(it.s->span);
    out.kept.push_back({it.s->span, selected[it.type].type});
  }
  std::sort(out.kept.begin(), out.kept.end());
  return out;
}

// Sentences holding at least one kept span, in corpus order.
inline std::vector<TaggedSentence> build_pseudo_dataset(std::span<const Sentence> corpus, std::span<const Entity> kept) {
  std::map<int, std::vector<Entity>> by_sentence;
  for (const auto& e : kept) by_sentence[e.span.sentence_id].push_back(e);
  std::vector<TaggedSentence> out;
  for (const auto& s : corpus) {
    auto it = by_sentence.find(s.id);
    if (it == by_sentence.end()) continue;
    for (const auto& e : it->second)
      if (!span_fits(e.span, s.size()))
        throw DataError("span " + std::to_string(e.span.start) + ".." + std::to_string(e.span.end) +
                        " does not fit sentence " + std::to_string(s.id));
    out.push_back({s, bio_from_entities(it->second, s.size())});
  }
  return out;
}

// Selection plus overlap resolution with the report counters filled in.
struct PseudoLabels {
  ScoredCorpus selected;
  OverlapResult resolved;
  std::vector<TaggedSentence> dataset;
};

inline PseudoLabels pseudo_label(std::span<const Sentence> corpus, const ScoredCorpus& scored, const Selection& sel,
                                 ScorerKind kind, MiningReport* report = nullptr) {
  PseudoLabels out;
  out.selected = select(scored, sel, kind);
  out.resolved = resolve_overlaps(out.selected, kind);
  out.dataset = build_pseudo_dataset(corpus, out.resolved.kept);
  if (report != nullptr) {
    for (const auto& t : scored) report->per_type[t.type].scored = t.spans.size();
    for (const auto& t : out.selected) report->per_type[t.type].selected = t.spans.size();
    for (const auto& [type, n] : out.resolved.dropped) report->per_type[type].dropped_overlap = n;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Seed presets (entity label, seed span, tag)

struct SeedDef {
  std::string label;
  std::string seed;
  std::string tag;  // empty: derived from the label
};

inline std::vector<SeedDef> seed_preset(std::string_view name) {
  if (name == "conll03" || name == "tweebank")
    return {{"PER", "Masaki Yoshida", ""}, {"LOC", "Singapore", ""}, {"ORG", "Boston Celtics", ""},
            {"MISC", "Japanese", ""}};
  if (name == "wnut17")
    return {{"Person", "Masaki Yoshida", "person"},       {"Location", "Singapore", "location"},
            {"Creative work", "#BattlestarGalactica", "creative-work"}, {"Group", "Boston Celtics", "group"},
            {"Corporation", "Microsoft", "corporation"},  {"Product", "iPhone", "product"}};
  if (name == "restaurant")
    return {{"Restaurant name", "McDonald's", "Restaurant_Name"}, {"Location", "nearby", "Location"},
            {"Dish", "chicken sandwich", "Dish"},                 {"Price", "cheap", "Price"},
            {"Rating", "five star", "Rating"},                   {"Cuisine", "Japanese", "Cuisine"}};
  throw UsageError("unknown seed preset '" + std::string(name) + "'");
}

inline std::vector<SeedSpec> make_seed_specs(std::span<const SeedDef> defs, LmMode mode) {
  std::vector<SeedSpec> out;
  for (const auto& d : defs) out.push_back(make_seed_spec(d.label, d.seed, mode, d.tag));
  return out;
}

// Per-dataset defaults for the sentence length limit and divergence threshold.
struct DatasetDefaults {
  int max_sentence_len;
  double threshold;
};

inline DatasetDefaults dataset_defaults(std::string_view name) {
  if (name == "conll03") return {30, 0.15};
  if (name == "tweebank") return {30, 0.20};
  if (name == "wnut17") return {20, 0.15};
  if (name == "restaurant") return {20, 0.20};
  throw UsageError("unknown dataset '" + std::string(name) + "'");
}

}  // namespace xner
