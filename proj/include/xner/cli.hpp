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

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "xner/xner.hpp"

namespace xner::cli {

namespace fs = std::filesystem;
using nlohmann::json;

enum ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kProvider = 3 };

inline std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text(const fs::path& p, std::string_view text) {
  if (p.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(p.parent_path(), ec);
  }
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + p.string());
  out << text;
  if (!out) throw DataError("write failed: " + p.string());
}

inline json read_json(const fs::path& p) {
  try {
    return json::parse(read_text(p));
  } catch (const json::parse_error& e) {
    throw DataError(p.string() + ": " + e.what());
  }
}

// Seeds: a preset name, a JSON list of {"type", "seed"[, "tag"]}, or lines of
// "label<TAB>seed[<TAB>tag]".
inline std::vector<SeedDef> seeds_from_json(const json& j) {
  if (j.is_string()) return seed_preset(j.get<std::string>());
  if (!j.is_array()) throw DataError("seeds must be a preset name or a list");
  std::vector<SeedDef> out;
  for (const auto& s : j) {
    if (!s.is_object() || !s.contains("type") || !s.contains("seed"))
      throw DataError("each seed needs \"type\" and \"seed\"");
    out.push_back({s["type"].get<std::string>(), s["seed"].get<std::string>(), s.value("tag", std::string())});
  }
  return out;
}

inline std::vector<SeedDef> load_seeds(const std::string& arg) {
  if (!fs::exists(arg)) return seed_preset(arg);
  const auto text = read_text(arg);
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && (text[first] == '[' || text[first] == '"')) {
    try {
      return seeds_from_json(json::parse(text));
    } catch (const json::exception& e) {
      throw DataError(arg + ": " + e.what());
    }
  }
  std::vector<SeedDef> out;
  std::istringstream in(text);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cols;
    std::stringstream ls(line);
    for (std::string c; std::getline(ls, c, '\t');) cols.push_back(c);
    if (cols.size() < 2 || cols.size() > 3) throw ParseError(n, "expected label<TAB>seed[<TAB>tag]");
    out.push_back({cols[0], cols[1], cols.size() == 3 ? cols[2] : ""});
  }
  return out;
}

// Run configuration; relative paths resolve against the config file.
struct RunConfig {
  MiningConfig mining;
  std::vector<SeedDef> seeds;
  std::string corpus;
  TaggerHyperparams tagger;
};

inline RunConfig parse_config(const json& j, const fs::path& base) {
  RunConfig rc;
  auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? p : (base / p).string(); };
  try {
    if (j.contains("dataset")) {
      const auto d = dataset_defaults(j["dataset"].get<std::string>());
      rc.mining.enumeration.max_sentence_len = d.max_sentence_len;
      rc.mining.selection = Threshold{d.threshold};
      rc.seeds = seed_preset(j["dataset"].get<std::string>());
    }
    if (j.contains("scorer")) rc.mining.scorer = parse_scorer_kind(j["scorer"].get<std::string>());
    if (j.contains("selection")) {
      const auto& s = j["selection"];
      const auto mode = s.at("mode").get<std::string>();
      if (mode == "threshold")
        rc.mining.selection = Threshold{s.at("value").get<double>()};
      else if (mode == "top_k")
        rc.mining.selection = TopK{s.at("value").get<std::size_t>()};
      else if (mode == "top_percent")
        rc.mining.selection = TopPercent{s.at("value").get<double>()};
      else
        throw UsageError("selection mode must be threshold, top_k or top_percent");
    }
    rc.mining.enumeration.max_span_len = j.value("max_span_len", rc.mining.enumeration.max_span_len);
    rc.mining.enumeration.max_sentence_len = j.value("max_sentence_len", rc.mining.enumeration.max_sentence_len);
    if (j.contains("stop_words") && !j["stop_words"].is_null())
      rc.mining.enumeration.stop_words = parse_stop_words(read_text(resolve(j["stop_words"].get<std::string>())));
    rc.mining.workers = j.value("workers", 0u);
    if (j.contains("seeds")) {
      const auto& s = j["seeds"];
      if (s.is_string() && fs::exists(resolve(s.get<std::string>())))
        rc.seeds = load_seeds(resolve(s.get<std::string>()));
      else
        rc.seeds = seeds_from_json(s);
    }
    if (j.contains("corpus")) rc.corpus = resolve(j["corpus"].get<std::string>());
    if (j.contains("tagger")) {
      const auto& t = j["tagger"];
      rc.tagger.learning_rate = t.value("learning_rate", rc.tagger.learning_rate);
      rc.tagger.epochs = t.value("epochs", rc.tagger.epochs);
      rc.tagger.batch_size = t.value("batch_size", rc.tagger.batch_size);
      rc.tagger.seed = t.value("seed", rc.tagger.seed);
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("config: ") + e.what());
  }
  rc.mining.validate();
  rc.tagger.validate();
  return rc;
}

inline RunConfig load_config(const std::string& path) {
  if (path.empty()) return {};
  return parse_config(read_json(path), fs::path(path).parent_path());
}

inline std::vector<Sentence> load_corpus(const std::string& path) {
  if (path.empty()) throw UsageError("no corpus given (--corpus or \"corpus\" in the config)");
  return parse_corpus(read_text(path));
}

struct Options {
  std::string corpus, seeds, model, config, out, report, scores, pseudo, in, pred, gold, provider, sentence;
  std::string seed_type, seed_entity, type_label, tag;
  std::vector<int> span;
  std::optional<unsigned> workers;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs;
  std::optional<double> lr, threshold, top_percent, min_precision;
  std::optional<std::size_t> top_k_sel, at_k;
  std::size_t top_k = 10;
  std::size_t budget = 5;
  std::size_t per_seed_top_k = 100;
  bool table = false;
  bool as_json = false;
};

inline void emit(const Options& o, const std::string& text, std::ostream& out) {
  if (o.out.empty())
    out << text;
  else
    write_text(o.out, text);
}

inline int cmd_mine(const Options& o, std::ostream& out) {
  auto rc = load_config(o.config);
  if (!o.corpus.empty()) rc.corpus = o.corpus;
  if (!o.seeds.empty()) rc.seeds = load_seeds(o.seeds);
  if (o.workers) rc.mining.workers = *o.workers;
  if (rc.seeds.empty()) throw UsageError("no seeds given (--seeds or \"seeds\" in the config)");
  const auto corpus = load_corpus(rc.corpus);
  const auto provider = load_provider(o.model);
  const auto seeds = make_seed_specs(rc.seeds, provider->mode());
  rc.mining.partial_dump = o.out + ".partial";
  MiningReport report;
  const auto scored = score_corpus(corpus, seeds, *provider, rc.mining, &report);
  write_text(o.out, dump_to_string(scored));
  const std::string report_path = o.report.empty() ? o.out + ".report.json" : o.report;
  write_text(report_path, to_json(report).dump(2) + "\n");
  std::error_code ec;
  fs::remove(rc.mining.partial_dump, ec);
  out << "scored " << report.candidates << " candidate spans x " << seeds.size() << " seeds in " << corpus.size()
      << " sentences; " << report.forward_passes << " distribution queries\n";
  return kOk;
}

inline int cmd_select(const Options& o, std::ostream& out) {
  auto rc = load_config(o.config);
  if (!o.corpus.empty()) rc.corpus = o.corpus;
  if (o.threshold) rc.mining.selection = Threshold{*o.threshold};
  if (o.top_k_sel) rc.mining.selection = TopK{*o.top_k_sel};
  if (o.top_percent) rc.mining.selection = TopPercent{*o.top_percent};
  rc.mining.validate();
  const auto corpus = load_corpus(rc.corpus);
  const auto scored = parse_dump(read_text(o.scores));
  MiningReport report;
  report.scorer = std::string(to_string(rc.mining.scorer));
  const auto labels = pseudo_label(corpus, scored, rc.mining.selection, rc.mining.scorer, &report);
  write_text(o.out, emit_conll(labels.dataset));
  if (!o.report.empty()) write_text(o.report, to_json(report).dump(2) + "\n");
  out << "kept " << labels.resolved.kept.size() << " spans in " << labels.dataset.size() << " sentences\n";
  return kOk;
}

inline int cmd_train(const Options& o, std::ostream& out) {
  auto rc = load_config(o.config);
  if (o.seed) rc.tagger.seed = *o.seed;
  if (o.epochs) rc.tagger.epochs = *o.epochs;
  if (o.lr) rc.tagger.learning_rate = *o.lr;
  rc.tagger.validate();
  const auto pseudo = parse_conll(read_text(o.pseudo));
  const auto provider = load_provider(o.model);
  const auto model = train_tagger(pseudo, *provider, rc.tagger);
  auto j = to_json(model);
  j["provider_dir"] = fs::absolute(o.model).lexically_normal().string();
  write_text(o.out, j.dump() + "\n");
  out << "trained " << model.tags.size() << " tags on " << pseudo.size() << " sentences\n";
  return kOk;
}

inline int cmd_predict(const Options& o, std::ostream&) {
  const auto text = read_text(o.model);
  std::string provider_dir = o.provider;
  if (provider_dir.empty()) {
    try {
      provider_dir = json::parse(text).value("provider_dir", std::string());
    } catch (const json::exception& e) {
      throw DataError(std::string("bad tagger model: ") + e.what());
    }
  }
  if (provider_dir.empty()) throw UsageError("--provider is required for this tagger file");
  const auto provider = load_provider(provider_dir);
  const auto model = load_tagger(text, *provider);
  const auto sentences = parse_corpus(read_text(o.in));
  const auto tagged = predict_all(model, sentences, *provider, resolve_workers(o.workers.value_or(0)));
  write_text(o.out, emit_conll(tagged));
  return kOk;
}

inline int cmd_eval(const Options& o, std::ostream& out) {
  const auto gold = parse_conll(read_text(o.gold));
  const auto pred = parse_conll(read_text(o.pred));
  const auto scores = entity_prf(pred, gold);
  auto j = to_json(scores);
  if (o.at_k) {
    if (o.scores.empty()) throw UsageError("--at-k needs --scores");
    const auto ranked = parse_dump(read_text(o.scores));
    const auto gold_entities_all = gold_entities(gold);
    j["precision_at_k"] = {{"k", *o.at_k}, {"types", json::object()}};
    for (const auto& t : ranked) j["precision_at_k"]["types"][t.type] = precision_at_k(t.spans, gold_entities_all, *o.at_k);
  }
  emit(o, o.table ? format_table(scores) : j.dump(2) + "\n", out);
  return kOk;
}

inline int cmd_decompose(const Options& o, std::ostream& out) {
  auto rc = load_config(o.config);
  if (o.workers) rc.mining.workers = *o.workers;
  auto gold = parse_conll(read_text(o.gold));
  if (!o.corpus.empty()) {
    const auto corpus = parse_corpus(read_text(o.corpus));
    if (corpus.size() != gold.size()) throw DataError("corpus and gold differ in sentence count");
    for (std::size_t k = 0; k < corpus.size(); ++k)
      if (corpus[k].tokens != gold[k].sentence.tokens)
        throw DataError("corpus and gold differ at sentence " + std::to_string(k));
  }
  std::vector<std::string> seeds;
  {
    std::istringstream in(read_text(o.seeds));
    for (std::string line; std::getline(in, line);) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!line.empty() && line[0] != '#') seeds.push_back(line);
    }
  }
  if (seeds.empty()) throw DataError("no candidate seeds in " + o.seeds);
  const auto provider = load_provider(o.model);
  DecomposeOptions opt;
  opt.type_label = o.type_label;
  opt.tag = o.tag;
  opt.per_seed_top_k = o.per_seed_top_k;
  opt.min_precision = o.min_precision;
  opt.budget = o.budget;
  opt.mining = rc.mining;
  const auto inst = build_instance(gold, seeds, *provider, opt);
  const auto steps = greedy_cover(inst);
  emit(o, coverage_report(inst, steps).dump(2) + "\n", out);
  return kOk;
}

inline int cmd_explain(const Options& o, std::ostream& out) {
  if (o.span.size() != 2) throw UsageError("--span takes two token indices");
  const auto provider = load_provider(o.model);
  const auto sentence = make_sentence(0, split_words(o.sentence));
  const Span span{0, o.span[0], o.span[1]};
  if (!span_fits(span, sentence.size())) throw UsageError("--span is outside the sentence");
  SeedDef def{o.seed_type, o.seed_entity, ""};
  if (def.seed.empty()) {
    const auto defs = load_seeds(o.seeds.empty() ? std::string("conll03") : o.seeds);
    auto it = std::find_if(defs.begin(), defs.end(), [&](const SeedDef& d) {
      return d.label == o.seed_type || (d.tag.empty() ? tag_for_label(d.label) : d.tag) == o.seed_type;
    });
    if (it == defs.end()) throw UsageError("no seed for type '" + o.seed_type + "'; pass --seed-entity");
    def = *it;
  }
  const auto seed = make_seed_spec(def.label, def.seed, provider->mode(), def.tag);
  const auto ex = explain(sentence, span, seed, *provider, o.top_k);
  if (o.as_json) {
    json j;
    j["x_side"] = ex.score.x_side;
    j["y_side"] = ex.score.y_side;
    j["total"] = ex.score.total;
    j["positions"] = json::array();
    for (const auto& p : ex.positions)
      j["positions"].push_back({{"side", to_string(p.side)}, {"position", p.position}, {"token", p.context_token},
                                {"kl", p.kl}});
    j["supervisors"] = json::array();
    for (const auto& w : ex.supervisors)
      j["supervisors"].push_back({{"side", to_string(w.side)}, {"position", w.position}, {"vocab_id", w.vocab_id},
                                  {"token", w.token}, {"weight", w.weight}, {"p_original", w.p_original},
                                  {"p_replaced", w.p_replaced}});
    emit(o, j.dump(2) + "\n", out);
    return kOk;
  }
  std::ostringstream t;
  char buf[256];
  std::snprintf(buf, sizeof buf, "seed %s (%s)  x_side %.6f  y_side %.6f  total %.6f\n", def.seed.c_str(),
                def.label.c_str(), ex.score.x_side, ex.score.y_side, ex.score.total);
  t << buf;
  std::size_t w = 0;
  for (const auto& p : ex.positions) {
    std::snprintf(buf, sizeof buf, "\n%s pos %d  '%s'  kl %.6f\n", std::string(to_string(p.side)).c_str(), p.position,
                  p.context_token.c_str(), p.kl);
    t << buf;
    for (; w < ex.supervisors.size() && ex.supervisors[w].position == p.position && ex.supervisors[w].side == p.side;
         ++w) {
      const auto& s = ex.supervisors[w];
      std::snprintf(buf, sizeof buf, "  %-20s %12.6f  p %.6f -> %.6f\n", ("'" + s.token + "'").c_str(), s.weight,
                    s.p_original, s.p_replaced);
      t << buf;
    }
  }
  emit(o, t.str(), out);
  return kOk;
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"xner: entity mining from one seed entity per type"};
  app.require_subcommand(1);
  Options o;

  auto* mine = app.add_subcommand("mine", "score every candidate span against every seed");
  mine->add_option("--corpus", o.corpus, "corpus (CoNLL or one token per line)");
  mine->add_option("--seeds", o.seeds, "seed file or preset name");
  mine->add_option("--model", o.model, "model directory")->required();
  mine->add_option("--config", o.config, "run configuration (JSON)");
  mine->add_option("--out", o.out, "scored-span dump")->required();
  mine->add_option("--report", o.report, "mining report (default: <out>.report.json)");
  mine->add_option("--workers", o.workers, "worker threads (default: all cores)");

  auto* sel = app.add_subcommand("select", "select spans from a dump and write the pseudo dataset");
  sel->add_option("--scores", o.scores, "scored-span dump")->required();
  sel->add_option("--config", o.config, "run configuration (JSON)");
  sel->add_option("--corpus", o.corpus, "corpus the dump was mined from");
  sel->add_option("--out", o.out, "pseudo dataset (CoNLL)")->required();
  sel->add_option("--report", o.report, "selection counts (JSON)");
  auto* th = sel->add_option("--threshold", o.threshold, "keep scores past this threshold");
  auto* tk = sel->add_option("--top-k", o.top_k_sel, "keep the best K per type");
  auto* tp = sel->add_option("--top-percent", o.top_percent, "keep the best P percent per type");
  th->excludes(tk)->excludes(tp);
  tk->excludes(tp);

  auto* train = app.add_subcommand("train", "train the tagger on a pseudo dataset");
  train->add_option("--pseudo", o.pseudo, "pseudo dataset (CoNLL)")->required();
  train->add_option("--model", o.model, "model directory")->required();
  train->add_option("--out", o.out, "tagger file")->required();
  train->add_option("--config", o.config, "run configuration (JSON)");
  train->add_option("--seed", o.seed, "shuffling seed");
  train->add_option("--epochs", o.epochs, "training epochs");
  train->add_option("--lr", o.lr, "learning rate");

  auto* pred = app.add_subcommand("predict", "tag sentences");
  pred->add_option("--model", o.model, "tagger file")->required();
  pred->add_option("--provider", o.provider, "model directory (default: the one used in training)");
  pred->add_option("--in", o.in, "sentences (CoNLL or one token per line)")->required();
  pred->add_option("--out", o.out, "tagged sentences (CoNLL)")->required();
  pred->add_option("--workers", o.workers, "worker threads");

  auto* ev = app.add_subcommand("eval", "entity-level precision, recall and F1");
  ev->add_option("--pred", o.pred, "predicted CoNLL")->required();
  ev->add_option("--gold", o.gold, "gold CoNLL")->required();
  ev->add_option("--at-k", o.at_k, "also report Precision@K of a dump");
  ev->add_option("--scores", o.scores, "scored-span dump for --at-k");
  ev->add_option("--out", o.out, "write metrics here instead of stdout");
  ev->add_flag("--table", o.table, "plain-text table instead of JSON");

  auto* dec = app.add_subcommand("decompose", "greedy coverage over per-seed mined sets");
  dec->add_option("--gold", o.gold, "gold CoNLL")->required();
  dec->add_option("--corpus", o.corpus, "corpus; must match the gold tokens");
  dec->add_option("--seeds", o.seeds, "candidate seeds, one per line")->required();
  dec->add_option("--budget", o.budget, "number of seeds to pick");
  dec->add_option("--model", o.model, "model directory")->required();
  dec->add_option("--type", o.type_label, "entity label used in the seed context")->required();
  dec->add_option("--tag", o.tag, "gold tag type (default: from --type)");
  dec->add_option("--top-k", o.per_seed_top_k, "spans kept per seed");
  dec->add_option("--min-precision", o.min_precision, "cut each ranking at this precision instead of --top-k");
  dec->add_option("--config", o.config, "run configuration (JSON)");
  dec->add_option("--workers", o.workers, "worker threads");
  dec->add_option("--out", o.out, "write the report here instead of stdout");

  auto* exp = app.add_subcommand("explain", "per-supervisor breakdown of one span test");
  exp->add_option("--model", o.model, "model directory")->required();
  exp->add_option("--sentence", o.sentence, "whitespace-tokenized sentence")->required();
  exp->add_option("--span", o.span, "first and last token index (0-based, inclusive)")->expected(2)->required();
  exp->add_option("--seed-type", o.seed_type, "entity label or tag")->required();
  exp->add_option("--seed-entity", o.seed_entity, "seed span (default: looked up in --seeds)");
  exp->add_option("--seeds", o.seeds, "seed file or preset (default conll03)");
  exp->add_option("--top-k", o.top_k, "supervisors per position (0: all)");
  exp->add_flag("--json", o.as_json, "JSON output");
  exp->add_option("--out", o.out, "write here instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  }

  try {
    if (*mine) return cmd_mine(o, out);
    if (*sel) return cmd_select(o, out);
    if (*train) return cmd_train(o, out);
    if (*pred) return cmd_predict(o, out);
    if (*ev) return cmd_eval(o, out);
    if (*dec) return cmd_decompose(o, out);
    if (*exp) return cmd_explain(o, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const ProviderError& e) {
    err << "error: " << e.what() << "\n";
    return kProvider;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kData;
  }
  return kUsage;
}

}  // namespace xner::cli
