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
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "xner/corpus.hpp"
#include "xner/lm.hpp"
#include "xner/ort_api.hpp"
#include "xner/tokenizer.hpp"
#include "xner/toy_lm.hpp"

namespace xner {

// Contents of a model directory's manifest.json.
struct ModelManifest {
  std::string backend = "onnx";  // "onnx" or "toy"
  LmMode mode = LmMode::mlm;
  std::string model_file = "model.onnx";
  std::string tokenizer_type = "byte_level_bpe";  // or "wordpiece"
  std::string vocab_file = "vocab.json";
  std::string merges_file = "merges.txt";
  bool add_prefix_space = true;
  bool lowercase = false;
  TokenId mask_token_id = -1;
  std::map<std::string, TokenId> special_token_ids;
  std::vector<TokenId> prefix_token_ids;
  std::vector<TokenId> suffix_token_ids;
  std::size_t hidden_size = 0;
  std::size_t max_sequence_length = 512;
  std::size_t vocab_size = 0;
  std::string input_ids_name = "input_ids";
  std::string attention_mask_name = "attention_mask";
  std::string logits_name = "logits";
  std::string hidden_states_name = "hidden_states";
  // toy backend
  std::string corpus_file;
  double smoothing = 0.01;

  TokenId special(const std::string& name) const {
    auto it = special_token_ids.find(name);
    return it == special_token_ids.end() ? -1 : it->second;
  }
};

inline ModelManifest parse_manifest(const std::string& text) {
  ModelManifest m;
  try {
    const auto j = nlohmann::json::parse(text);
    m.backend = j.value("backend", std::string("onnx"));
    if (m.backend == "toy") {
      m.corpus_file = j.at("corpus").get<std::string>();
      m.smoothing = j.value("smoothing", 0.01);
      return m;
    }
    if (m.backend != "onnx") throw ProviderError("manifest: unknown backend '" + m.backend + "'");
    const auto mode = j.at("mode").get<std::string>();
    if (mode != "MLM" && mode != "CLM") throw ProviderError("manifest: mode must be MLM or CLM");
    m.mode = mode == "MLM" ? LmMode::mlm : LmMode::clm;
    m.model_file = j.value("model_file", m.model_file);
    const auto& tok = j.at("tokenizer");
    m.tokenizer_type = tok.value("type", m.tokenizer_type);
    m.vocab_file = tok.value("vocab", m.tokenizer_type == "wordpiece" ? std::string("vocab.txt") : m.vocab_file);
    m.merges_file = tok.value("merges", m.merges_file);
    m.add_prefix_space = tok.value("add_prefix_space", true);
    m.lowercase = tok.value("lowercase", false);
    m.mask_token_id = j.value("mask_token_id", -1);
    if (m.mode == LmMode::mlm && m.mask_token_id < 0) throw ProviderError("manifest: MLM model needs mask_token_id");
    m.special_token_ids = j.at("special_token_ids").get<std::map<std::string, TokenId>>();
    m.prefix_token_ids = j.value("prefix_token_ids", std::vector<TokenId>{});
    m.suffix_token_ids = j.value("suffix_token_ids", std::vector<TokenId>{});
    m.hidden_size = j.at("hidden_size").get<std::size_t>();
    m.max_sequence_length = j.at("max_sequence_length").get<std::size_t>();
    m.vocab_size = j.at("vocab_size").get<std::size_t>();
    if (j.contains("inputs")) {
      m.input_ids_name = j["inputs"].value("input_ids", m.input_ids_name);
      m.attention_mask_name = j["inputs"].value("attention_mask", m.attention_mask_name);
    }
    if (j.contains("outputs")) {
      m.logits_name = j["outputs"].value("logits", m.logits_name);
      m.hidden_states_name = j["outputs"].value("hidden_states", m.hidden_states_name);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ProviderError(std::string("manifest: ") + e.what());
  }
  if (m.special("unk") < 0) throw ProviderError("manifest: special_token_ids needs 'unk'");
  if (m.special("pad") < 0) throw ProviderError("manifest: special_token_ids needs 'pad'");
  return m;
}

struct TransformerConfig {
  std::string runtime_library;  // empty: see ort::Runtime::load
  int intra_op_threads = 1;
  // Queries of equal sequence length are run together, at most this many at
  // a time. Batch composition depends only on the submitted batch.
  int max_batch = 32;
};

// Serialized transformer served through ONNX Runtime.
class TransformerProvider final : public DistributionProvider {
 public:
  TransformerProvider(const std::filesystem::path& dir, ModelManifest manifest, const TransformerConfig& cfg)
      : manifest_(std::move(manifest)), cfg_(cfg) {
    const auto model_path = dir / manifest_.model_file;
    const auto vocab_path = dir / manifest_.vocab_file;
    if (!std::filesystem::is_regular_file(model_path)) throw ProviderError("missing model file " + model_path.string());
    if (!std::filesystem::is_regular_file(vocab_path)) throw ProviderError("missing vocabulary " + vocab_path.string());
    const TokenId unk = manifest_.special("unk");
    std::string fp_text = detail::read_file(vocab_path.string());
    if (manifest_.tokenizer_type == "byte_level_bpe") {
      const auto merges_path = dir / manifest_.merges_file;
      if (!std::filesystem::is_regular_file(merges_path)) throw ProviderError("missing merges " + merges_path.string());
      auto merges = detail::read_file(merges_path.string());
      tokenizer_ = std::make_unique<ByteLevelBpe>(fp_text, merges, manifest_.add_prefix_space, unk);
      fp_text += merges;
    } else if (manifest_.tokenizer_type == "wordpiece") {
      tokenizer_ = std::make_unique<WordPiece>(fp_text, manifest_.lowercase, unk);
    } else {
      throw ProviderError("manifest: unknown tokenizer type '" + manifest_.tokenizer_type + "'");
    }

    runtime_ = ort::Runtime::load(cfg_.runtime_library);
    const auto& api = runtime_->api();
    ort::OrtSessionOptions* opts = nullptr;
    runtime_->check(api.CreateSessionOptions(&opts), "CreateSessionOptions");
    std::unique_ptr<ort::OrtSessionOptions, void (*)(ort::OrtSessionOptions*)> opts_guard(opts, api.ReleaseSessionOptions);
    runtime_->check(api.SetIntraOpNumThreads(opts, std::max(1, cfg_.intra_op_threads)), "SetIntraOpNumThreads");
    runtime_->check(api.SetInterOpNumThreads(opts, 1), "SetInterOpNumThreads");
    runtime_->check(api.SetSessionGraphOptimizationLevel(opts, ort::kEnableAll), "SetSessionGraphOptimizationLevel");
    runtime_->check(api.CreateSession(runtime_->env(), model_path.c_str(), opts, &session_),
                    "loading " + model_path.string());
    runtime_->check(api.CreateCpuMemoryInfo(ort::kArenaAllocator, ort::kMemTypeDefault, &memory_), "CreateCpuMemoryInfo");
    check_names();

    std::uint64_t h = fnv1a("onnx");
    h = fnv1a(std::string(to_string(manifest_.mode)) + manifest_.model_file, h);
    h = fnv1a(fp_text, h);
    std::ifstream model(model_path, std::ios::binary);
    std::string head(1 << 20, '\0');
    model.read(head.data(), static_cast<std::streamsize>(head.size()));
    head.resize(static_cast<std::size_t>(model.gcount()));
    h = fnv1a(head, h);
    h = fnv1a(std::to_string(std::filesystem::file_size(model_path)), h);
    fingerprint_ = "onnx:" + hex64(h);
  }

  ~TransformerProvider() override {
    const auto& api = runtime_->api();
    if (memory_ != nullptr) api.ReleaseMemoryInfo(memory_);
    if (session_ != nullptr) api.ReleaseSession(session_);
  }

  TransformerProvider(const TransformerProvider&) = delete;
  TransformerProvider& operator=(const TransformerProvider&) = delete;

  LmMode mode() const override { return manifest_.mode; }
  std::size_t vocab_size() const override { return manifest_.vocab_size; }
  std::size_t hidden_size() const override { return manifest_.hidden_size; }
  std::optional<TokenId> mask_token() const override {
    if (manifest_.mask_token_id < 0) return std::nullopt;
    return manifest_.mask_token_id;
  }
  std::optional<TokenId> unknown_token() const override { return manifest_.special("unk"); }
  std::string fingerprint() const override { return fingerprint_; }
  std::string token_text(TokenId id) const override { return tokenizer_->token_text(id); }
  const ModelManifest& manifest() const { return manifest_; }
  const std::string& runtime_version() const { return runtime_->version(); }

  ProviderTokenization tokenize(std::span<const std::string> words) const override {
    ProviderTokenization t;
    t.ids = manifest_.prefix_token_ids;
    for (const auto& w : words) {
      auto ids = tokenizer_->encode_word(w);
      if (ids.empty()) ids.push_back(manifest_.special("unk"));
      const int first = static_cast<int>(t.ids.size());
      t.ids.insert(t.ids.end(), ids.begin(), ids.end());
      t.word_to_range.push_back({first, static_cast<int>(t.ids.size()) - 1});
    }
    t.ids.insert(t.ids.end(), manifest_.suffix_token_ids.begin(), manifest_.suffix_token_ids.end());
    return t;
  }

  std::vector<std::vector<double>> hidden_states(const ProviderTokenization& t) const override {
    std::vector<std::vector<TokenId>> seqs{t.ids};
    auto out = run(seqs, manifest_.hidden_states_name, manifest_.hidden_size);
    const std::size_t d = manifest_.hidden_size;
    std::vector<std::vector<double>> rows(t.ids.size());
    for (std::size_t k = 0; k < t.ids.size(); ++k)
      rows[k].assign(out.begin() + static_cast<std::ptrdiff_t>(k * d), out.begin() + static_cast<std::ptrdiff_t>((k + 1) * d));
    return rows;
  }

 protected:
  std::vector<VocabDistribution> compute(std::span<const DistributionQuery> batch) const override {
    // Sequence actually fed for each query, and the row whose logits answer it.
    std::vector<std::vector<TokenId>> fed(batch.size());
    std::vector<int> row(batch.size());
    for (std::size_t k = 0; k < batch.size(); ++k) {
      const auto& q = batch[k];
      if (manifest_.mode == LmMode::mlm) {
        fed[k] = q.ids;
        fed[k][q.position] = manifest_.mask_token_id;
        for (int m : q.also_masked)
          if (m >= 0 && m < static_cast<int>(fed[k].size())) fed[k][m] = manifest_.mask_token_id;
        row[k] = q.position;
      } else {
        fed[k].assign(q.ids.begin(), q.ids.begin() + q.position);
        row[k] = q.position - 1;
      }
    }
    std::map<std::size_t, std::vector<std::size_t>> by_length;
    for (std::size_t k = 0; k < batch.size(); ++k) by_length[fed[k].size()].push_back(k);

    std::vector<VocabDistribution> out(batch.size());
    const std::size_t v = manifest_.vocab_size;
    const std::size_t chunk = static_cast<std::size_t>(std::max(1, cfg_.max_batch));
    for (const auto& [len, members] : by_length) {
      for (std::size_t b = 0; b < members.size(); b += chunk) {
        const std::size_t e = std::min(members.size(), b + chunk);
        std::vector<std::vector<TokenId>> seqs;
        for (std::size_t k = b; k < e; ++k) seqs.push_back(fed[members[k]]);
        auto logits = run(seqs, manifest_.logits_name, v);
        for (std::size_t k = b; k < e; ++k) {
          const std::size_t r = k - b;
          const float* base = logits.data() + (r * len + static_cast<std::size_t>(row[members[k]])) * v;
          out[members[k]] = softmax(std::span<const float>(base, v));
        }
      }
    }
    return out;
  }

 private:
  void check_names() {
    const auto& api = runtime_->api();
    ort::OrtAllocator* alloc = nullptr;
    runtime_->check(api.GetAllocatorWithDefaultOptions(&alloc), "GetAllocatorWithDefaultOptions");
    auto names = [&](bool inputs) {
      std::size_t n = 0;
      runtime_->check(inputs ? api.SessionGetInputCount(session_, &n) : api.SessionGetOutputCount(session_, &n),
                      "session info");
      std::vector<std::string> out;
      for (std::size_t k = 0; k < n; ++k) {
        char* name = nullptr;
        runtime_->check(inputs ? api.SessionGetInputName(session_, k, alloc, &name)
                               : api.SessionGetOutputName(session_, k, alloc, &name),
                        "session info");
        out.emplace_back(name);
        api.AllocatorFree(alloc, name);
      }
      return out;
    };
    auto has = [](const std::vector<std::string>& v, const std::string& s) {
      return std::find(v.begin(), v.end(), s) != v.end();
    };
    const auto in = names(true);
    const auto outn = names(false);
    if (!has(in, manifest_.input_ids_name)) throw ProviderError("model has no input '" + manifest_.input_ids_name + "'");
    feed_mask_ = has(in, manifest_.attention_mask_name);
    if (!has(outn, manifest_.logits_name)) throw ProviderError("model has no output '" + manifest_.logits_name + "'");
    has_hidden_ = has(outn, manifest_.hidden_states_name);
  }

  // Runs equal-length sequences and returns the named output, checked to be
  // [batch, length, width] float.
  std::vector<float> run(const std::vector<std::vector<TokenId>>& seqs, const std::string& output,
                         std::size_t width) const {
    if (output == manifest_.hidden_states_name && !has_hidden_)
      throw ProviderError("model has no output '" + output + "'");
    const std::size_t b = seqs.size();
    const std::size_t len = seqs.front().size();
    if (len == 0) throw ProviderError("empty input sequence");
    if (len > manifest_.max_sequence_length)
      throw ProviderError("sequence of " + std::to_string(len) + " tokens exceeds the model limit of " +
                          std::to_string(manifest_.max_sequence_length));
    std::vector<std::int64_t> ids(b * len), mask(b * len, 1);
    for (std::size_t r = 0; r < b; ++r)
      for (std::size_t k = 0; k < len; ++k) ids[r * len + k] = seqs[r][k];
    const std::int64_t shape[2] = {static_cast<std::int64_t>(b), static_cast<std::int64_t>(len)};
    const auto& api = runtime_->api();
    auto tensor = [&](std::vector<std::int64_t>& data) {
      ort::OrtValue* v = nullptr;
      runtime_->check(api.CreateTensorWithDataAsOrtValue(memory_, data.data(), data.size() * sizeof(std::int64_t),
                                                         shape, 2, ort::kInt64, &v),
                      "CreateTensorWithDataAsOrtValue");
      return ort::Value(api, v);
    };
    auto ids_t = tensor(ids);
    auto mask_t = tensor(mask);
    std::vector<const char*> in_names{manifest_.input_ids_name.c_str()};
    std::vector<const ort::OrtValue*> in_vals{ids_t.get()};
    if (feed_mask_) {
      in_names.push_back(manifest_.attention_mask_name.c_str());
      in_vals.push_back(mask_t.get());
    }
    const char* out_name = output.c_str();
    ort::OrtValue* result = nullptr;
    runtime_->check(api.Run(session_, nullptr, in_names.data(), in_vals.data(), in_names.size(), &out_name, 1, &result),
                    "Run");
    ort::Value owned(api, result);
    ort::OrtTensorTypeAndShapeInfo* info = nullptr;
    runtime_->check(api.GetTensorTypeAndShape(result, &info), "GetTensorTypeAndShape");
    std::size_t rank = 0;
    api.GetDimensionsCount(info, &rank);
    std::vector<std::int64_t> dims(rank);
    api.GetDimensions(info, dims.data(), rank);
    api.ReleaseTensorTypeAndShapeInfo(info);
    if (rank != 3 || dims[0] != static_cast<std::int64_t>(b) || dims[1] != static_cast<std::int64_t>(len) ||
        dims[2] != static_cast<std::int64_t>(width))
      throw ProviderError("output '" + output + "' has unexpected shape");
    void* data = nullptr;
    runtime_->check(api.GetTensorMutableData(result, &data), "GetTensorMutableData");
    const float* f = static_cast<const float*>(data);
    return {f, f + b * len * width};
  }

  ModelManifest manifest_;
  TransformerConfig cfg_;
  std::unique_ptr<SubwordTokenizer> tokenizer_;
  std::shared_ptr<const ort::Runtime> runtime_;
  ort::OrtSession* session_ = nullptr;
  ort::OrtMemoryInfo* memory_ = nullptr;
  bool feed_mask_ = false;
  bool has_hidden_ = false;
  std::string fingerprint_;
};

inline ModelManifest read_manifest(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw ProviderError("model directory not found: " + dir.string());
  const auto path = dir / "manifest.json";
  if (!std::filesystem::is_regular_file(path)) throw ProviderError("missing " + path.string());
  return parse_manifest(detail::read_file(path.string()));
}

inline std::unique_ptr<TransformerProvider> load_transformer_provider(const std::filesystem::path& dir,
                                                                      const TransformerConfig& cfg = {}) {
  auto m = read_manifest(dir);
  if (m.backend != "onnx") throw ProviderError(dir.string() + " is not an ONNX model directory");
  return std::make_unique<TransformerProvider>(dir, std::move(m), cfg);
}

// Opens any supported model directory: an ONNX export, or a toy LM fitted on
// the corpus the manifest names.
inline std::unique_ptr<DistributionProvider> load_provider(const std::filesystem::path& dir,
                                                           const TransformerConfig& cfg = {}) {
  auto m = read_manifest(dir);
  if (m.backend == "toy") {
    const auto corpus_path = dir / m.corpus_file;
    std::string text;
    try {
      text = detail::read_file(corpus_path.string());
    } catch (const ProviderError&) {
      throw ProviderError("toy model corpus not found: " + corpus_path.string());
    }
    auto corpus = parse_corpus(text);
    return fit_toy_lm(corpus, m.smoothing);
  }
  return std::make_unique<TransformerProvider>(dir, std::move(m), cfg);
}

}  // namespace xner
