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

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "testutil.hpp"
#include "xner/transformer.hpp"

using namespace xner;
using nlohmann::json;

namespace {

bool runtime_available() {
  try {
    ort::Runtime::load("");
    return true;
  } catch (const ProviderError&) {
    return false;
  }
}

#define REQUIRE_RUNTIME() \
  if (!runtime_available()) GTEST_SKIP() << "ONNX Runtime library not found"

std::vector<json> references(const std::string& model) {
  std::vector<json> out;
  std::ifstream in(testutil::fixture(model + "/reference.jsonl"));
  for (std::string line; std::getline(in, line);) out.push_back(json::parse(line));
  return out;
}

void check_parity(const std::string& model) {
  const auto p = load_transformer_provider(testutil::fixture(model));
  const auto refs = references(model);
  ASSERT_EQ(refs.size(), 10u);
  for (const auto& r : refs) {
    const auto words = r["words"].get<std::vector<std::string>>();
    const auto t = p->tokenize(words);
    ASSERT_TRUE(t.is_consistent());
    const auto body = r["provider_tokens"].get<std::vector<TokenId>>();
    const std::size_t prefix = 1;
    ASSERT_EQ(std::vector<TokenId>(t.ids.begin() + prefix, t.ids.begin() + prefix + body.size()), body);
    const int wi = r["word_index"].get<int>();
    const int pos = r["query_position"].get<int>();
    EXPECT_EQ(t.word_to_range[wi].first, pos);
    const auto d = p->distribution_at(t, pos);
    const auto want = r["probs"].get<std::vector<double>>();
    ASSERT_EQ(d.vocab_size(), want.size());
    double worst = 0.0, sum = 0.0;
    for (std::size_t v = 0; v < want.size(); ++v) {
      worst = std::max(worst, std::abs(d.probs[v] - want[v]));
      sum += d.probs[v];
    }
    EXPECT_LT(worst, 1e-4) << r["words"].dump();
    EXPECT_NEAR(sum, 1.0, 1e-6);
  }
}

}  // namespace

TEST(Transformer, MlmParity) {
  REQUIRE_RUNTIME();
  check_parity("tiny-mlm");
}

TEST(Transformer, ClmParity) {
  REQUIRE_RUNTIME();
  check_parity("tiny-clm");
}

TEST(Transformer, HiddenStateParity) {
  REQUIRE_RUNTIME();
  const auto p = load_transformer_provider(testutil::fixture("tiny-mlm"));
  const auto ref = json::parse(testutil::slurp(testutil::fixture("tiny-mlm/hidden.json")));
  const auto t = p->tokenize(ref["words"].get<std::vector<std::string>>());
  ASSERT_EQ(t.ids, ref["ids"].get<std::vector<TokenId>>());
  const auto h = p->hidden_states(t);
  const auto want = ref["hidden_states"].get<std::vector<std::vector<double>>>();
  ASSERT_EQ(h.size(), want.size());
  for (std::size_t k = 0; k < h.size(); ++k) {
    ASSERT_EQ(h[k].size(), p->hidden_size());
    for (std::size_t d = 0; d < h[k].size(); ++d) EXPECT_NEAR(h[k][d], want[k][d], 1e-4);
  }
}

TEST(Transformer, BatchingDoesNotChangeResults) {
  REQUIRE_RUNTIME();
  TransformerConfig small;
  small.max_batch = 2;
  const auto a = load_transformer_provider(testutil::fixture("tiny-mlm"));
  const auto b = load_transformer_provider(testutil::fixture("tiny-mlm"), small);
  std::vector<DistributionQuery> qs;
  for (const auto& r : references("tiny-mlm"))
    qs.push_back({a->tokenize(r["words"].get<std::vector<std::string>>()).ids, r["query_position"].get<int>(), {}});
  const auto together = a->distributions(qs);
  std::vector<DistributionQuery> reversed(qs.rbegin(), qs.rend());
  const auto chunked = b->distributions(reversed);
  for (std::size_t k = 0; k < qs.size(); ++k) {
    const auto single = a->distributions(std::span(&qs[k], 1)).front();
    for (std::size_t v = 0; v < single.vocab_size(); ++v) {
      EXPECT_NEAR(together[k].probs[v], single.probs[v], 1e-6);
      EXPECT_NEAR(chunked[qs.size() - 1 - k].probs[v], single.probs[v], 1e-6);
    }
  }
  EXPECT_EQ(a->distribution_at(a->tokenize(std::vector<std::string>{"EU", "rejects"}), 1).probs,
            a->distribution_at(a->tokenize(std::vector<std::string>{"EU", "rejects"}), 1).probs);
}

TEST(Transformer, Errors) {
  REQUIRE_RUNTIME();
  const auto p = load_transformer_provider(testutil::fixture("tiny-mlm"));
  const auto t = p->tokenize(std::vector<std::string>{"EU", "rejects"});
  EXPECT_THROW(p->distribution_at(t, static_cast<int>(t.ids.size())), std::out_of_range);
  std::vector<std::string> many(80, "Paris");
  const auto long_t = p->tokenize(many);
  EXPECT_THROW(p->distribution_at(long_t, 3), ProviderError);
  const auto clm = load_transformer_provider(testutil::fixture("tiny-clm"));
  EXPECT_THROW(clm->distribution_at(clm->tokenize(std::vector<std::string>{"EU"}), 0), std::out_of_range);
  EXPECT_EQ(clm->mode(), LmMode::clm);
  EXPECT_NE(clm->fingerprint(), p->fingerprint());
}

TEST(Transformer, MissingOrCorruptFiles) {
  EXPECT_THROW(load_provider("/nonexistent/model"), ProviderError);
  testutil::TempDir dir;
  EXPECT_THROW(load_provider(dir.path()), ProviderError);
  const auto manifest = testutil::slurp(testutil::fixture("tiny-mlm/manifest.json"));
  testutil::spit(dir.path() / "manifest.json", manifest);
  EXPECT_THROW(load_provider(dir.path()), ProviderError);  // no model file
  for (const auto* f : {"vocab.json", "merges.txt"})
    std::filesystem::copy_file(testutil::fixture(std::string("tiny-mlm/") + f), dir.path() / f);
  testutil::spit(dir.path() / "model.onnx", "definitely not a graph");
  if (runtime_available()) {
    EXPECT_THROW(load_provider(dir.path()), ProviderError);
  }
  testutil::spit(dir.path() / "manifest.json", "{");
  EXPECT_THROW(load_provider(dir.path()), ProviderError);
}

TEST(Manifest, Parses) {
  const auto m = parse_manifest(testutil::slurp(testutil::fixture("tiny-mlm/manifest.json")));
  EXPECT_EQ(m.mode, LmMode::mlm);
  EXPECT_EQ(m.mask_token_id, 4);
  EXPECT_EQ(m.special("unk"), 3);
  EXPECT_EQ(m.prefix_token_ids, (std::vector<TokenId>{0}));
  EXPECT_EQ(m.suffix_token_ids, (std::vector<TokenId>{2}));
  EXPECT_EQ(m.hidden_size, 16u);
  EXPECT_EQ(m.max_sequence_length, 64u);
}

TEST(Manifest, RequiredFields) {
  auto j = json::parse(testutil::slurp(testutil::fixture("tiny-mlm/manifest.json")));
  auto broken = j;
  broken["special_token_ids"].erase("unk");
  EXPECT_THROW(parse_manifest(broken.dump()), ProviderError);
  broken = j;
  broken["mode"] = "seq2seq";
  EXPECT_THROW(parse_manifest(broken.dump()), ProviderError);
  broken = j;
  broken.erase("mask_token_id");
  EXPECT_THROW(parse_manifest(broken.dump()), ProviderError);
  broken = j;
  broken.erase("hidden_size");
  EXPECT_THROW(parse_manifest(broken.dump()), ProviderError);
}

TEST(Manifest, ToyBackend) {
  testutil::TempDir dir;
  testutil::spit(dir.path() / "manifest.json", R"({"backend": "toy", "corpus": "c.txt", "smoothing": 0.1})");
  EXPECT_THROW(load_provider(dir.path()), ProviderError);
  testutil::spit(dir.path() / "c.txt", "a B-X\nb O\n\n");
  const auto p = load_provider(dir.path());
  EXPECT_EQ(p->mode(), LmMode::mlm);
  EXPECT_EQ(p->vocab_size(), 3u);
}
