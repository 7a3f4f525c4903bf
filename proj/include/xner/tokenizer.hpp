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

#include <climits>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "xner/error.hpp"
#include "xner/lm.hpp"

namespace xner {

// Maps one word (already split by the corpus) to provider token ids.
class SubwordTokenizer {
 public:
  virtual ~SubwordTokenizer() = default;
  virtual std::vector<TokenId> encode_word(std::string_view word) const = 0;
  virtual std::string token_text(TokenId id) const = 0;
  virtual std::size_t vocab_size() const = 0;
};

namespace detail {

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ProviderError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void append_utf8(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out += static_cast<char>(cp);
  } else if (cp < 0x800) {
    out += static_cast<char>(0xC0 | (cp >> 6));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else if (cp < 0x10000) {
    out += static_cast<char>(0xE0 | (cp >> 12));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else {
    out += static_cast<char>(0xF0 | (cp >> 18));
    out += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  }
}

// Decodes one code point at s[k]; advances k. Invalid bytes decode as themselves.
inline char32_t next_code_point(std::string_view s, std::size_t& k) {
  const auto b0 = static_cast<unsigned char>(s[k]);
  int len = b0 < 0x80 ? 1 : (b0 >> 5) == 0x6 ? 2 : (b0 >> 4) == 0xE ? 3 : (b0 >> 3) == 0x1E ? 4 : 1;
  if (k + len > s.size()) len = 1;
  char32_t cp = len == 1 ? b0 : len == 2 ? (b0 & 0x1F) : len == 3 ? (b0 & 0x0F) : (b0 & 0x07);
  for (int i = 1; i < len; ++i) cp = (cp << 6) | (static_cast<unsigned char>(s[k + i]) & 0x3F);
  k += len;
  return cp;
}

enum class CharClass { letter, number, space, other };

// Coarse Unicode classes: ASCII is exact; outside ASCII the Latin-1 and
// general punctuation blocks count as `other`, everything else as a letter.
inline CharClass classify(char32_t cp) {
  if (cp < 0x80) {
    if ((cp >= 'a' && cp <= 'z') || (cp >= 'A' && cp <= 'Z')) return CharClass::letter;
    if (cp >= '0' && cp <= '9') return CharClass::number;
    if (cp == ' ' || cp == '\t' || cp == '\n' || cp == '\r' || cp == '\f' || cp == '\v') return CharClass::space;
    return CharClass::other;
  }
  if (cp == 0xA0 || cp == 0x3000 || (cp >= 0x2000 && cp <= 0x200A)) return CharClass::space;
  if ((cp >= 0xA1 && cp <= 0xBF) || cp == 0xD7 || cp == 0xF7) return CharClass::other;
  if ((cp >= 0x2010 && cp <= 0x206F) || (cp >= 0x3001 && cp <= 0x303F)) return CharClass::other;
  if (cp >= 0xFF01 && cp <= 0xFF0F) return CharClass::other;
  return CharClass::letter;
}

// GPT-2 style pre-tokenisation of a single word:
//   's|'t|'re|'ve|'m|'ll|'d| ?\p{L}+| ?\p{N}+| ?[^\s\p{L}\p{N}]+|\s+
inline std::vector<std::string_view> gpt2_pretokenize(std::string_view s) {
  static constexpr std::string_view kContractions[] = {"'s", "'t", "'re", "'ve", "'m", "'ll", "'d"};
  std::vector<std::string_view> out;
  std::size_t k = 0;
  while (k < s.size()) {
    bool matched = false;
    for (auto c : kContractions) {
      if (s.substr(k, c.size()) == c) {
        out.push_back(s.substr(k, c.size()));
        k += c.size();
        matched = true;
        break;
      }
    }
    if (matched) continue;
    const std::size_t begin = k;
    std::size_t probe = k;
    if (s[k] == ' ' && k + 1 < s.size()) {
      std::size_t after = k + 1;
      auto cls = classify(next_code_point(s, after));
      if (cls != CharClass::space) probe = k + 1;
    }
    std::size_t at = probe;
    const auto cls = classify(next_code_point(s, at));
    std::size_t end = at;
    while (end < s.size()) {
      std::size_t nxt = end;
      if (classify(next_code_point(s, nxt)) != cls) break;
      end = nxt;
    }
    out.push_back(s.substr(begin, end - begin));
    k = end;
  }
  return out;
}

}  // namespace detail

// Byte-level BPE as used by GPT-2 and RoBERTa (vocab.json + merges.txt).
// Every word is encoded as a separate pre-tokenised unit; with
// add_prefix_space each word is preceded by a space, the usual convention for
// word-split input.
class ByteLevelBpe final : public SubwordTokenizer {
 public:
  ByteLevelBpe(const std::string& vocab_json, const std::string& merges_txt,
               bool add_prefix_space, TokenId unk)
      : add_prefix_space_(add_prefix_space), unk_(unk) {
    build_byte_table();
    nlohmann::json vocab;
    try {
      vocab = nlohmann::json::parse(vocab_json);
    } catch (const nlohmann::json::exception& e) {
      throw ProviderError(std::string("vocab.json: ") + e.what());
    }
    if (!vocab.is_object()) throw ProviderError("vocab.json: expected an object");
    for (auto it = vocab.begin(); it != vocab.end(); ++it) {
      const auto id = it.value().get<TokenId>();
      ids_.emplace(it.key(), id);
      if (static_cast<std::size_t>(id) >= texts_.size()) texts_.resize(id + 1);
      texts_[id] = it.key();
    }
    std::istringstream in(merges_txt);
    std::string line;
    int rank = 0;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty() || line.rfind("#version", 0) == 0) continue;
      const auto sp = line.find(' ');
      if (sp == std::string::npos || line.find(' ', sp + 1) != std::string::npos)
        throw ProviderError("merges.txt: malformed line '" + line + "'");
      ranks_.emplace(line, rank++);
    }
  }

  std::vector<TokenId> encode_word(std::string_view word) const override {
    std::string text = add_prefix_space_ ? " " + std::string(word) : std::string(word);
    std::vector<TokenId> out;
    for (auto piece : detail::gpt2_pretokenize(text)) {
      for (const auto& sym : bpe(piece)) {
        auto it = ids_.find(sym);
        out.push_back(it == ids_.end() ? unk_ : it->second);
      }
    }
    return out;
  }

  // Decoded bytes of the token ("\u0120Paris" -> " Paris").
  std::string token_text(TokenId id) const override {
    if (id < 0 || static_cast<std::size_t>(id) >= texts_.size()) return "<?>";
    const std::string& t = texts_[id];
    std::string out;
    for (std::size_t k = 0; k < t.size();) {
      const std::size_t at = k;
      auto it = byte_of_.find(detail::next_code_point(t, k));
      if (it == byte_of_.end()) return t;
      out += it->second;
      if (k == at) break;
    }
    return out;
  }

  std::size_t vocab_size() const override { return texts_.size(); }

 private:
  void build_byte_table() {
    std::vector<int> direct;
    for (int b = '!'; b <= '~'; ++b) direct.push_back(b);
    for (int b = 0xA1; b <= 0xAC; ++b) direct.push_back(b);
    for (int b = 0xAE; b <= 0xFF; ++b) direct.push_back(b);
    std::vector<char32_t> map(256, 0);
    std::vector<bool> seen(256, false);
    for (int b : direct) {
      map[b] = static_cast<char32_t>(b);
      seen[b] = true;
    }
    char32_t extra = 256;
    for (int b = 0; b < 256; ++b)
      if (!seen[b]) map[b] = extra++;
    for (int b = 0; b < 256; ++b) {
      byte_text_[b].clear();
      detail::append_utf8(byte_text_[b], map[b]);
      byte_of_.emplace(map[b], static_cast<char>(b));
    }
  }

  std::vector<std::string> bpe(std::string_view piece) const {
    std::string key(piece);
    {
      std::lock_guard lock(cache_mu_);
      auto it = cache_.find(key);
      if (it != cache_.end()) return it->second;
    }
    std::vector<std::string> syms;
    for (unsigned char c : piece) syms.push_back(byte_text_[c]);
    while (syms.size() > 1) {
      int best = INT_MAX;
      std::size_t at = 0;
      for (std::size_t k = 0; k + 1 < syms.size(); ++k) {
        auto it = ranks_.find(syms[k] + ' ' + syms[k + 1]);
        if (it != ranks_.end() && it->second < best) {
          best = it->second;
          at = k;
        }
      }
      if (best == INT_MAX) break;
      // Merge every occurrence of the best pair, left to right.
      const std::string a = syms[at], b = syms[at + 1];
      std::vector<std::string> merged;
      for (std::size_t k = 0; k < syms.size();) {
        if (k + 1 < syms.size() && syms[k] == a && syms[k + 1] == b) {
          merged.push_back(a + b);
          k += 2;
        } else {
          merged.push_back(syms[k++]);
        }
      }
      syms = std::move(merged);
    }
    std::lock_guard lock(cache_mu_);
    cache_.emplace(std::move(key), syms);
    return syms;
  }

  bool add_prefix_space_;
  TokenId unk_;
  std::string byte_text_[256];
  std::unordered_map<char32_t, char> byte_of_;
  std::unordered_map<std::string, TokenId> ids_;
  std::vector<std::string> texts_;
  std::unordered_map<std::string, int> ranks_;
  mutable std::mutex cache_mu_;
  mutable std::unordered_map<std::string, std::vector<std::string>> cache_;
};

// BERT WordPiece (vocab.txt, one token per line). Words are optionally
// lowercased, split at punctuation, then matched greedily longest-first with
// "##" continuation pieces.
class WordPiece final : public SubwordTokenizer {
 public:
  WordPiece(const std::string& vocab_txt, bool lowercase, TokenId unk, int max_chars = 100)
      : lowercase_(lowercase), unk_(unk), max_chars_(max_chars) {
    std::istringstream in(vocab_txt);
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      ids_.emplace(line, static_cast<TokenId>(texts_.size()));
      texts_.push_back(line);
    }
    if (texts_.empty()) throw ProviderError("vocab.txt is empty");
  }

  std::vector<TokenId> encode_word(std::string_view word) const override {
    std::string w(word);
    if (lowercase_)
      for (auto& c : w) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    std::vector<TokenId> out;
    // Split punctuation into separate pieces.
    std::vector<std::string> pieces;
    std::size_t k = 0;
    std::string cur;
    while (k < w.size()) {
      std::size_t b = k;
      auto cp = detail::next_code_point(w, k);
      if (detail::classify(cp) == detail::CharClass::other) {
        if (!cur.empty()) pieces.push_back(std::move(cur));
        cur.clear();
        pieces.emplace_back(w.substr(b, k - b));
      } else {
        cur += w.substr(b, k - b);
      }
    }
    if (!cur.empty()) pieces.push_back(std::move(cur));
    for (const auto& p : pieces) greedy(p, out);
    return out;
  }

  std::string token_text(TokenId id) const override {
    if (id < 0 || static_cast<std::size_t>(id) >= texts_.size()) return "<?>";
    return texts_[id];
  }

  std::size_t vocab_size() const override { return texts_.size(); }

 private:
  void greedy(const std::string& piece, std::vector<TokenId>& out) const {
    if (static_cast<int>(piece.size()) > max_chars_) {
      out.push_back(unk_);
      return;
    }
    std::vector<TokenId> sub;
    std::size_t start = 0;
    while (start < piece.size()) {
      std::size_t end = piece.size();
      TokenId found = -1;
      while (end > start) {
        std::string cand = (start > 0 ? "##" : "") + piece.substr(start, end - start);
        auto it = ids_.find(cand);
        if (it != ids_.end()) {
          found = it->second;
          break;
        }
        --end;
      }
      if (found < 0) {
        out.push_back(unk_);
        return;
      }
      sub.push_back(found);
      start = end;
    }
    out.insert(out.end(), sub.begin(), sub.end());
  }

  bool lowercase_;
  TokenId unk_;
  int max_chars_;
  std::unordered_map<std::string, TokenId> ids_;
  std::vector<std::string> texts_;
};

}  // namespace xner
