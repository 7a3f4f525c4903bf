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
#include <array>
#include <cctype>
#include <compare>
#include <cstddef>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include "xner/error.hpp"

namespace xner {

// Word-tokenized sentence. Token indices are 0-based throughout the library.
struct Sentence {
  int id = 0;
  std::vector<std::string> tokens;

  std::size_t size() const { return tokens.size(); }
  bool operator==(const Sentence&) const = default;
};

inline Sentence make_sentence(int id, std::vector<std::string> tokens) {
  if (tokens.empty()) throw DataError("sentence " + std::to_string(id) + " has no tokens");
  for (const auto& t : tokens) {
    if (t.empty()) throw DataError("sentence " + std::to_string(id) + " has an empty token");
  }
  return Sentence{id, std::move(tokens)};
}

// Inclusive token range [start, end] inside one sentence.
struct Span {
  int sentence_id = 0;
  int start = 0;
  int end = 0;

  int length() const { return end - start + 1; }
  bool overlaps(const Span& o) const {
    return sentence_id == o.sentence_id && start <= o.end && o.start <= end;
  }
  auto operator<=>(const Span&) const = default;
};

inline bool span_fits(const Span& s, std::size_t n) {
  return s.start >= 0 && s.start <= s.end && static_cast<std::size_t>(s.end) < n;
}

inline std::vector<std::string> span_tokens(const Sentence& s, const Span& span) {
  if (!span_fits(span, s.size())) throw DataError("span out of sentence bounds");
  return {s.tokens.begin() + span.start, s.tokens.begin() + span.end + 1};
}

// Sentence with `span` replaced by `replacement`.
inline Sentence substitute(const Sentence& s, const Span& span,
                           std::span<const std::string> replacement) {
  if (!span_fits(span, s.size())) throw DataError("span out of sentence bounds");
  Sentence out{s.id, {}};
  out.tokens.reserve(s.size() - span.length() + replacement.size());
  out.tokens.insert(out.tokens.end(), s.tokens.begin(), s.tokens.begin() + span.start);
  out.tokens.insert(out.tokens.end(), replacement.begin(), replacement.end());
  out.tokens.insert(out.tokens.end(), s.tokens.begin() + span.end + 1, s.tokens.end());
  return out;
}

struct Entity {
  Span span;
  std::string type;

  auto operator<=>(const Entity&) const = default;
};

// ---------------------------------------------------------------------------
// BIO tags

using Tags = std::vector<std::string>;

struct TagParts {
  char prefix = 'O';  // 'O', 'B' or 'I'
  std::string type;
};

inline std::optional<TagParts> split_tag(std::string_view tag) {
  if (tag == "O") return TagParts{'O', {}};
  if (tag.size() > 2 && (tag[0] == 'B' || tag[0] == 'I') && tag[1] == '-')
    return TagParts{tag[0], std::string(tag.substr(2))};
  return std::nullopt;
}

inline bool is_valid_bio(const Tags& tags) {
  std::string open;  // type of the entity currently open, empty after O
  for (const auto& t : tags) {
    auto parts = split_tag(t);
    if (!parts) return false;
    if (parts->prefix == 'I' && parts->type != open) return false;
    open = parts->prefix == 'O' ? std::string{} : parts->type;
  }
  return true;
}

// Rewrites every I-t that does not continue an open t entity into B-t.
// Throws on tags that are not O, B-x or I-x.
inline Tags repair_bio(Tags tags) {
  std::string open;
  for (auto& t : tags) {
    auto parts = split_tag(t);
    if (!parts) throw DataError("not a BIO tag: '" + t + "'");
    if (parts->prefix == 'I' && parts->type != open) t = "B-" + parts->type;
    open = parts->prefix == 'O' ? std::string{} : parts->type;
  }
  return tags;
}

struct TaggedSentence {
  Sentence sentence;
  Tags tags;

  bool operator==(const TaggedSentence&) const = default;
};

// Maximal B/I runs, in token order.
inline std::vector<Entity> entities_from_bio(const Tags& tags, int sentence_id = 0) {
  std::vector<Entity> out;
  for (std::size_t k = 0; k < tags.size(); ++k) {
    auto parts = split_tag(tags[k]);
    if (!parts || parts->prefix == 'O') continue;
    bool continues = parts->prefix == 'I' && !out.empty() &&
                     out.back().span.end == static_cast<int>(k) - 1 &&
                     out.back().type == parts->type;
    if (continues) {
      out.back().span.end = static_cast<int>(k);
    } else {
      out.push_back({{sentence_id, static_cast<int>(k), static_cast<int>(k)}, parts->type});
    }
  }
  return out;
}

inline Tags bio_from_entities(std::span<const Entity> entities, std::size_t n) {
  Tags tags(n, "O");
  std::vector<bool> used(n, false);
  for (const auto& e : entities) {
    if (!span_fits(e.span, n)) throw DataError("entity span out of bounds");
    if (e.type.empty()) throw DataError("entity without a type");
    for (int k = e.span.start; k <= e.span.end; ++k) {
      if (used[k]) throw DataError("overlapping entity spans at token " + std::to_string(k));
      used[k] = true;
      tags[k] = (k == e.span.start ? "B-" : "I-") + e.type;
    }
  }
  return tags;
}

inline std::vector<Entity> gold_entities(std::span<const TaggedSentence> data) {
  std::vector<Entity> out;
  for (const auto& ts : data) {
    auto es = entities_from_bio(ts.tags, ts.sentence.id);
    out.insert(out.end(), es.begin(), es.end());
  }
  return out;
}

// ---------------------------------------------------------------------------
// CoNLL column format

namespace detail {

inline std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> cols;
  std::size_t k = 0;
  while (k < line.size()) {
    while (k < line.size() && (line[k] == ' ' || line[k] == '\t')) ++k;
    std::size_t b = k;
    while (k < line.size() && line[k] != ' ' && line[k] != '\t') ++k;
    if (k > b) cols.push_back(line.substr(b, k - b));
  }
  return cols;
}

template <typename LineFn, typename BreakFn>
void for_each_line(std::string_view text, LineFn&& on_line, BreakFn&& on_break) {
  std::size_t lineno = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? text.size() - pos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() : nl + 1;
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    auto cols = split_ws(line);
    if (cols.empty()) {
      on_break();
    } else {
      on_line(lineno, cols);
    }
  }
  on_break();
}

inline bool is_docstart(std::string_view token) { return token == "-DOCSTART-"; }

}  // namespace detail

// One token per line: first column is the token, last column the BIO tag.
// Blank lines separate sentences; -DOCSTART- lines are skipped. Invalid I-
// continuations are repaired to B-.
inline std::vector<TaggedSentence> parse_conll(std::string_view text) {
  std::vector<TaggedSentence> out;
  TaggedSentence cur;
  auto flush = [&] {
    if (cur.sentence.tokens.empty()) return;
    cur.sentence.id = static_cast<int>(out.size());
    cur.tags = repair_bio(std::move(cur.tags));
    out.push_back(std::move(cur));
    cur = {};
  };
  detail::for_each_line(
      text,
      [&](std::size_t lineno, const std::vector<std::string_view>& cols) {
        if (detail::is_docstart(cols[0])) {
          flush();
          return;
        }
        if (cols.size() < 2)
          throw ParseError(lineno, "expected 'token tag', got " + std::to_string(cols.size()) + " column");
        if (!split_tag(cols.back()))
          throw ParseError(lineno, "not a BIO tag: '" + std::string(cols.back()) + "'");
        cur.sentence.tokens.emplace_back(cols.front());
        cur.tags.emplace_back(cols.back());
      },
      flush);
  return out;
}

inline std::string emit_conll(std::span<const TaggedSentence> data) {
  std::string out;
  for (const auto& ts : data) {
    if (ts.tags.size() != ts.sentence.size())
      throw DataError("sentence " + std::to_string(ts.sentence.id) + ": tag count differs from token count");
    if (!is_valid_bio(ts.tags))
      throw DataError("sentence " + std::to_string(ts.sentence.id) + ": invalid BIO sequence");
    for (std::size_t k = 0; k < ts.tags.size(); ++k) {
      out += ts.sentence.tokens[k];
      out += ' ';
      out += ts.tags[k];
      out += '\n';
    }
    out += '\n';
  }
  return out;
}

// Unlabeled corpus: CoNLL text, or one token per line with no tag column.
// Sentence ids are 0-based positions in the file.
inline std::vector<Sentence> parse_corpus(std::string_view text) {
  bool has_tags = false;
  bool single = false;
  detail::for_each_line(
      text,
      [&](std::size_t, const std::vector<std::string_view>& cols) {
        if (detail::is_docstart(cols[0])) return;
        (cols.size() == 1 ? single : has_tags) = true;
      },
      [] {});
  std::vector<Sentence> out;
  if (!single || has_tags) {
    for (auto& ts : parse_conll(text)) out.push_back(std::move(ts.sentence));
    return out;
  }
  Sentence cur;
  auto flush = [&] {
    if (cur.tokens.empty()) return;
    cur.id = static_cast<int>(out.size());
    out.push_back(std::move(cur));
    cur = {};
  };
  detail::for_each_line(
      text,
      [&](std::size_t, const std::vector<std::string_view>& cols) {
        if (detail::is_docstart(cols[0])) {
          flush();
          return;
        }
        cur.tokens.emplace_back(cols[0]);
      },
      flush);
  return out;
}

// ---------------------------------------------------------------------------
// Candidate spans

using StopWords = std::unordered_set<std::string>;

inline std::string ascii_lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

inline constexpr std::string_view kStopWordsVersion = "en-v1";

// Mirrors data/stopwords/en-v1.txt.
inline const StopWords& default_stop_words() {
  static constexpr std::array<std::string_view, 127> kWords = {
    "i", "me", "my", "myself", "we", "our", "ours", "ourselves", "you", "your",
    "yours", "yourself", "yourselves", "he", "him", "his", "himself", "she",
    "her", "hers", "herself", "it", "its", "itself", "they", "them", "their",
    "theirs", "themselves", "what", "which", "who", "whom", "this", "that",
    "these", "those", "am", "is", "are", "was", "were", "be", "been", "being",
    "have", "has", "had", "having", "do", "does", "did", "doing", "a", "an",
    "the", "and", "but", "if", "or", "because", "as", "until", "while", "of",
    "at", "by", "for", "with", "about", "against", "between", "into", "through",
    "during", "before", "after", "above", "below", "to", "from", "up", "down",
    "in", "out", "on", "off", "over", "under", "again", "further", "then",
    "once", "here", "there", "when", "where", "why", "how", "all", "any", "both",
    "each", "few", "more", "most", "other", "some", "such", "no", "nor", "not",
    "only", "own", "same", "so", "than", "too", "very", "s", "t", "can", "will",
    "just", "don", "should", "now"};
  static const StopWords set = [] {
    StopWords s;
    for (auto w : kWords) s.emplace(w);
    return s;
  }();
  return set;
}

// One word per line; blank lines and lines starting with '#' are ignored.
inline StopWords parse_stop_words(std::string_view text) {
  StopWords out;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    auto cols = detail::split_ws(line);
    if (cols.empty() || cols[0].front() == '#') continue;
    out.insert(ascii_lower(cols[0]));
  }
  return out;
}

struct EnumConfig {
  int max_span_len = 3;
  int max_sentence_len = 30;
  StopWords stop_words = default_stop_words();

  void validate() const {
    if (max_span_len < 1) throw UsageError("max_span_len must be >= 1");
    if (max_sentence_len < max_span_len)
      throw UsageError("max_sentence_len must be >= max_span_len");
  }
};

// All spans of at most max_span_len tokens with no stop word, ordered by
// start then length. Sentences longer than max_sentence_len yield nothing.
inline std::vector<Span> enumerate_candidates(const Sentence& s, const EnumConfig& cfg) {
  std::vector<Span> out;
  const int n = static_cast<int>(s.size());
  if (n > cfg.max_sentence_len) return out;
  std::vector<bool> stop(n);
  for (int k = 0; k < n; ++k) stop[k] = cfg.stop_words.count(ascii_lower(s.tokens[k])) > 0;
  for (int i = 0; i < n; ++i) {
    for (int j = i; j < n && j - i + 1 <= cfg.max_span_len; ++j) {
      if (stop[j]) break;
      if (stop[i]) break;
      out.push_back({s.id, i, j});
    }
  }
  return out;
}

}  // namespace xner
