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

// Naive re-implementations for cross-checking. Everything here works on
// word strings and recounts the corpus on every call; nothing is shared
// with the library beyond the Sentence type.
#pragma once

#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "xner/corpus.hpp"

namespace oracle {

using Words = std::vector<std::string>;
using Dist = std::map<std::string, double>;  // word -> probability

struct BigramOracle {
  std::vector<Words> corpus;
  double alpha = 0.01;

  std::vector<std::string> vocab() const {
    std::set<std::string> v;
    for (const auto& s : corpus) v.insert(s.begin(), s.end());
    std::vector<std::string> out(v.begin(), v.end());
    out.push_back("<unk>");
    return out;
  }

  // Counts of the word following `ctx` ("<s>" = sentence start) or, with
  // before=true, of the word preceding it ("</s>" = sentence end).
  std::map<std::string, double> follow_counts(const std::string& ctx, bool before) const {
    std::map<std::string, double> c;
    for (const auto& s : corpus)
      for (std::size_t k = 0; k < s.size(); ++k) {
        const std::string nb = before ? (k + 1 < s.size() ? s[k + 1] : "</s>") : (k > 0 ? s[k - 1] : "<s>");
        if (nb == ctx) c[s[k]] += 1.0;
      }
    return c;
  }

  void add_half(Dist& d, const std::vector<std::string>& v, const std::string* ctx, bool before) const {
    const double n = static_cast<double>(v.size());
    std::map<std::string, double> c;
    if (ctx != nullptr) c = follow_counts(*ctx, before);
    double total = 0.0;
    for (const auto& [w, x] : c) total += x;
    for (const auto& w : v) {
      const double p = total == 0.0 ? 1.0 / n : ((c.count(w) ? c.at(w) : 0.0) + alpha) / (total + alpha * n);
      d[w] += 0.5 * p;
    }
  }

  // Distribution at position k of `words`; positions in `masked` (and k
  // itself) are hidden from the neighbours.
  Dist predict(const Words& words, int k, const std::set<int>& masked = {}) const {
    const auto v = vocab();
    Dist d;
    const std::string bos = "<s>", eos = "</s>";
    const std::string* left = k == 0 ? &bos : (masked.count(k - 1) ? nullptr : &words[k - 1]);
    const std::string* right =
        k + 1 == static_cast<int>(words.size()) ? &eos : (masked.count(k + 1) ? nullptr : &words[k + 1]);
    add_half(d, v, left, false);
    add_half(d, v, right, true);
    return d;
  }

  // Co-occurrence row of a word keyed by neighbour string, L2-normalised.
  std::map<std::string, double> embedding(const std::string& w) const {
    std::map<std::string, double> row;
    for (const auto& s : corpus)
      for (std::size_t k = 0; k < s.size(); ++k) {
        if (s[k] != w) continue;
        row[k > 0 ? s[k - 1] : "<s>"] += 1.0;
        row[k + 1 < s.size() ? s[k + 1] : "</s>"] += 1.0;
      }
    double norm = 0.0;
    for (const auto& [c, x] : row) norm += x * x;
    for (auto& [c, x] : row) x /= std::sqrt(norm);
    return row;
  }
};

inline double kl(const Dist& p, const Dist& q) {
  double s = 0.0;
  for (const auto& [w, pv] : p)
    if (pv > 0.0) s += pv * std::log(pv / q.at(w));
  return s;
}

inline Words substitute(const Words& x, int i, int j, const Words& r) {
  Words out(x.begin(), x.begin() + i);
  out.insert(out.end(), r.begin(), r.end());
  out.insert(out.end(), x.begin() + j + 1, x.end());
  return out;
}

inline Words split(const std::string& s) {
  Words out;
  std::string cur;
  for (char c : s) {
    if (c == ' ') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

// KL summed over the given context positions of x (positions after the
// span move with the replacement length).
inline double one_way(const BigramOracle& lm, const Words& x, int i, int j, const Words& r,
                      const std::vector<int>& positions) {
  const Words xr = substitute(x, i, j, r);
  const int shift = static_cast<int>(r.size()) - (j - i + 1);
  double s = 0.0;
  for (int k : positions) s += kl(lm.predict(x, k), lm.predict(xr, k > j ? k + shift : k));
  return s;
}

inline std::vector<int> edge_neighbours(const Words& x, int i, int j) {
  std::vector<int> out;
  if (i > 0) out.push_back(i - 1);
  if (j + 1 < static_cast<int>(x.size())) out.push_back(j + 1);
  return out;
}

struct SeedContext {
  Words y;
  int u, w;
};

inline SeedContext seed_context(const std::string& label, const std::string& seed) {
  SeedContext c;
  c.y = {"The"};
  for (const auto& t : split(label)) c.y.push_back(t);
  c.y.back() += ":";
  c.u = static_cast<int>(c.y.size());
  for (const auto& t : split(seed)) c.y.push_back(t);
  c.w = static_cast<int>(c.y.size()) - 1;
  return c;
}

struct TwoWay {
  double x, y, total;
};

inline TwoWay two_way(const BigramOracle& lm, const Words& x, int i, int j, const std::string& label,
                      const std::string& seed) {
  const auto z = split(seed);
  const auto c = seed_context(label, seed);
  const Words span(x.begin() + i, x.begin() + j + 1);
  std::vector<int> ypos;
  for (int k = 0; k < static_cast<int>(c.y.size()); ++k)
    if (k < c.u || k > c.w) ypos.push_back(k);
  TwoWay t;
  t.x = one_way(lm, x, i, j, z, edge_neighbours(x, i, j));
  t.y = one_way(lm, c.y, c.u, c.w, span, ypos);
  t.total = t.x + t.y;
  return t;
}

inline std::map<std::string, double> pool(const BigramOracle& lm, const Words& words, int i, int j) {
  std::map<std::string, double> acc;
  for (int k = i; k <= j; ++k)
    for (const auto& [c, x] : lm.embedding(words[k])) acc[c] += x / (j - i + 1);
  return acc;
}

inline double cos(const std::map<std::string, double>& a, const std::map<std::string, double>& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (const auto& [c, x] : a) {
    na += x * x;
    if (b.count(c)) dot += x * b.at(c);
  }
  for (const auto& [c, x] : b) nb += x * x;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

inline double cosine(const BigramOracle& lm, const Words& x, int i, int j, const std::string& label,
                     const std::string& seed) {
  const auto z = split(seed);
  const auto c = seed_context(label, seed);
  const Words span(x.begin() + i, x.begin() + j + 1);
  const int m = static_cast<int>(z.size());
  const int L = j - i + 1;
  const auto xr = substitute(x, i, j, z);
  const auto yr = substitute(c.y, c.u, c.w, span);
  const double xs = cos(pool(lm, x, i, j), pool(lm, xr, i, i + m - 1));
  const double ys = cos(pool(lm, yr, c.u, c.u + L - 1), pool(lm, c.y, c.u, c.w));
  return xs + ys;
}

inline double prompt(const BigramOracle& lm, const Words& x, int i, int j, const std::string& label) {
  Words p = x;
  p.back() += ",";
  for (int k = i; k <= j; ++k) p.push_back(x[k]);
  p.push_back("is");
  const auto lw = split(label);
  const char c0 = static_cast<char>(std::tolower(static_cast<unsigned char>(lw.front()[0])));
  p.push_back(std::string("aeiou").find(c0) != std::string::npos ? "an" : "a");
  const int first = static_cast<int>(p.size());
  for (const auto& w : lw) p.push_back(w);
  const int last = static_cast<int>(p.size()) - 1;
  p.push_back("entity.");
  const auto vocab = lm.vocab();
  const std::set<std::string> known(vocab.begin(), vocab.end());
  double prob = 1.0;
  for (int k = first; k <= last; ++k) {
    std::set<int> masked;
    for (int m = k + 1; m <= last; ++m) masked.insert(m);
    const auto d = lm.predict(p, k, masked);
    prob *= d.at(known.count(p[k]) ? p[k] : "<unk>");
  }
  return prob;
}

}  // namespace oracle
