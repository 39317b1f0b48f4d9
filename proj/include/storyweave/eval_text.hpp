#pragma once

// Text and multimodal metrics: word tokenization, sentence BLEU-4,
// greedy-matching BERTScore-style F1 and CLIPScore.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "storyweave/backends.hpp"
#include "storyweave/errors.hpp"

namespace storyweave {

struct TokenSequence {
  std::vector<std::string> tokens;

  std::size_t size() const { return tokens.size(); }
  bool empty() const { return tokens.empty(); }
  std::size_t unique_count() const { return std::set<std::string>(tokens.begin(), tokens.end()).size(); }
  std::string joined() const {
    std::string out;
    for (const auto& t : tokens) {
      if (!out.empty()) out.push_back(' ');
      out += t;
    }
    return out;
  }

  bool operator==(const TokenSequence&) const = default;
};

namespace detail {

/// Decodes one UTF-8 code point at `i`, advancing `i`. Malformed bytes decode as U+FFFD.
inline char32_t next_code_point(std::string_view s, std::size_t& i) {
  const auto b0 = static_cast<unsigned char>(s[i]);
  const int extra = b0 < 0x80 ? 0 : (b0 >> 5) == 0x6 ? 1 : (b0 >> 4) == 0xE ? 2 : (b0 >> 3) == 0x1E ? 3 : -1;
  if (extra < 0 || s.size() - i <= static_cast<std::size_t>(extra)) {
    ++i;
    return 0xFFFD;
  }
  char32_t cp = extra == 0 ? b0 : b0 & (0x3F >> extra);
  for (int k = 1; k <= extra; ++k) {
    const auto b = static_cast<unsigned char>(s[i + k]);
    if ((b & 0xC0) != 0x80) {
      ++i;
      return 0xFFFD;
    }
    cp = (cp << 6) | (b & 0x3F);
  }
  i += static_cast<std::size_t>(extra) + 1;
  return cp;
}

inline void append_utf8(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

// ASCII and Latin-1/Latin Extended-A/B letters count as alphabetic.
inline bool is_letter(char32_t c) {
  if ((c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z')) return true;
  return c >= 0xC0 && c <= 0x24F && c != 0xD7 && c != 0xF7;
}

inline char32_t fold_case(char32_t c) {
  if (c >= 'A' && c <= 'Z') return c + 32;
  if (c >= 0xC0 && c <= 0xDE && c != 0xD7) return c + 32;
  return c;
}

}  // namespace detail

/// Lowercase runs of letters; every other character separates tokens.
inline TokenSequence tokenize_words(std::string_view text) {
  TokenSequence out;
  std::string current;
  for (std::size_t i = 0; i < text.size();) {
    const char32_t cp = detail::next_code_point(text, i);
    if (detail::is_letter(cp)) {
      detail::append_utf8(current, detail::fold_case(cp));
    } else if (!current.empty()) {
      out.tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) out.tokens.push_back(std::move(current));
  return out;
}

namespace detail {

using NGramCounts = std::map<std::vector<std::string_view>, std::size_t>;

inline NGramCounts ngram_counts(const TokenSequence& seq, std::size_t n) {
  NGramCounts counts;
  if (seq.size() < n) return counts;
  for (std::size_t i = 0; i + n <= seq.size(); ++i)
    ++counts[std::vector<std::string_view>(seq.tokens.begin() + static_cast<std::ptrdiff_t>(i),
                                           seq.tokens.begin() + static_cast<std::ptrdiff_t>(i + n))];
  return counts;
}

}  // namespace detail

inline constexpr std::size_t kBleuOrder = 4;

/// Sentence BLEU-4 on a 0-100 scale: uniform weights, clipped counts against
/// the max over references, add-one smoothing for n >= 2, brevity penalty
/// against the closest reference length (shorter wins ties).
inline double bleu_score(const TokenSequence& candidate, std::span<const TokenSequence> references) {
  if (references.empty()) throw EmptyInputError("BLEU needs at least one reference");
  if (candidate.empty()) return 0.0;

  double log_sum = 0.0;
  for (std::size_t n = 1; n <= kBleuOrder; ++n) {
    const auto cand = detail::ngram_counts(candidate, n);
    std::map<std::vector<std::string_view>, std::size_t> max_ref;
    for (const auto& ref : references)
      for (const auto& [gram, count] : detail::ngram_counts(ref, n)) {
        auto& m = max_ref[gram];
        m = std::max(m, count);
      }
    std::size_t matched = 0, total = 0;
    for (const auto& [gram, count] : cand) {
      total += count;
      if (auto it = max_ref.find(gram); it != max_ref.end()) matched += std::min(count, it->second);
    }
    double p;
    if (n == 1) {
      if (matched == 0) return 0.0;
      p = static_cast<double>(matched) / static_cast<double>(total);
    } else {
      p = (static_cast<double>(matched) + 1.0) / (static_cast<double>(total) + 1.0);
    }
    log_sum += std::log(p) / static_cast<double>(kBleuOrder);
  }

  const auto c = static_cast<double>(candidate.size());
  double r = static_cast<double>(references.front().size());
  for (const auto& ref : references) {
    const auto len = static_cast<double>(ref.size());
    if (std::abs(len - c) < std::abs(r - c) || (std::abs(len - c) == std::abs(r - c) && len < r)) r = len;
  }
  const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
  return 100.0 * bp * std::exp(log_sum);
}

inline double bleu_score(const TokenSequence& candidate, std::initializer_list<TokenSequence> references) {
  return bleu_score(candidate, std::span<const TokenSequence>(references.begin(), references.size()));
}

struct ScorePair {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;

  static ScorePair from(double p, double r) {
    return {p, r, p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r)};
  }
};

/// Cosine similarity; zero-norm vectors have similarity 0.
inline double cosine(const EmbeddingVector& a, const EmbeddingVector& b) {
  if (a.values.size() != b.values.size())
    throw DimensionError("vectors have dimensions " + std::to_string(a.values.size()) + " and " +
                         std::to_string(b.values.size()));
  double dot = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) dot += a.values[i] * b.values[i];
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (na * nb);
}

/// Greedy cosine matching over token embeddings, no idf and no baseline rescaling.
inline ScorePair bert_f1(std::span<const EmbeddingVector> candidate, std::span<const EmbeddingVector> reference) {
  if (candidate.empty() || reference.empty()) throw EmptyInputError("BERTScore needs non-empty token lists");
  const auto dim = candidate.front().values.size();
  for (auto list : {candidate, reference})
    for (const auto& v : list)
      if (v.values.size() != dim) throw DimensionError("token embeddings have mixed dimensions");

  std::vector<std::vector<double>> sim(candidate.size(), std::vector<double>(reference.size()));
  for (std::size_t i = 0; i < candidate.size(); ++i)
    for (std::size_t j = 0; j < reference.size(); ++j) sim[i][j] = cosine(candidate[i], reference[j]);

  double p = 0.0;
  for (std::size_t i = 0; i < candidate.size(); ++i) p += *std::max_element(sim[i].begin(), sim[i].end());
  p /= static_cast<double>(candidate.size());

  double r = 0.0;
  for (std::size_t j = 0; j < reference.size(); ++j) {
    double best = sim[0][j];
    for (std::size_t i = 1; i < candidate.size(); ++i) best = std::max(best, sim[i][j]);
    r += best;
  }
  r /= static_cast<double>(reference.size());
  return ScorePair::from(p, r);
}

/// 100 · max(cos, 0).
inline double clip_score(const EmbeddingVector& text_emb, const EmbeddingVector& image_emb) {
  return 100.0 * std::max(cosine(text_emb, image_emb), 0.0);
}

}  // namespace storyweave
