#pragma once

// Prosody and voice statistics: autocorrelation F0 tracking, DTW between pitch
// contours, silence profiling, voiced-phoneme counting and the per-voice report.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "storyweave/errors.hpp"
#include "storyweave/eval_text.hpp"
#include "storyweave/files.hpp"
#include "storyweave/log.hpp"
#include "storyweave/media.hpp"

namespace storyweave {

/// F0 per analysis frame in Hz; 0 marks an unvoiced frame.
struct PitchContour {
  std::vector<double> f0_hz;
  double frame_hop_s = 0.01;

  std::vector<double> voiced() const {
    std::vector<double> out;
    std::copy_if(f0_hz.begin(), f0_hz.end(), std::back_inserter(out), [](double f) { return f > 0.0; });
    return out;
  }
};

struct F0Options {
  double frame_hop_s = 0.01;
  double window_s = 0.040;
  double min_hz = 50.0;
  double max_hz = 600.0;
  double clarity_threshold = 0.3;
};

namespace detail {

inline double normalized_autocorrelation(std::span<const double> x, std::size_t lag) {
  double num = 0.0, e0 = 0.0, e1 = 0.0;
  for (std::size_t i = 0; i + lag < x.size(); ++i) {
    num += x[i] * x[i + lag];
    e0 += x[i] * x[i];
    e1 += x[i + lag] * x[i + lag];
  }
  const double den = std::sqrt(e0 * e1);
  return den > 0.0 ? num / den : 0.0;
}

}  // namespace detail

/// Normalized-autocorrelation pitch tracker. Frames whose best in-band
/// autocorrelation peak stays below the clarity threshold are unvoiced.
inline PitchContour estimate_f0(const AudioClip& clip, const F0Options& opt = {}) {
  if (clip.empty()) throw TooShortError("clip is empty");
  if (clip.sample_rate_hz < 8000) throw ValidationError("F0 estimation needs a sample rate of at least 8000 Hz");

  const double rate = clip.sample_rate_hz;
  const auto window = static_cast<std::size_t>(std::lround(opt.window_s * rate));
  const auto hop = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(opt.frame_hop_s * rate)));
  if (clip.samples.size() < window)
    throw TooShortError("clip has " + std::to_string(clip.samples.size()) + " samples, one analysis window needs " +
                        std::to_string(window));

  const auto min_lag = std::max<std::size_t>(2, static_cast<std::size_t>(std::floor(rate / opt.max_hz)));
  const auto max_lag = std::min(window - 2, static_cast<std::size_t>(std::ceil(rate / opt.min_hz)));

  PitchContour contour;
  contour.frame_hop_s = opt.frame_hop_s;
  std::vector<double> frame(window);
  std::vector<double> r(max_lag + 2);

  for (std::size_t start = 0; start + window <= clip.samples.size(); start += hop) {
    double mean = 0.0;
    for (std::size_t i = 0; i < window; ++i) mean += clip.samples[start + i];
    mean /= static_cast<double>(window);
    double energy = 0.0;
    for (std::size_t i = 0; i < window; ++i) {
      frame[i] = clip.samples[start + i] - mean;
      energy += frame[i] * frame[i];
    }
    if (energy / static_cast<double>(window) < 1e-10) {
      contour.f0_hz.push_back(0.0);
      continue;
    }

    for (std::size_t lag = min_lag - 1; lag <= max_lag + 1; ++lag)
      r[lag] = detail::normalized_autocorrelation(frame, lag);

    // Local maxima in band; the smallest lag within 90% of the best wins,
    // which keeps sub-harmonic lags from beating the true period.
    double best = -1.0;
    for (std::size_t lag = min_lag; lag <= max_lag; ++lag)
      if (r[lag] >= r[lag - 1] && r[lag] >= r[lag + 1]) best = std::max(best, r[lag]);
    if (best < opt.clarity_threshold) {
      contour.f0_hz.push_back(0.0);
      continue;
    }
    std::size_t chosen = 0;
    for (std::size_t lag = min_lag; lag <= max_lag; ++lag)
      if (r[lag] >= r[lag - 1] && r[lag] >= r[lag + 1] && r[lag] >= 0.9 * best) {
        chosen = lag;
        break;
      }

    // Parabolic refinement of the peak position.
    const double a = r[chosen - 1], b = r[chosen], c = r[chosen + 1];
    const double denom = a - 2.0 * b + c;
    const double shift = denom != 0.0 ? std::clamp(0.5 * (a - c) / denom, -0.5, 0.5) : 0.0;
    const double f0 = rate / (static_cast<double>(chosen) + shift);
    contour.f0_hz.push_back(f0 >= opt.min_hz && f0 <= opt.max_hz ? f0 : 0.0);
  }
  return contour;
}

inline PitchContour estimate_f0(const AudioClip& clip, double frame_hop_s) {
  F0Options opt;
  opt.frame_hop_s = frame_hop_s;
  return estimate_f0(clip, opt);
}

/// Population standard deviation over voiced frames.
inline double pitch_std_hz(const PitchContour& contour) {
  const auto v = contour.voiced();
  if (v.empty()) throw NoVoicedFramesError();
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double f : v) ss += (f - mean) * (f - mean);
  return std::sqrt(ss / static_cast<double>(v.size()));
}

inline double mean_f0_hz(const PitchContour& contour) {
  const auto v = contour.voiced();
  if (v.empty()) throw NoVoicedFramesError();
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

struct DtwResult {
  double cost = 0.0;
  std::size_t path_length = 0;

  double normalized() const { return cost / static_cast<double>(path_length); }
};

/// Classical DTW with |a_i - b_j| local cost and steps (1,0), (0,1), (1,1).
/// Among minimum-cost paths, the shortest one defines path_length.
inline DtwResult dtw_align(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw EmptyInputError("DTW needs non-empty sequences");
  const std::size_t m = a.size(), n = b.size();
  struct Cell {
    double cost;
    std::size_t len;
  };
  auto better = [](const Cell& x, const Cell& y) { return x.cost < y.cost || (x.cost == y.cost && x.len < y.len); };
  std::vector<Cell> prev(n), cur(n);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double local = std::abs(a[i] - b[j]);
      if (i == 0 && j == 0) {
        cur[j] = {local, 1};
        continue;
      }
      Cell best{std::numeric_limits<double>::infinity(), 0};
      if (i > 0 && better(prev[j], best)) best = prev[j];
      if (j > 0 && better(cur[j - 1], best)) best = cur[j - 1];
      if (i > 0 && j > 0 && better(prev[j - 1], best)) best = prev[j - 1];
      cur[j] = {best.cost + local, best.len + 1};
    }
    std::swap(prev, cur);
  }
  return {prev[n - 1].cost, prev[n - 1].len};
}

/// Unvoiced frames are dropped first. Raw cost and path length stay available
/// through dtw_align on the voiced sequences.
inline DtwResult dtw_contours(const PitchContour& a, const PitchContour& b) {
  if (std::abs(a.frame_hop_s - b.frame_hop_s) > 1e-12)
    throw ValidationError("contours must share a frame hop; re-estimate one of them");
  const auto va = a.voiced(), vb = b.voiced();
  if (va.empty() || vb.empty()) throw NoVoicedFramesError();
  return dtw_align(va, vb);
}

/// Path-length-normalized DTW distance between voiced F0 sequences.
inline double dtw_distance(const PitchContour& a, const PitchContour& b) { return dtw_contours(a, b).normalized(); }

/// Contour file: one JSON object per line, {"frame_index": i, "f0_hz": f}.
/// Missing frame indices are unvoiced.
inline PitchContour parse_contour(std::string_view text, double frame_hop_s = 0.01) {
  PitchContour contour;
  contour.frame_hop_s = frame_hop_s;
  std::size_t pos = 0, line_no = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    const auto line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    try {
      const auto rec = nlohmann::json::parse(line);
      const auto idx = rec.at("frame_index").get<std::size_t>();
      const auto f0 = rec.at("f0_hz").get<double>();
      if (f0 < 0.0 || !std::isfinite(f0)) throw ValidationError("f0_hz must be nonnegative");
      if (contour.f0_hz.size() <= idx) contour.f0_hz.resize(idx + 1, 0.0);
      contour.f0_hz[idx] = f0;
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(e.what(), line_no, 1);
    }
  }
  return contour;
}

inline std::string serialize_contour(const PitchContour& contour) {
  std::string out;
  for (std::size_t i = 0; i < contour.f0_hz.size(); ++i) {
    out += nlohmann::json{{"frame_index", i}, {"f0_hz", contour.f0_hz[i]}}.dump();
    out += '\n';
  }
  return out;
}

struct SilenceProfile {
  std::size_t frame_length = 2048;
  double threshold = 0.01;
  std::vector<bool> silent_mask;
  double silent_fraction = 0.0;

  double active_fraction() const { return 1.0 - silent_fraction; }
};

inline constexpr std::size_t kSilenceFrameLength = 2048;
inline constexpr double kSilenceThreshold = 0.01;

/// Non-overlapping frames, trailing partial frame dropped; silent iff RMS < threshold.
inline SilenceProfile silence_profile(const AudioClip& clip, std::size_t frame_length = kSilenceFrameLength,
                                      double threshold = kSilenceThreshold) {
  if (frame_length == 0) throw ValidationError("frame_length must be positive");
  if (clip.samples.size() < frame_length)
    throw TooShortError("clip has " + std::to_string(clip.samples.size()) + " samples, shorter than one " +
                        std::to_string(frame_length) + "-sample frame");
  SilenceProfile p;
  p.frame_length = frame_length;
  p.threshold = threshold;
  const std::size_t frames = clip.samples.size() / frame_length;
  std::size_t silent = 0;
  for (std::size_t f = 0; f < frames; ++f) {
    double ss = 0.0;
    for (std::size_t i = 0; i < frame_length; ++i) {
      const double x = clip.samples[f * frame_length + i];
      ss += x * x;
    }
    const bool s = std::sqrt(ss / static_cast<double>(frame_length)) < threshold;
    p.silent_mask.push_back(s);
    silent += s;
  }
  p.silent_fraction = static_cast<double>(silent) / static_cast<double>(frames);
  return p;
}

// ---------------------------------------------------------------------------
// Phonemes

/// Grapheme-to-phoneme conversion. Output symbols are IPA-like.
class Phonemizer {
 public:
  virtual ~Phonemizer() = default;
  virtual std::vector<std::string> phonemize(std::string_view transcript) const = 0;
};

/// Letter-rule English approximation. Handles common digraphs, collapses
/// doubled letters and drops a word-final silent 'e'.
class RuleBasedPhonemizer final : public Phonemizer {
 public:
  std::vector<std::string> phonemize(std::string_view transcript) const override {
    std::vector<std::string> out;
    std::size_t skipped = 0;
    std::string word;
    auto flush = [&] {
      if (!word.empty()) word_phonemes(word, out);
      word.clear();
    };
    for (char ch : transcript) {
      const auto c = static_cast<unsigned char>(ch);
      if (std::isalpha(c)) {
        word.push_back(static_cast<char>(std::tolower(c)));
      } else if (ch == '\'' && !word.empty()) {
        // contractions stay inside the word
      } else {
        flush();
        if (std::isdigit(c) || c >= 0x80) ++skipped;
      }
    }
    flush();
    if (skipped > 0) log::warn("g2p_skipped", {{"characters", skipped}});
    return out;
  }

 private:
  static void word_phonemes(const std::string& w, std::vector<std::string>& out) {
    std::size_t end = w.size();
    if (end > 2 && w[end - 1] == 'e' && !is_vowel_letter(w[end - 2])) --end;
    for (std::size_t i = 0; i < end;) {
      const char c = w[i];
      const char next = i + 1 < end ? w[i + 1] : '\0';
      auto two = [&](const char* digraph, const char* phone) {
        if (c == digraph[0] && next == digraph[1]) {
          out.emplace_back(phone);
          i += 2;
          return true;
        }
        return false;
      };
      if (two("th", "ð") || two("sh", "ʃ") || two("ch", "tʃ") || two("ng", "ŋ") || two("ph", "f") ||
          two("ck", "k") || two("wh", "w") || two("qu", "k"))
        continue;
      if (c == next) {
        ++i;
        continue;
      }
      switch (c) {
        case 'a': out.emplace_back("a"); break;
        case 'e': out.emplace_back("ɛ"); break;
        case 'i': out.emplace_back("ɪ"); break;
        case 'o': out.emplace_back("o"); break;
        case 'u': out.emplace_back("ʌ"); break;
        case 'y': out.emplace_back(i == 0 ? "j" : "i"); break;
        case 'c': out.emplace_back(next == 'e' || next == 'i' || next == 'y' ? "s" : "k"); break;
        case 'g': out.emplace_back("g"); break;
        case 'j': out.emplace_back("dʒ"); break;
        case 'x': out.emplace_back("k"); out.emplace_back("s"); break;
        case 'q': out.emplace_back("k"); break;
        case 'r': out.emplace_back("r"); break;
        default: out.emplace_back(1, c); break;
      }
      ++i;
    }
  }

  static bool is_vowel_letter(char c) { return c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u'; }
};

/// Phonemes supplied externally (for example espeak output), whitespace-separated.
class PhonemeListPhonemizer final : public Phonemizer {
 public:
  explicit PhonemeListPhonemizer(std::string_view symbols) {
    std::size_t i = 0;
    while (i < symbols.size()) {
      while (i < symbols.size() && std::isspace(static_cast<unsigned char>(symbols[i]))) ++i;
      std::size_t j = i;
      while (j < symbols.size() && !std::isspace(static_cast<unsigned char>(symbols[j]))) ++j;
      if (j > i) symbols_.emplace_back(symbols.substr(i, j - i));
      i = j;
    }
  }

  static PhonemeListPhonemizer from_file(const std::filesystem::path& path) {
    return PhonemeListPhonemizer(read_file_text(path));
  }

  std::vector<std::string> phonemize(std::string_view) const override { return symbols_; }

 private:
  std::vector<std::string> symbols_;
};

namespace detail {

// Stress and length marks carry no voicing information.
inline std::string strip_suprasegmentals(std::string_view s) {
  std::string out;
  for (std::size_t i = 0; i < s.size();) {
    const auto start = i;
    const char32_t cp = next_code_point(s, i);
    if (cp == U'ˈ' || cp == U'ˌ' || cp == U'ː' || cp == U'ˑ' || cp == U'̩' || cp == U'̃') continue;
    out.append(s.substr(start, i - start));
  }
  return out;
}

inline bool is_vowel_symbol(char32_t c) {
  static constexpr std::u32string_view kVowels = U"aeiouyæøœɐɑɒɔəɘɚɛɜɝɞɤɨɪɯɵɶʉʊʌʏɪ";
  return kVowels.find(c) != std::u32string_view::npos;
}

}  // namespace detail

/// Vowels (including diphthongs) plus b d g v ð z ʒ dʒ m n ŋ l r w j, with
/// common IPA variants (ɡ, ɹ, ɾ, ɫ, ɚ-colored forms) folded in.
inline bool is_voiced_phoneme(std::string_view symbol) {
  const auto s = detail::strip_suprasegmentals(symbol);
  if (s.empty()) return false;
  static const std::set<std::string, std::less<>> kVoicedConsonants = {
      "b", "d", "g", "ɡ", "v", "ð", "z", "ʒ", "dʒ", "d͡ʒ", "m", "n", "ŋ", "l", "ɫ", "r", "ɹ", "ɾ", "w", "j"};
  if (kVoicedConsonants.contains(s)) return true;
  std::size_t i = 0;
  return detail::is_vowel_symbol(detail::next_code_point(s, i));
}

inline std::size_t voiced_phoneme_count(std::string_view transcript, const Phonemizer& g2p) {
  std::size_t n = 0;
  for (const auto& p : g2p.phonemize(transcript)) n += is_voiced_phoneme(p);
  return n;
}

// ---------------------------------------------------------------------------
// Report

struct VoiceStats {
  std::size_t unique_words = 0;
  std::size_t voiced_phonemes = 0;
  /// Absent when the clip has no voiced frames; pitch_error says why.
  std::optional<double> pitch_std_hz;
  std::string pitch_error;
  /// Share of non-silent frames (1 - silent_fraction); near 1 means continuous voicing.
  double pause_ratio = 0.0;
  double silent_fraction = 0.0;
  double duration_s = 0.0;

  nlohmann::json to_json() const {
    nlohmann::json j = {{"unique_words", unique_words},   {"voiced_phonemes", voiced_phonemes},
                        {"pause_ratio", pause_ratio},     {"silent_fraction", silent_fraction},
                        {"duration_s", duration_s},       {"method_dependent", true}};
    if (pitch_std_hz) {
      j["pitch_std_hz"] = *pitch_std_hz;
    } else {
      j["pitch_std_hz"] = nullptr;
      j["pitch_error"] = pitch_error;
    }
    return j;
  }
};

inline VoiceStats voice_stats_report(const AudioClip& clip, std::string_view transcript, const Phonemizer& g2p) {
  if (clip.empty()) throw EmptyInputError("clip is empty");
  if (transcript.empty()) throw EmptyInputError("transcript is empty");
  VoiceStats s;
  s.unique_words = tokenize_words(transcript).unique_count();
  s.voiced_phonemes = voiced_phoneme_count(transcript, g2p);
  try {
    s.pitch_std_hz = pitch_std_hz(estimate_f0(clip));
  } catch (const NoVoicedFramesError& e) {
    s.pitch_error = e.what();
  }
  const auto silence = silence_profile(clip);
  s.silent_fraction = silence.silent_fraction;
  s.pause_ratio = silence.active_fraction();
  s.duration_s = clip.duration_s();
  return s;
}

}  // namespace storyweave
