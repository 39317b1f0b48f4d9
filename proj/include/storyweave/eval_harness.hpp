#pragma once

// Batch evaluation of a finished story run: per-scene text, multimodal and
// prosody metrics plus mean ± population std aggregates.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "storyweave/backends.hpp"
#include "storyweave/errors.hpp"
#include "storyweave/eval_audio.hpp"
#include "storyweave/eval_text.hpp"
#include "storyweave/log.hpp"
#include "storyweave/pipeline.hpp"

namespace storyweave {

namespace metric {
inline constexpr const char* kBleu = "bleu";
inline constexpr const char* kBertPrecision = "bert_precision";
inline constexpr const char* kBertRecall = "bert_recall";
inline constexpr const char* kBertF1 = "bert_f1";
inline constexpr const char* kClipScore = "clip_score";
inline constexpr const char* kDtw = "dtw";
inline constexpr const char* kPitchStd = "pitch_std_hz";
inline constexpr const char* kPauseRatio = "pause_ratio";
inline constexpr const char* kSilentFraction = "silent_fraction";
inline constexpr const char* kVoicedPhonemes = "voiced_phonemes";
inline constexpr const char* kUniqueWords = "unique_words";
inline constexpr const char* kDuration = "duration_s";
}  // namespace metric

struct SceneMetrics {
  std::size_t scene_index = 0;
  std::map<std::string, double> values;
  /// Metric name -> reason it was not computed.
  std::map<std::string, std::string> skipped;
  std::vector<std::string> errors;

  bool failed() const { return !errors.empty() && values.empty(); }
};

struct MetricSummary {
  double mean = 0.0;
  double std = 0.0;
  std::size_t count = 0;
};

/// Mean and population standard deviation.
inline MetricSummary summarize(const std::vector<double>& xs) {
  MetricSummary s;
  s.count = xs.size();
  if (xs.empty()) return s;
  for (double x : xs) s.mean += x;
  s.mean /= static_cast<double>(xs.size());
  for (double x : xs) s.std += (x - s.mean) * (x - s.mean);
  s.std = std::sqrt(s.std / static_cast<double>(xs.size()));
  return s;
}

struct MetricsReport {
  std::string title;
  nlohmann::json config = nlohmann::json::object();
  std::string timestamp;
  std::vector<SceneMetrics> per_scene;
  std::map<std::string, MetricSummary> aggregate;

  /// Recomputes aggregates from per_scene.
  void recompute_aggregate() {
    std::map<std::string, std::vector<double>> by_metric;
    for (const auto& s : per_scene)
      for (const auto& [k, v] : s.values) by_metric[k].push_back(v);
    aggregate.clear();
    for (const auto& [k, xs] : by_metric) aggregate[k] = summarize(xs);
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["metadata"] = {{"title", title}, {"config", config}, {"timestamp", timestamp}};
    j["per_scene"] = nlohmann::json::array();
    for (const auto& s : per_scene) {
      nlohmann::json e = {{"scene_index", s.scene_index}};
      for (const auto& [k, v] : s.values) e[k] = v;
      if (!s.skipped.empty()) e["skipped"] = s.skipped;
      if (!s.errors.empty()) e["errors"] = s.errors;
      j["per_scene"].push_back(std::move(e));
    }
    j["aggregate"] = nlohmann::json::object();
    for (const auto& [k, a] : aggregate) j["aggregate"][k] = {{"mean", a.mean}, {"std", a.std}, {"n", a.count}};
    return j;
  }
};

/// Reference audio per speaker: a contour (used as is) or a clip (F0 is estimated).
using ReferenceAudio = std::variant<PitchContour, AudioClip>;

struct EvaluationReferences {
  /// Scene index -> reference texts. Scenes without an entry use {full_prompt, caption}.
  std::map<std::size_t, std::vector<TokenSequence>> texts;
  std::map<std::string, ReferenceAudio> audio;
  /// Compare each scene's dialogue with itself (sanity mode).
  bool self_reference = false;
};

struct EvaluateOptions {
  std::string title;
  nlohmann::json config = nlohmann::json::object();
  /// Fixed timestamp for reproducible reports; the current UTC time when empty.
  std::string timestamp;
};

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

namespace detail {

class TokenEmbeddingCache {
 public:
  explicit TokenEmbeddingCache(const Embedder& e) : embedder_(e) {}

  std::vector<EmbeddingVector> embed(const TokenSequence& seq) {
    std::vector<EmbeddingVector> out;
    out.reserve(seq.size());
    for (const auto& t : seq.tokens) {
      auto it = cache_.find(t);
      if (it == cache_.end()) it = cache_.emplace(t, embedder_.embed(t, EmbedKind::Text)).first;
      out.push_back(it->second);
    }
    return out;
  }

 private:
  const Embedder& embedder_;
  std::map<std::string, EmbeddingVector> cache_;
};

}  // namespace detail

/// Per scene: BLEU and BERTScore of the dialogue against the scene's
/// references (best over references for BERTScore), CLIPScore against the
/// keyframe, DTW of the scene audio's F0 against the speaker's reference
/// contour, and the voice statistics of the scene audio. Metrics without
/// inputs are listed under `skipped` with a reason, never defaulted.
inline MetricsReport evaluate_story(const StoryRunResult& result, const EvaluationReferences& refs,
                                    const Embedder* embedder, const EvaluateOptions& options = {}) {
  MetricsReport report;
  report.title = options.title;
  report.config = options.config;
  report.timestamp = options.timestamp.empty() ? utc_timestamp() : options.timestamp;

  std::optional<detail::TokenEmbeddingCache> tokens;
  if (embedder) tokens.emplace(*embedder);
  RuleBasedPhonemizer g2p;

  std::map<std::string, PitchContour> speaker_contours;
  std::map<std::string, std::string> speaker_contour_errors;
  for (const auto& [speaker, audio] : refs.audio) {
    try {
      auto contour = std::holds_alternative<PitchContour>(audio) ? std::get<PitchContour>(audio)
                                                                 : estimate_f0(std::get<AudioClip>(audio));
      if (contour.voiced().empty()) throw NoVoicedFramesError();
      speaker_contours[speaker] = std::move(contour);
    } catch (const Error& e) {
      speaker_contour_errors[speaker] = e.what();
    }
  }

  for (const auto& art : result.artifacts) {
    SceneMetrics m;
    m.scene_index = art.scene_index;

    const auto candidate = tokenize_words(art.dialogue);
    std::vector<TokenSequence> text_refs;
    if (refs.self_reference) {
      text_refs = {candidate};
    } else if (auto it = refs.texts.find(art.scene_index); it != refs.texts.end()) {
      text_refs = it->second;
    } else {
      text_refs = {tokenize_words(art.full_prompt), tokenize_words(art.caption)};
    }

    if (text_refs.empty()) {
      m.skipped[metric::kBleu] = "no reference texts";
    } else {
      m.values[metric::kBleu] = bleu_score(candidate, text_refs);
    }

    if (!tokens) {
      for (auto k : {metric::kBertPrecision, metric::kBertRecall, metric::kBertF1, metric::kClipScore})
        m.skipped[k] = "no embedding backend";
    } else {
      try {
        std::optional<ScorePair> best;
        if (!candidate.empty()) {
          const auto cand_embs = tokens->embed(candidate);
          for (const auto& ref : text_refs) {
            if (ref.empty()) continue;
            const auto score = bert_f1(cand_embs, tokens->embed(ref));
            if (!best || score.f1 > best->f1) best = score;
          }
        }
        if (best) {
          m.values[metric::kBertPrecision] = best->precision;
          m.values[metric::kBertRecall] = best->recall;
          m.values[metric::kBertF1] = best->f1;
        } else {
          for (auto k : {metric::kBertPrecision, metric::kBertRecall, metric::kBertF1})
            m.skipped[k] = "dialogue or references have no word tokens";
        }
      } catch (const Error& e) {
        m.errors.push_back(std::string("bertscore: ") + e.what());
      }

      if (!art.keyframe) {
        m.skipped[metric::kClipScore] = "no keyframe recorded";
      } else {
        try {
          const auto image = ImageRef::file(result.output_dir / *art.keyframe);
          m.values[metric::kClipScore] =
              clip_score(embedder->embed(art.dialogue, EmbedKind::Text), embedder->embed(image, EmbedKind::Image));
        } catch (const Error& e) {
          m.errors.push_back(std::string("clip_score: ") + e.what());
        }
      }
    }

    if (!art.audio) {
      m.skipped[metric::kDtw] = "no scene audio";
    } else {
      try {
        const auto clip = read_wav_file(result.output_dir / *art.audio);
        const auto stats = voice_stats_report(clip, art.dialogue, g2p);
        m.values[metric::kUniqueWords] = static_cast<double>(stats.unique_words);
        m.values[metric::kVoicedPhonemes] = static_cast<double>(stats.voiced_phonemes);
        m.values[metric::kPauseRatio] = stats.pause_ratio;
        m.values[metric::kSilentFraction] = stats.silent_fraction;
        m.values[metric::kDuration] = stats.duration_s;
        if (stats.pitch_std_hz) {
          m.values[metric::kPitchStd] = *stats.pitch_std_hz;
        } else {
          m.skipped[metric::kPitchStd] = stats.pitch_error;
        }

        if (auto c = speaker_contours.find(art.speaker); c != speaker_contours.end()) {
          try {
            m.values[metric::kDtw] = dtw_distance(estimate_f0(clip, c->second.frame_hop_s), c->second);
          } catch (const NoVoicedFramesError& e) {
            m.skipped[metric::kDtw] = e.what();
          }
        } else if (auto err = speaker_contour_errors.find(art.speaker); err != speaker_contour_errors.end()) {
          m.skipped[metric::kDtw] = "reference audio unusable: " + err->second;
        } else {
          m.skipped[metric::kDtw] = "no reference audio for " + art.speaker;
        }
      } catch (const Error& e) {
        m.errors.push_back(std::string("audio: ") + e.what());
      }
    }

    for (const auto& e : m.errors) log::warn("scene_metric_error", {{"scene_index", m.scene_index}, {"error", e}});
    report.per_scene.push_back(std::move(m));
  }

  if (report.per_scene.empty()) throw EvaluationFailed("story run has no scenes to evaluate");
  if (std::all_of(report.per_scene.begin(), report.per_scene.end(), [](const SceneMetrics& s) { return s.failed(); }))
    throw EvaluationFailed("every scene failed to evaluate");

  report.recompute_aggregate();
  return report;
}

/// Two-level aggregation: each story's scene means, then mean ± std across stories.
inline nlohmann::json aggregate_over_stories(const std::vector<MetricsReport>& reports) {
  std::map<std::string, std::vector<double>> story_means;
  nlohmann::json per_story = nlohmann::json::array();
  for (const auto& r : reports) {
    nlohmann::json s = {{"title", r.title}};
    for (const auto& [k, a] : r.aggregate) {
      story_means[k].push_back(a.mean);
      s[k] = {{"mean", a.mean}, {"std", a.std}, {"n", a.count}};
    }
    per_story.push_back(std::move(s));
  }
  nlohmann::json overall = nlohmann::json::object();
  for (const auto& [k, xs] : story_means) {
    const auto a = summarize(xs);
    overall[k] = {{"mean", a.mean}, {"std", a.std}, {"n", a.count}};
  }
  return {{"per_story", std::move(per_story)}, {"across_stories", std::move(overall)}};
}

/// Reference file: {"texts": {"<scene_index>": ["text", ...]},
///                  "audio": {"<speaker>": "clip.wav" | "contour.jsonl"},
///                  "frame_hop_s": 0.01}
/// Relative paths resolve against the file's directory.
inline EvaluationReferences load_references(const std::filesystem::path& path) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_file_text(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string(e.what()) + " in " + path.string(), 1, e.byte);
  }
  EvaluationReferences refs;
  const auto base = path.parent_path();
  const double hop = doc.value("frame_hop_s", 0.01);
  if (auto it = doc.find("texts"); it != doc.end()) {
    for (auto& [key, list] : it->items()) {
      std::size_t idx = 0;
      try {
        idx = std::stoul(key);
      } catch (const std::exception&) {
        throw SchemaError("texts." + key);
      }
      for (const auto& t : list) refs.texts[idx].push_back(tokenize_words(t.get<std::string>()));
    }
  }
  if (auto it = doc.find("audio"); it != doc.end()) {
    for (auto& [speaker, p] : it->items()) {
      std::filesystem::path file = p.get<std::string>();
      if (file.is_relative()) file = base / file;
      if (file.extension() == ".wav") {
        refs.audio[speaker] = read_wav_file(file);
      } else {
        refs.audio[speaker] = parse_contour(read_file_text(file), hop);
      }
    }
  }
  return refs;
}

}  // namespace storyweave
