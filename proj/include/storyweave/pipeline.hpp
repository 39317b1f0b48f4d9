#pragma once

// Scene-by-scene orchestration: keyframe -> caption -> narrative prompt ->
// dialogue -> bank update -> speech, with per-scene persistence.

#include <cctype>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "storyweave/backends.hpp"
#include "storyweave/errors.hpp"
#include "storyweave/files.hpp"
#include "storyweave/log.hpp"
#include "storyweave/media.hpp"
#include "storyweave/narrative_bank.hpp"
#include "storyweave/story.hpp"

namespace storyweave {

inline constexpr std::string_view kTranscriptFile = "transcript.jsonl";
inline constexpr std::string_view kBankDumpFile = "bank.jsonl";
inline constexpr std::string_view kRunInfoFile = "run.json";
inline constexpr std::string_view kDefaultCaptionPlaceholder = "no image conditioning";

struct RunConfig {
  std::size_t keyframe_count_k = 5;
  EntryLimit rnb_capacity = EntryLimit::all();
  std::size_t speech_context_turns = kDefaultSpeechContextTurns;
  std::filesystem::path output_dir;
  std::uint64_t random_seed = 0;
  /// When false the captioner is not called and the caption is the placeholder.
  bool image_conditioning = true;
  std::string caption_placeholder = std::string(kDefaultCaptionPlaceholder);
  /// Relative voice_reference paths resolve against this directory.
  std::filesystem::path reference_base_dir;
  /// Continue after the last scene already in output_dir instead of starting over.
  bool resume = false;

  void validate() const {
    if (keyframe_count_k < 1) throw ValidationError("keyframe_count_k must be at least 1");
    if (caption_placeholder.empty()) throw ValidationError("caption_placeholder must be non-empty");
  }

  nlohmann::ordered_json to_json() const {
    return {{"keyframe_count_k", keyframe_count_k},
            {"rnb_capacity", rnb_capacity.to_string()},
            {"speech_context_turns", speech_context_turns},
            {"random_seed", random_seed},
            {"image_conditioning", image_conditioning},
            {"caption_placeholder", caption_placeholder}};
  }
};

/// Reference (audio, transcript) pairs per character, loaded once per run.
class VoiceLibrary {
 public:
  VoiceLibrary() = default;

  static VoiceLibrary load(const StorySpec& spec, const std::filesystem::path& base_dir) {
    VoiceLibrary lib;
    for (const auto& c : spec.characters) {
      if (!c.voice_reference) continue;
      const auto path = c.voice_reference->is_absolute() ? *c.voice_reference : base_dir / *c.voice_reference;
      lib.clips_[c.name].push_back({read_wav_file(path), c.voice_transcript});
    }
    return lib;
  }

  void add(const std::string& speaker, ReferenceClip clip) { clips_[speaker].push_back(std::move(clip)); }

  std::vector<ReferenceClip> for_speaker(const std::string& speaker) const {
    auto it = clips_.find(speaker);
    return it == clips_.end() ? std::vector<ReferenceClip>{} : it->second;
  }

 private:
  std::map<std::string, std::vector<ReferenceClip>> clips_;
};

struct SceneStepResult {
  SceneArtifact artifact;
  NarrativeBank bank;
  AudioClip audio;
  ImageRef keyframe;
};

/// Optional per-step inputs.
struct SceneStepInputs {
  const FrameSequence* video = nullptr;
  /// Prior turns with audio, oldest first. When empty, text-only turns are taken from the bank.
  std::span<const ContextTurn> prior_turns;
  const VoiceLibrary* voices = nullptr;
};

/// Stand-in keyframe for scenes without a video.
inline ImageRef placeholder_keyframe(const ScenePromptPair& scene) {
  const std::string tag = "placeholder-keyframe:" + scene.scene_id;
  return ImageRef::memory(Bytes(tag.begin(), tag.end()));
}

inline SceneStepResult run_scene_step(const StorySpec& spec, std::size_t scene_index, const NarrativeBank& bank,
                                      const Backends& backends, const RunConfig& config,
                                      const SceneStepInputs& inputs = {}) {
  config.validate();
  if (scene_index >= spec.scenes.size())
    throw RangeError("scene index " + std::to_string(scene_index) + " out of range");
  const auto expected_last = scene_index == 0 ? std::nullopt : std::optional<std::size_t>(scene_index - 1);
  if (bank.last_scene_index() != expected_last)
    throw OrderingError("narrative bank does not end at scene " +
                        (expected_last ? std::to_string(*expected_last) : std::string("<none>")));

  const auto& scene = spec.scenes[scene_index];
  try {
    SceneStepResult out{SceneArtifact{}, bank, AudioClip{}, ImageRef{}};
    auto& art = out.artifact;
    art.scene_index = scene_index;
    art.scene_id = scene.scene_id;
    art.speaker = resolve_speaker(spec, scene_index);
    art.full_prompt = compose_scene_prompt(scene.setting, scene.action);

    if (inputs.video) {
      const auto frames = sample_keyframes(*inputs.video, config.keyframe_count_k);
      out.keyframe = frames[representative_index(frames.size())];
    } else {
      out.keyframe = placeholder_keyframe(scene);
    }

    art.caption = config.image_conditioning ? backends.captioner->caption(out.keyframe) : config.caption_placeholder;
    if (art.caption.empty()) throw BackendError(200, "caption is empty");

    const auto history = history_window(bank, config.rnb_capacity);
    art.assembled_prompt = assemble_narrative_prompt(art.full_prompt, art.caption, history).render();
    art.dialogue = backends.dialogue->generate(art.assembled_prompt, art.speaker);
    if (art.dialogue.empty()) throw EmptyCompletionError();

    out.bank.append({scene_index, art.speaker, art.dialogue, art.caption});

    SpeechRequest req;
    req.text = art.dialogue;
    req.speaker = art.speaker;
    req.max_context_turns = config.speech_context_turns;
    if (!inputs.prior_turns.empty()) {
      req.context_turns.assign(inputs.prior_turns.begin(), inputs.prior_turns.end());
    } else {
      for (const auto& e : bank.entries()) req.context_turns.push_back({e.speaker, e.text, std::nullopt});
    }
    req.trim_context();
    if (inputs.voices) req.reference_clips = inputs.voices->for_speaker(art.speaker);
    out.audio = backends.speech->render(req);
    return out;
  } catch (const SceneStepError&) {
    throw;
  } catch (const Error& e) {
    throw SceneStepError(scene_index, e.what());
  }
}

struct StoryRunResult {
  std::filesystem::path output_dir;
  std::vector<SceneArtifact> artifacts;
  std::filesystem::path transcript_path;
  std::filesystem::path bank_dump_path;
};

inline std::string safe_file_component(std::string_view s) {
  std::string out;
  for (char c : s) {
    const auto u = static_cast<unsigned char>(c);
    out.push_back(std::isalnum(u) || c == '-' || c == '_' ? c : '_');
  }
  return out.empty() ? std::string("_") : out;
}

/// audio/scene_007_Donkey.wav
inline std::filesystem::path scene_audio_path(std::size_t scene_index, std::string_view speaker) {
  char idx[16];
  std::snprintf(idx, sizeof idx, "%03zu", scene_index);
  return std::filesystem::path("audio") / ("scene_" + std::string(idx) + "_" + safe_file_component(speaker) + ".wav");
}

inline std::filesystem::path scene_keyframe_path(std::size_t scene_index, const ImageRef& keyframe) {
  char idx[16];
  std::snprintf(idx, sizeof idx, "%03zu", scene_index);
  auto ext = keyframe.path.extension().string();
  if (ext.empty()) ext = ".bin";
  return std::filesystem::path("keyframes") / ("scene_" + std::string(idx) + ext);
}

inline nlohmann::ordered_json transcript_record(const SceneArtifact& a) {
  nlohmann::ordered_json j = {{"scene_index", a.scene_index},
                              {"scene_id", a.scene_id},
                              {"speaker", a.speaker},
                              {"full_prompt", a.full_prompt},
                              {"caption", a.caption},
                              {"assembled_prompt", a.assembled_prompt},
                              {"dialogue", a.dialogue},
                              {"audio_path", a.audio ? a.audio->generic_string() : std::string()}};
  if (a.keyframe) j["keyframe_path"] = a.keyframe->generic_string();
  return j;
}

inline SceneArtifact artifact_from_record(const nlohmann::json& j) {
  SceneArtifact a;
  a.scene_index = j.at("scene_index").get<std::size_t>();
  a.scene_id = j.at("scene_id").get<std::string>();
  a.speaker = j.at("speaker").get<std::string>();
  a.full_prompt = j.at("full_prompt").get<std::string>();
  a.caption = j.at("caption").get<std::string>();
  a.assembled_prompt = j.at("assembled_prompt").get<std::string>();
  a.dialogue = j.at("dialogue").get<std::string>();
  if (auto p = j.value("audio_path", std::string()); !p.empty()) a.audio = p;
  if (auto p = j.value("keyframe_path", std::string()); !p.empty()) a.keyframe = p;
  return a;
}

inline std::vector<SceneArtifact> parse_transcript(std::string_view text) {
  std::vector<SceneArtifact> out;
  std::size_t pos = 0, line_no = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    const auto line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    try {
      out.push_back(artifact_from_record(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(e.what(), line_no, 1);
    }
  }
  return out;
}

/// Reads a finished (or partial) run directory back.
inline StoryRunResult load_story_run(const std::filesystem::path& output_dir) {
  StoryRunResult r;
  r.output_dir = output_dir;
  r.transcript_path = output_dir / kTranscriptFile;
  r.bank_dump_path = output_dir / kBankDumpFile;
  r.artifacts = parse_transcript(read_file_text(r.transcript_path));
  return r;
}

namespace detail {

inline void append_line(const std::filesystem::path& path, const std::string& line) {
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) throw FileError("cannot append to file", path.string());
  out << line << '\n';
  out.flush();
  if (!out) throw FileError("short write", path.string());
}

inline void write_atomically(const std::filesystem::path& path, std::string_view text) {
  auto tmp = path;
  tmp += ".tmp";
  write_file(tmp, text);
  std::filesystem::rename(tmp, path);
}

}  // namespace detail

/// Runs every scene in order, threading the narrative bank. Each scene is
/// committed by appending its transcript record after its WAV and keyframe
/// are on disk; the bank dump is rewritten after every commit.
inline StoryRunResult run_story(const StorySpec& spec, const std::map<std::string, FrameSequence>& videos,
                                const Backends& backends, const RunConfig& config) {
  validate(spec);
  config.validate();
  namespace fs = std::filesystem;
  const auto& dir = config.output_dir;
  if (dir.empty()) throw ValidationError("output_dir must be set");
  fs::create_directories(dir);

  StoryRunResult result;
  result.output_dir = dir;
  result.transcript_path = dir / kTranscriptFile;
  result.bank_dump_path = dir / kBankDumpFile;

  NarrativeBank bank(config.rnb_capacity);
  std::vector<ContextTurn> turns;

  if (config.resume && fs::exists(result.transcript_path)) {
    result.artifacts = parse_transcript(read_file_text(result.transcript_path));
    for (std::size_t i = 0; i < result.artifacts.size(); ++i) {
      const auto& a = result.artifacts[i];
      if (a.scene_index != i || i >= spec.scenes.size() || a.scene_id != spec.scenes[i].scene_id)
        throw ValidationError("existing transcript does not match the story at record " + std::to_string(i));
      bank.append({a.scene_index, a.speaker, a.dialogue, a.caption});
      std::optional<AudioClip> audio;
      if (a.audio && fs::exists(dir / *a.audio)) audio = read_wav_file(dir / *a.audio);
      turns.push_back({a.speaker, a.dialogue, std::move(audio)});
    }
    log::info("resume", {{"committed_scenes", result.artifacts.size()}});
  } else {
    for (auto sub : {"audio", "keyframes"}) fs::remove_all(dir / sub);
    fs::remove(result.transcript_path);
    write_file(result.transcript_path, std::string_view());
  }
  detail::write_atomically(result.bank_dump_path, bank.dump());

  nlohmann::ordered_json info = {{"title", spec.title}, {"scene_count", spec.scenes.size()}, {"config", config.to_json()}};
  write_file(dir / kRunInfoFile, info.dump(2) + "\n");

  VoiceLibrary voices;
  if (backends.speech->needs_references()) {
    const auto base = config.reference_base_dir.empty() ? fs::current_path() : config.reference_base_dir;
    voices = VoiceLibrary::load(spec, base);
  }

  auto last_committed = [&]() -> std::optional<std::size_t> {
    if (result.artifacts.empty()) return std::nullopt;
    return result.artifacts.back().scene_index;
  };

  for (std::size_t t = result.artifacts.size(); t < spec.scenes.size(); ++t) {
    const auto& scene = spec.scenes[t];
    const auto vit = videos.find(scene.scene_id);
    SceneStepInputs inputs;
    inputs.video = vit == videos.end() ? nullptr : &vit->second;
    inputs.prior_turns = turns;
    inputs.voices = &voices;
    try {
      auto step = run_scene_step(spec, t, bank, backends, config, inputs);
      auto& art = step.artifact;
      art.audio = scene_audio_path(t, art.speaker);
      art.keyframe = scene_keyframe_path(t, step.keyframe);
      write_wav_file(dir / *art.audio, step.audio);
      write_file(dir / *art.keyframe, step.keyframe.bytes());
      detail::append_line(result.transcript_path, transcript_record(art).dump());
      bank = std::move(step.bank);
      detail::write_atomically(result.bank_dump_path, bank.dump());
      turns.push_back({art.speaker, art.dialogue, std::move(step.audio)});
      log::info("scene_committed", {{"scene_index", t}, {"speaker", art.speaker}});
      result.artifacts.push_back(std::move(art));
    } catch (const Error& e) {
      log::error("story_aborted", {{"scene_index", t}, {"error", e.what()}});
      throw StoryAborted(last_committed(), e.what());
    } catch (const fs::filesystem_error& e) {
      log::error("story_aborted", {{"scene_index", t}, {"error", e.what()}});
      throw StoryAborted(last_committed(), e.what());
    }
  }
  return result;
}

}  // namespace storyweave
