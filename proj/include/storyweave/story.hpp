#pragma once

// Stories, characters and scene prompt pairs, plus the JSON story file.

#include <algorithm>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "storyweave/errors.hpp"
#include "storyweave/log.hpp"

namespace storyweave {

inline constexpr double kDefaultBasePitchHz = 150.0;

struct CharacterProfile {
  std::string name;
  std::optional<std::filesystem::path> voice_reference;
  std::string voice_transcript;
  /// Only consulted by the mock speech backend.
  double base_pitch_hz = kDefaultBasePitchHz;

  bool operator==(const CharacterProfile&) const = default;
};

/// One scene: the setting prompt and the character action prompt.
struct ScenePromptPair {
  std::string scene_id;
  std::string setting;
  std::string action;

  bool operator==(const ScenePromptPair&) const = default;
};

struct StorySpec {
  std::string title;
  std::vector<CharacterProfile> characters;
  std::vector<ScenePromptPair> scenes;
  std::optional<std::vector<std::string>> speaker_schedule;

  bool operator==(const StorySpec&) const = default;

  const CharacterProfile* find_character(std::string_view name) const {
    for (const auto& c : characters)
      if (c.name == name) return &c;
    return nullptr;
  }
};

/// Per-scene output bundle. Audio and keyframe are paths relative to the run directory.
struct SceneArtifact {
  std::size_t scene_index = 0;
  std::string scene_id;
  std::string speaker;
  std::string full_prompt;
  std::string caption;
  std::string assembled_prompt;
  std::string dialogue;
  std::optional<std::filesystem::path> audio;
  std::optional<std::filesystem::path> keyframe;

  bool operator==(const SceneArtifact&) const = default;
};

/// Throws ValidationError on the first violated invariant.
inline void validate(const StorySpec& spec) {
  if (spec.characters.empty()) throw ValidationError("characters must be non-empty");
  if (spec.scenes.empty()) throw ValidationError("scenes must be non-empty");

  std::set<std::string_view> names;
  for (const auto& c : spec.characters) {
    if (c.name.empty()) throw ValidationError("character name must be non-empty");
    if (!names.insert(c.name).second)
      throw ValidationError("character name must be unique: " + c.name);
    if (c.voice_reference && c.voice_transcript.empty())
      throw ValidationError("voice_transcript must be non-empty when voice_reference is set (" +
                            c.name + ")");
    if (!(c.base_pitch_hz > 0.0))
      throw ValidationError("base_pitch_hz must be positive (" + c.name + ")");
  }

  std::set<std::string_view> ids;
  for (const auto& s : spec.scenes) {
    if (s.scene_id.empty()) throw ValidationError("scene_id must be non-empty");
    if (!ids.insert(s.scene_id).second)
      throw ValidationError("scene_id must be unique: " + s.scene_id);
    if (s.setting.empty() || s.action.empty())
      throw ValidationError("setting and action must be non-empty (" + s.scene_id + ")");
  }

  if (spec.speaker_schedule) {
    if (spec.speaker_schedule->size() != spec.scenes.size())
      throw ValidationError("speaker_schedule must have one entry per scene");
    for (const auto& n : *spec.speaker_schedule)
      if (!names.contains(n))
        throw ValidationError("speaker_schedule names an undeclared character: " + n);
  }
}

namespace detail {

inline void position_of(std::string_view text, std::size_t byte, std::size_t& line,
                        std::size_t& column) {
  line = 1;
  column = 1;
  const std::size_t end = std::min(byte > 0 ? byte - 1 : 0, text.size());
  for (std::size_t i = 0; i < end; ++i) {
    if (text[i] == '\n') {
      ++line;
      column = 1;
    } else {
      ++column;
    }
  }
}

inline void warn_unknown(const nlohmann::json& obj, std::initializer_list<std::string_view> known,
                         std::string_view where, std::vector<std::string>& warnings) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = false;
    for (auto k : known) ok = ok || it.key() == k;
    if (!ok) warnings.push_back("unknown field ignored: " + std::string(where) + it.key());
  }
}

inline const nlohmann::json& require(const nlohmann::json& obj, const std::string& key,
                                     const std::string& path) {
  auto it = obj.find(key);
  if (it == obj.end()) throw SchemaError(path + key);
  return *it;
}

inline std::string require_string(const nlohmann::json& obj, const std::string& key,
                                  const std::string& path) {
  const auto& v = require(obj, key, path);
  if (!v.is_string()) throw SchemaError(path + key);
  return v.get<std::string>();
}

}  // namespace detail

/// Parses a story file. Non-fatal findings (unknown fields, unusual story
/// length) go to `warnings` when given, and to the log either way.
inline StorySpec parse_story_spec(std::string_view text, std::vector<std::string>* warnings = nullptr) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    std::size_t line = 0, column = 0;
    detail::position_of(text, e.byte, line, column);
    throw ParseError(e.what(), line, column);
  }
  if (!doc.is_object()) throw ParseError("top-level value must be an object", 1, 1);

  std::vector<std::string> local;
  auto& notes = warnings ? *warnings : local;

  detail::warn_unknown(doc, {"title", "characters", "scenes", "speaker_schedule"}, "", notes);

  StorySpec spec;
  spec.title = detail::require_string(doc, "title", "");

  const auto& chars = detail::require(doc, "characters", "");
  if (!chars.is_array()) throw SchemaError("characters");
  for (std::size_t i = 0; i < chars.size(); ++i) {
    const auto& c = chars[i];
    const std::string path = "characters[" + std::to_string(i) + "].";
    if (!c.is_object()) throw SchemaError(path.substr(0, path.size() - 1));
    detail::warn_unknown(c, {"name", "voice_reference", "voice_transcript", "base_pitch_hz"}, path,
                         notes);
    CharacterProfile profile;
    profile.name = detail::require_string(c, "name", path);
    if (auto it = c.find("voice_reference"); it != c.end() && !it->is_null()) {
      if (!it->is_string()) throw SchemaError(path + "voice_reference");
      if (!it->get<std::string>().empty()) profile.voice_reference = it->get<std::string>();
    }
    if (auto it = c.find("voice_transcript"); it != c.end() && !it->is_null()) {
      if (!it->is_string()) throw SchemaError(path + "voice_transcript");
      profile.voice_transcript = it->get<std::string>();
    }
    if (auto it = c.find("base_pitch_hz"); it != c.end() && !it->is_null()) {
      if (!it->is_number()) throw SchemaError(path + "base_pitch_hz");
      profile.base_pitch_hz = it->get<double>();
    }
    spec.characters.push_back(std::move(profile));
  }

  const auto& scenes = detail::require(doc, "scenes", "");
  if (!scenes.is_array()) throw SchemaError("scenes");
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const auto& s = scenes[i];
    const std::string path = "scenes[" + std::to_string(i) + "].";
    if (!s.is_object()) throw SchemaError(path.substr(0, path.size() - 1));
    detail::warn_unknown(s, {"scene_id", "setting", "action"}, path, notes);
    spec.scenes.push_back({detail::require_string(s, "scene_id", path),
                           detail::require_string(s, "setting", path),
                           detail::require_string(s, "action", path)});
  }

  if (auto it = doc.find("speaker_schedule"); it != doc.end() && !it->is_null()) {
    if (!it->is_array()) throw SchemaError("speaker_schedule");
    std::vector<std::string> schedule;
    for (const auto& n : *it) {
      if (!n.is_string()) throw SchemaError("speaker_schedule");
      schedule.push_back(n.get<std::string>());
    }
    spec.speaker_schedule = std::move(schedule);
  }

  validate(spec);

  if (spec.scenes.size() < 11 || spec.scenes.size() > 13)
    notes.push_back("story has " + std::to_string(spec.scenes.size()) +
                    " scenes; benchmark stories have 11 to 13");

  for (const auto& n : notes) log::warn("story_spec", {{"message", n}});
  return spec;
}

inline nlohmann::json to_json(const StorySpec& spec) {
  nlohmann::json doc;
  doc["title"] = spec.title;
  doc["characters"] = nlohmann::json::array();
  for (const auto& c : spec.characters) {
    nlohmann::json j = {{"name", c.name}, {"base_pitch_hz", c.base_pitch_hz}};
    if (c.voice_reference) j["voice_reference"] = c.voice_reference->generic_string();
    if (!c.voice_transcript.empty()) j["voice_transcript"] = c.voice_transcript;
    doc["characters"].push_back(std::move(j));
  }
  doc["scenes"] = nlohmann::json::array();
  for (const auto& s : spec.scenes)
    doc["scenes"].push_back({{"scene_id", s.scene_id}, {"setting", s.setting}, {"action", s.action}});
  if (spec.speaker_schedule) doc["speaker_schedule"] = *spec.speaker_schedule;
  return doc;
}

inline std::string serialize_story_spec(const StorySpec& spec) { return to_json(spec).dump(2) + "\n"; }

/// Explicit schedule when present, otherwise round-robin in declaration order.
inline const std::string& resolve_speaker(const StorySpec& spec, std::size_t scene_index) {
  if (scene_index >= spec.scenes.size())
    throw RangeError("scene index " + std::to_string(scene_index) + " out of range [0, " +
                     std::to_string(spec.scenes.size()) + ")");
  if (spec.speaker_schedule) return (*spec.speaker_schedule)[scene_index];
  return spec.characters[scene_index % spec.characters.size()].name;
}

}  // namespace storyweave
