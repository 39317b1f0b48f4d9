#pragma once

// Recursive narrative bank: speaker-tagged, chronologically ordered dialogue
// memory, plus the [Scene]/[Image]/[DialogueMemory] prompt that consumes it.

#include <algorithm>
#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "storyweave/errors.hpp"

namespace storyweave {

inline constexpr std::string_view kSceneTag = "[Scene]";
inline constexpr std::string_view kImageTag = "[Image]";
inline constexpr std::string_view kMemoryTag = "[DialogueMemory]";

/// A count limit that may be unbounded ("all").
class EntryLimit {
 public:
  static constexpr EntryLimit all() { return EntryLimit(); }
  static constexpr EntryLimit at_most(std::size_t n) { return EntryLimit(n); }

  constexpr bool bounded() const { return limit_.has_value(); }
  constexpr std::size_t value() const { return limit_.value_or(std::numeric_limits<std::size_t>::max()); }
  constexpr std::size_t clamp(std::size_t count) const { return std::min(count, value()); }

  constexpr bool operator==(const EntryLimit&) const = default;

  std::string to_string() const { return bounded() ? std::to_string(*limit_) : std::string("all"); }

 private:
  constexpr EntryLimit() = default;
  constexpr explicit EntryLimit(std::size_t n) : limit_(n) {}
  std::optional<std::size_t> limit_;
};

struct DialogueEntry {
  std::size_t scene_index = 0;
  std::string speaker;
  std::string text;
  std::string caption_at_generation;

  bool operator==(const DialogueEntry&) const = default;
};

/// setting + ". " + action, verbatim.
inline std::string compose_scene_prompt(std::string_view setting, std::string_view action) {
  if (setting.empty() || action.empty())
    throw EmptyPromptError("scene prompt needs a non-empty setting and action");
  std::string p;
  p.reserve(setting.size() + action.size() + 2);
  p.append(setting).append(". ").append(action);
  return p;
}

/// Dialogue memory with an optional capacity. A capacity of zero keeps
/// nothing, which is how the memory ablation is run.
class NarrativeBank {
 public:
  NarrativeBank() = default;
  explicit NarrativeBank(EntryLimit capacity) : capacity_(capacity) {}

  EntryLimit capacity() const { return capacity_; }
  const std::vector<DialogueEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  /// Highest scene index ever appended, including entries since truncated.
  std::optional<std::size_t> last_scene_index() const { return last_index_; }

  /// Appends in place; drops the oldest entry when over capacity.
  void append(DialogueEntry entry) {
    if (entry.text.empty()) throw ValidationError("dialogue entry text must be non-empty");
    if (last_index_ && entry.scene_index <= *last_index_)
      throw OrderingError("scene index " + std::to_string(entry.scene_index) +
                          " does not follow " + std::to_string(*last_index_));
    last_index_ = entry.scene_index;
    entries_.push_back(std::move(entry));
    if (entries_.size() > capacity_.value()) entries_.erase(entries_.begin());
  }

  /// Last min(n, size) entries, oldest first.
  std::vector<DialogueEntry> window(EntryLimit n) const {
    const std::size_t k = n.clamp(entries_.size());
    return {entries_.end() - static_cast<std::ptrdiff_t>(k), entries_.end()};
  }

  std::vector<DialogueEntry> speaker_view(std::string_view speaker) const {
    std::vector<DialogueEntry> out;
    std::copy_if(entries_.begin(), entries_.end(), std::back_inserter(out),
                 [&](const DialogueEntry& e) { return e.speaker == speaker; });
    return out;
  }

  /// One JSON record per line, for audit and replay.
  std::string dump() const {
    std::string out;
    for (const auto& e : entries_) {
      nlohmann::json rec = {{"scene_index", e.scene_index},
                            {"speaker", e.speaker},
                            {"text", e.text},
                            {"caption_at_generation", e.caption_at_generation}};
      out += rec.dump();
      out += '\n';
    }
    return out;
  }

  /// Rebuilds a bank from a dump; records are re-appended so ordering and
  /// capacity are re-checked.
  static NarrativeBank load(std::string_view dump_text, EntryLimit capacity) {
    NarrativeBank bank(capacity);
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos < dump_text.size()) {
      auto nl = dump_text.find('\n', pos);
      if (nl == std::string_view::npos) nl = dump_text.size();
      auto line = dump_text.substr(pos, nl - pos);
      pos = nl + 1;
      ++line_no;
      if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
      try {
        auto rec = nlohmann::json::parse(line);
        bank.append({rec.at("scene_index").get<std::size_t>(), rec.at("speaker").get<std::string>(),
                     rec.at("text").get<std::string>(),
                     rec.value("caption_at_generation", std::string())});
      } catch (const nlohmann::json::exception& e) {
        throw ParseError(e.what(), line_no, 1);
      }
    }
    return bank;
  }

 private:
  EntryLimit capacity_ = EntryLimit::all();
  std::vector<DialogueEntry> entries_;
  std::optional<std::size_t> last_index_;
};

/// Value-style append: returns the updated bank and leaves the input untouched.
inline NarrativeBank append_entry(NarrativeBank bank, DialogueEntry entry) {
  bank.append(std::move(entry));
  return bank;
}

inline std::vector<DialogueEntry> history_window(const NarrativeBank& bank, EntryLimit n) {
  return bank.window(n);
}

inline std::vector<DialogueEntry> speaker_view(const NarrativeBank& bank, std::string_view speaker) {
  return bank.speaker_view(speaker);
}

struct NarrativePrompt {
  std::string scene_section;
  std::string image_section;
  std::vector<std::string> memory_section;

  std::string render() const {
    std::string out;
    out.append(kSceneTag).append(" ").append(scene_section).append("\n");
    out.append(kImageTag).append(" ").append(image_section).append("\n");
    out.append(kMemoryTag);
    for (const auto& line : memory_section) out.append("\n").append(line);
    return out;
  }
};

namespace detail {

inline std::string single_line(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text[i] == '\r' && i + 1 < text.size() && text[i + 1] == '\n') continue;
    out.push_back(text[i] == '\n' || text[i] == '\r' ? ' ' : text[i]);
  }
  return out;
}

// Section tags may only appear as section headers.
inline void reject_tags(std::string_view text) {
  for (auto tag : {kSceneTag, kImageTag, kMemoryTag})
    if (text.find(tag) != std::string_view::npos)
      throw MalformedPromptError("text contains the reserved tag " + std::string(tag));
}

}  // namespace detail

inline std::string memory_line(const DialogueEntry& e) {
  return e.speaker + " (scene " + std::to_string(e.scene_index) + "): " + detail::single_line(e.text);
}

inline NarrativePrompt assemble_narrative_prompt(std::string_view full_prompt, std::string_view caption,
                                                 const std::vector<DialogueEntry>& history) {
  if (full_prompt.empty()) throw EmptyPromptError("scene prompt must be non-empty");
  if (caption.empty()) throw EmptyPromptError("caption must be non-empty");
  for (std::size_t i = 1; i < history.size(); ++i)
    if (history[i].scene_index <= history[i - 1].scene_index)
      throw OrderingError("dialogue history must be chronological");
  detail::reject_tags(full_prompt);
  detail::reject_tags(caption);
  for (const auto& e : history) {
    detail::reject_tags(e.speaker);
    detail::reject_tags(e.text);
  }

  NarrativePrompt prompt{detail::single_line(full_prompt), detail::single_line(caption), {}};
  prompt.memory_section.reserve(history.size());
  for (const auto& e : history) prompt.memory_section.push_back(memory_line(e));
  return prompt;
}

/// True when each tag occurs exactly once and in [Scene], [Image], [DialogueMemory] order.
inline bool has_narrative_tags(std::string_view text) {
  auto once = [&](std::string_view tag) -> std::size_t {
    auto first = text.find(tag);
    if (first == std::string_view::npos) return std::string_view::npos;
    if (text.find(tag, first + 1) != std::string_view::npos) return std::string_view::npos;
    return first;
  };
  const auto s = once(kSceneTag), i = once(kImageTag), m = once(kMemoryTag);
  return s != std::string_view::npos && i != std::string_view::npos &&
         m != std::string_view::npos && s < i && i < m;
}

}  // namespace storyweave
