#pragma once

// Command-line front end: generate, evaluate, analyze-voice, mock-run.
// Exit codes: 0 success, 1 usage error, 2 runtime failure.

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "storyweave/backends.hpp"
#include "storyweave/errors.hpp"
#include "storyweave/eval_audio.hpp"
#include "storyweave/eval_harness.hpp"
#include "storyweave/files.hpp"
#include "storyweave/log.hpp"
#include "storyweave/media.hpp"
#include "storyweave/pipeline.hpp"
#include "storyweave/story.hpp"

namespace storyweave::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

inline constexpr std::string_view kMetricsFile = "metrics.json";

/// Contents of the --config file.
struct ToolConfig {
  BackendsConfig backends;
  nlohmann::json run = nlohmann::json::object();
  std::string frame_extraction_command;
  double frame_extraction_duration_s = 0.0;
};

/// {"backends": {"caption": {...}, "dialogue": {...}, "speech": {...}, "embed": {...}},
///  "run": {"keyframe_count": 5, "rnb_capacity": "all", "speech_context_turns": 2},
///  "frame_extraction": {"command": "ffmpeg -i {video} {out_dir}/%05d.png", "duration_s": 4}}
inline ToolConfig load_tool_config(const std::filesystem::path& path) {
  const auto text = read_file_text(path);
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    std::size_t line = 0, column = 0;
    storyweave::detail::position_of(text, e.byte, line, column);
    throw ParseError(std::string(e.what()) + " in " + path.string(), line, column);
  }
  ToolConfig c;
  c.backends = backends_config_from_json(doc.value("backends", nlohmann::json::object()));
  c.run = doc.value("run", nlohmann::json::object());
  if (auto fx = doc.find("frame_extraction"); fx != doc.end()) {
    c.frame_extraction_command = fx->value("command", std::string());
    c.frame_extraction_duration_s = fx->value("duration_s", 0.0);
  }
  return c;
}

inline EntryLimit parse_capacity(const std::string& text) {
  if (text == "all") return EntryLimit::all();
  std::size_t used = 0;
  unsigned long long n = 0;
  try {
    n = std::stoull(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != text.size() || text.empty() || text[0] == '-')
    throw ValidationError("rnb capacity must be a nonnegative integer or \"all\", got \"" + text + "\"");
  return EntryLimit::at_most(static_cast<std::size_t>(n));
}

/// Substitutes {video} and {out_dir} in the configured command, runs it and
/// collects the image files it produced, sorted by name.
inline FrameSequence extract_frames(const std::string& command_template, const std::filesystem::path& video,
                                    const std::filesystem::path& out_dir, double duration_s) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  auto quote = [](const std::string& s) {
    std::string q = "'";
    for (char c : s) q += c == '\'' ? std::string("'\\''") : std::string(1, c);
    return q + "'";
  };
  std::string cmd = command_template;
  for (const auto& [key, value] : {std::pair<std::string, std::string>{"{video}", quote(video.string())},
                                   {"{out_dir}", quote(out_dir.string())}})
    for (auto pos = cmd.find(key); pos != std::string::npos; pos = cmd.find(key, pos + value.size()))
      cmd.replace(pos, key.size(), value);
  log::info("frame_extraction", {{"command", cmd}});
  if (const int rc = std::system(cmd.c_str()); rc != 0)
    throw Error("frame extraction command failed with status " + std::to_string(rc) + ": " + cmd);
  std::vector<fs::path> images;
  for (const auto& e : fs::directory_iterator(out_dir)) {
    auto ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (e.is_regular_file() && (ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp" || ext == ".ppm"))
      images.push_back(e.path());
  }
  std::sort(images.begin(), images.end());
  if (images.empty()) throw EmptyVideoError();
  FrameSequence seq;
  seq.duration_s = duration_s;
  for (auto& p : images) seq.frames.push_back(ImageRef::file(std::move(p)));
  return seq;
}

namespace detail {

struct GenerateArgs {
  std::string spec;
  std::string out;
  std::string config;
  std::string videos;
  std::string extract_frames;
  bool mock = false;
  std::optional<std::size_t> k;
  std::optional<std::string> rnb_capacity;
  std::optional<std::size_t> speech_context;
  bool no_image_conditioning = false;
  std::optional<std::string> caption_placeholder;
  bool resume = false;
};

struct EvaluateArgs {
  std::string out;
  std::string refs;
  std::string config;
  std::string report;
  bool self_reference = false;
};

struct VoiceArgs {
  std::vector<std::string> audio;
  std::vector<std::string> transcript;
  std::vector<std::string> phonemes;
  std::vector<std::string> names;
  bool json = false;
};

inline void require_file(const std::string& path) {
  if (!path.empty() && !std::filesystem::exists(path)) throw FileError("file not found", path);
}

inline void add_run_options(CLI::App* cmd, GenerateArgs& a) {
  cmd->add_option("--spec", a.spec, "Story specification (JSON)")->required();
  cmd->add_option("--out", a.out, "Output directory")->required();
  cmd->add_option("--videos", a.videos, "Directory of per-scene frame manifests (<scene_id>.json)");
  cmd->add_option("--k", a.k, "Keyframes sampled per scene")->check(CLI::PositiveNumber);
  cmd->add_option("--rnb-capacity", a.rnb_capacity, "Dialogue memory size: integer or 'all'");
  cmd->add_option("--speech-context", a.speech_context, "Prior turns sent as speech context");
  cmd->add_flag("--no-image-conditioning", a.no_image_conditioning, "Skip captioning; use a placeholder caption");
  cmd->add_option("--caption-placeholder", a.caption_placeholder, "Caption used without image conditioning");
  cmd->add_flag("--resume", a.resume, "Continue a partially completed run");
}

inline RunConfig build_run_config(const GenerateArgs& a, const ToolConfig& tool) {
  RunConfig rc;
  const auto& run = tool.run;
  if (run.contains("keyframe_count")) rc.keyframe_count_k = run["keyframe_count"].get<std::size_t>();
  if (run.contains("rnb_capacity")) {
    const auto& cap = run["rnb_capacity"];
    rc.rnb_capacity = cap.is_string() ? parse_capacity(cap.get<std::string>())
                                      : EntryLimit::at_most(cap.get<std::size_t>());
  }
  if (run.contains("speech_context_turns")) rc.speech_context_turns = run["speech_context_turns"].get<std::size_t>();
  if (run.contains("random_seed")) rc.random_seed = run["random_seed"].get<std::uint64_t>();
  if (run.contains("image_conditioning")) rc.image_conditioning = run["image_conditioning"].get<bool>();
  if (run.contains("caption_placeholder")) rc.caption_placeholder = run["caption_placeholder"].get<std::string>();

  if (a.k) rc.keyframe_count_k = *a.k;
  if (a.rnb_capacity) rc.rnb_capacity = parse_capacity(*a.rnb_capacity);
  if (a.speech_context) rc.speech_context_turns = *a.speech_context;
  if (a.no_image_conditioning) rc.image_conditioning = false;
  if (a.caption_placeholder) rc.caption_placeholder = *a.caption_placeholder;
  rc.resume = a.resume;
  rc.output_dir = a.out;
  rc.reference_base_dir = std::filesystem::absolute(a.spec).parent_path();
  rc.validate();
  return rc;
}

inline std::map<std::string, FrameSequence> collect_videos(const GenerateArgs& a, const ToolConfig& tool,
                                                           const StorySpec& spec) {
  namespace fs = std::filesystem;
  std::map<std::string, FrameSequence> videos;
  if (!a.videos.empty()) {
    if (!fs::is_directory(a.videos)) throw FileError("videos directory not found", a.videos);
    for (const auto& scene : spec.scenes) {
      const auto manifest = fs::path(a.videos) / (scene.scene_id + ".json");
      if (fs::exists(manifest)) videos[scene.scene_id] = load_frame_manifest(manifest);
    }
  }
  if (!a.extract_frames.empty()) {
    if (tool.frame_extraction_command.empty())
      throw ValidationError("--extract-frames needs frame_extraction.command in the config file");
    if (!fs::is_directory(a.extract_frames)) throw FileError("video directory not found", a.extract_frames);
    for (const auto& scene : spec.scenes) {
      if (videos.contains(scene.scene_id)) continue;
      for (const auto& e : fs::directory_iterator(a.extract_frames)) {
        if (e.path().stem() == scene.scene_id && e.path().extension() != ".json") {
          videos[scene.scene_id] = extract_frames(tool.frame_extraction_command, e.path(),
                                                  fs::path(a.out) / "frames" / safe_file_component(scene.scene_id),
                                                  tool.frame_extraction_duration_s);
          break;
        }
      }
    }
  }
  return videos;
}

inline StoryRunResult do_generate(const GenerateArgs& a, bool force_mock, std::ostream& out) {
  require_file(a.spec);
  require_file(a.config);
  ToolConfig tool;
  if (!a.config.empty()) tool = load_tool_config(a.config);
  if (force_mock || a.mock) tool.backends.force_mock();

  const auto spec = parse_story_spec(read_file_text(a.spec));
  const auto rc = build_run_config(a, tool);
  const auto videos = collect_videos(a, tool, spec);
  const auto backends = Backends::from_config(tool.backends, spec);
  auto result = run_story(spec, videos, backends, rc);
  out << "generated " << result.artifacts.size() << " scenes into " << rc.output_dir.string() << "\n";
  return result;
}

inline MetricsReport do_evaluate(const EvaluateArgs& a, bool force_mock, std::ostream& out) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(a.out)) throw FileError("run directory not found", a.out);
  require_file(a.refs);
  require_file(a.config);
  ToolConfig tool;
  if (!a.config.empty()) tool = load_tool_config(a.config);
  if (force_mock) tool.backends.force_mock();

  const auto result = load_story_run(a.out);
  EvaluationReferences refs;
  if (!a.refs.empty()) refs = load_references(a.refs);
  refs.self_reference = a.self_reference;

  EvaluateOptions opt;
  nlohmann::json run_info = nlohmann::json::object();
  if (fs::exists(fs::path(a.out) / kRunInfoFile)) run_info = nlohmann::json::parse(read_file_text(fs::path(a.out) / kRunInfoFile));
  opt.title = run_info.value("title", std::string());
  opt.config = {{"run", run_info.value("config", nlohmann::json::object())},
                {"self_reference", a.self_reference},
                {"references", a.refs}};

  const auto embedder = make_embedder(tool.backends.embed);
  auto report = evaluate_story(result, refs, embedder.get(), opt);

  const fs::path report_path = a.report.empty() ? fs::path(a.out) / kMetricsFile : fs::path(a.report);
  write_file(report_path, report.to_json().dump(2) + "\n");

  out << "metrics for " << report.per_scene.size() << " scenes written to " << report_path.string() << "\n";
  for (const auto& [k, s] : report.aggregate)
    out << "  " << std::left << std::setw(16) << k << std::setprecision(6) << s.mean << " ± " << s.std
        << " (n=" << s.count << ")\n";
  return report;
}

inline std::string fixed(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

inline void do_analyze_voice(const VoiceArgs& a, std::ostream& out) {
  if (a.audio.empty()) throw ValidationError("--audio is required");
  if (a.audio.size() != a.transcript.size())
    throw ValidationError("each --audio needs a matching --transcript");
  if (!a.phonemes.empty() && a.phonemes.size() != a.audio.size())
    throw ValidationError("--phonemes must be given once per --audio when used");
  if (!a.names.empty() && a.names.size() != a.audio.size())
    throw ValidationError("--name must be given once per --audio when used");

  struct Row {
    std::string name;
    VoiceStats stats;
  };
  std::vector<Row> rows;
  for (std::size_t i = 0; i < a.audio.size(); ++i) {
    require_file(a.audio[i]);
    require_file(a.transcript[i]);
    const auto clip = read_wav_file(a.audio[i]);
    const auto transcript = read_file_text(a.transcript[i]);
    VoiceStats stats;
    if (!a.phonemes.empty()) {
      require_file(a.phonemes[i]);
      stats = voice_stats_report(clip, transcript, PhonemeListPhonemizer::from_file(a.phonemes[i]));
    } else {
      stats = voice_stats_report(clip, transcript, RuleBasedPhonemizer());
    }
    rows.push_back({a.names.empty() ? std::filesystem::path(a.audio[i]).stem().string() : a.names[i], stats});
  }

  if (a.json) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& r : rows) {
      auto s = r.stats.to_json();
      s["character"] = r.name;
      j.push_back(std::move(s));
    }
    out << j.dump(2) << "\n";
    return;
  }

  const std::vector<std::string> header = {"Character",      "Unique Words", "Voiced Phonemes", "Pitch Std (Hz)",
                                           "Pause Ratio",    "Duration (sec)", "Silent Fraction"};
  std::vector<std::vector<std::string>> table = {header};
  for (const auto& r : rows)
    table.push_back({r.name, std::to_string(r.stats.unique_words), std::to_string(r.stats.voiced_phonemes),
                     r.stats.pitch_std_hz ? fixed(*r.stats.pitch_std_hz, 2) : std::string("n/a"),
                     fixed(r.stats.pause_ratio, 2), fixed(r.stats.duration_s, 2), fixed(r.stats.silent_fraction, 2)});
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& row : table)
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  for (std::size_t r = 0; r < table.size(); ++r) {
    for (std::size_t c = 0; c < table[r].size(); ++c)
      out << (c ? " | " : "") << std::left << std::setw(static_cast<int>(width[c])) << table[r][c];
    out << "\n";
    if (r == 0) {
      for (std::size_t c = 0; c < width.size(); ++c) out << (c ? "-|-" : "") << std::string(width[c], '-');
      out << "\n";
    }
  }
  out << "Pitch, pause and voicing figures are method-dependent estimates (autocorrelation F0, "
         "RMS silence frames of 2048 samples at threshold 0.01).\n";
  for (const auto& r : rows)
    if (!r.stats.pitch_std_hz) out << r.name << ": " << r.stats.pitch_error << "\n";
}

}  // namespace detail

/// Parses argv (including the program name) and runs one subcommand.
inline int dispatch(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"storyweave: character-driven story dialogue and speech pipeline with evaluation", "storyweave"};
  app.require_subcommand(1, 1);
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "debug, info, warn, error or off")
      ->check(CLI::IsMember({"debug", "info", "warn", "error", "off"}));

  detail::GenerateArgs gen;
  auto* generate = app.add_subcommand("generate", "Run the story pipeline");
  detail::add_run_options(generate, gen);
  generate->add_option("--config", gen.config, "Backend and run configuration (JSON)");
  generate->add_option("--extract-frames", gen.extract_frames,
                       "Directory of scene videos (<scene_id>.<ext>) to decode with frame_extraction.command");
  generate->add_flag("--mock", gen.mock, "Force mock backends");

  detail::EvaluateArgs ev;
  auto* evaluate = app.add_subcommand("evaluate", "Score a completed run directory");
  evaluate->add_option("--out", ev.out, "Run directory")->required();
  evaluate->add_option("--refs", ev.refs, "Evaluation references (JSON)");
  evaluate->add_option("--config", ev.config, "Configuration with the embedding backend (JSON)");
  evaluate->add_option("--report", ev.report, "Report path (default <out>/metrics.json)");
  evaluate->add_flag("--self-reference", ev.self_reference, "Use each scene's dialogue as its own reference");

  detail::VoiceArgs voice;
  auto* analyze = app.add_subcommand("analyze-voice", "Voice statistics for (clip, transcript) pairs");
  analyze->add_option("--audio", voice.audio, "WAV clip (repeatable)")->required();
  analyze->add_option("--transcript", voice.transcript, "Transcript text file (repeatable)")->required();
  analyze->add_option("--phonemes", voice.phonemes, "Whitespace-separated phoneme file (repeatable)");
  analyze->add_option("--name", voice.names, "Row label (repeatable)");
  analyze->add_flag("--json", voice.json, "Print JSON instead of a table");

  detail::GenerateArgs mock;
  auto* mock_run = app.add_subcommand("mock-run", "Generate with mock backends, then evaluate against itself");
  detail::add_run_options(mock_run, mock);

  std::vector<const char*> cargv;
  cargv.reserve(argv.size() + 1);
  if (argv.empty()) cargv.push_back("storyweave");
  for (const auto& a : argv) cargv.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(cargv.size()), cargv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  static const std::map<std::string, log::Level> kLevels = {{"debug", log::Level::Debug},
                                                            {"info", log::Level::Info},
                                                            {"warn", log::Level::Warn},
                                                            {"error", log::Level::Error},
                                                            {"off", log::Level::Off}};
  log::set_level(kLevels.at(log_level));

  try {
    if (generate->parsed()) {
      detail::do_generate(gen, false, out);
    } else if (evaluate->parsed()) {
      detail::do_evaluate(ev, false, out);
    } else if (analyze->parsed()) {
      detail::do_analyze_voice(voice, out);
    } else if (mock_run->parsed()) {
      const auto result = detail::do_generate(mock, true, out);
      detail::EvaluateArgs self{mock.out, "", "", "", true};
      detail::do_evaluate(self, true, out);
    }
  } catch (const FileError& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}

inline int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  return dispatch(std::vector<std::string>(argv, argv + argc), out, err);
}

}  // namespace storyweave::cli
