#include <gtest/gtest.h>

#include "storyweave/pipeline.hpp"
#include "test_support.hpp"

using namespace storyweave;
using storyweave::testing::small_story;
using storyweave::testing::TempDir;

namespace {

// Fails whenever the prompt mentions `marker`.
class FailingDialogue final : public DialogueModel {
 public:
  explicit FailingDialogue(std::string marker) : marker_(std::move(marker)) {}
  std::string generate(std::string_view prompt, std::string_view speaker) const override {
    if (prompt.find(marker_) != std::string_view::npos) throw BackendUnavailable("dialogue service down");
    return MockDialogueModel().generate(prompt, speaker);
  }

 private:
  std::string marker_;
};

class RecordingSpeech final : public SpeechSynthesizer {
 public:
  mutable std::vector<SpeechRequest> requests;
  AudioClip render(const SpeechRequest& req) const override {
    requests.push_back(req);
    return MockSpeechSynthesizer().render(req);
  }
  bool needs_references() const override { return true; }
};

RunConfig config_for(const std::filesystem::path& dir) {
  RunConfig c;
  c.output_dir = dir;
  return c;
}

}  // namespace

TEST(SceneStep, FirstSceneHasEmptyMemory) {
  const auto spec = small_story();
  const auto backends = Backends::mock(spec);
  const auto step = run_scene_step(spec, 0, NarrativeBank(), backends, RunConfig{});
  const auto& a = step.artifact;
  EXPECT_EQ(a.speaker, "Shrek");
  EXPECT_EQ(a.full_prompt, "A muddy swamp at dusk, shot 1. Shrek stomps past Donkey, beat 1");
  EXPECT_EQ(a.caption, MockCaptioner().caption(placeholder_keyframe(spec.scenes[0])));
  EXPECT_EQ(a.assembled_prompt, "[Scene] " + a.full_prompt + "\n[Image] " + a.caption + "\n[DialogueMemory]");
  EXPECT_EQ(a.dialogue, MockDialogueModel().generate(a.assembled_prompt, "Shrek"));
  ASSERT_EQ(step.bank.size(), 1u);
  EXPECT_EQ(step.bank.entries()[0].caption_at_generation, a.caption);
  EXPECT_NEAR(step.audio.duration_s(), std::max(0.5, 0.05 * static_cast<double>(a.dialogue.size())), 1e-9);
}

TEST(SceneStep, RequiresTheBankToEndAtThePreviousScene) {
  const auto spec = small_story();
  const auto backends = Backends::mock(spec);
  EXPECT_THROW(run_scene_step(spec, 1, NarrativeBank(), backends, RunConfig{}), OrderingError);
  EXPECT_THROW(run_scene_step(spec, 3, NarrativeBank(), backends, RunConfig{}), RangeError);
  const auto s0 = run_scene_step(spec, 0, NarrativeBank(), backends, RunConfig{});
  EXPECT_THROW(run_scene_step(spec, 0, s0.bank, backends, RunConfig{}), OrderingError);
  EXPECT_NO_THROW(run_scene_step(spec, 1, s0.bank, backends, RunConfig{}));
}

TEST(SceneStep, BackendFailuresNameTheScene) {
  const auto spec = small_story();
  auto backends = Backends::mock(spec);
  backends.dialogue = std::make_shared<FailingDialogue>("beat 1");
  try {
    run_scene_step(spec, 0, NarrativeBank(), backends, RunConfig{});
    FAIL();
  } catch (const SceneStepError& e) {
    EXPECT_EQ(e.scene_index(), 0u);
    EXPECT_NE(std::string(e.what()).find("dialogue service down"), std::string::npos);
  }
}

TEST(SceneStep, UsesTheMiddleKeyframe) {
  TempDir dir("keyframe");
  FrameSequence video;
  video.duration_s = 1.0;
  for (int i = 0; i < 100; ++i) {
    const auto p = dir / ("f" + std::to_string(i) + ".png");
    write_file(p, "frame " + std::to_string(i));
    video.frames.push_back(ImageRef::file(p));
  }
  const auto spec = small_story();
  SceneStepInputs in;
  in.video = &video;
  const auto step = run_scene_step(spec, 0, NarrativeBank(), Backends::mock(spec), RunConfig{}, in);
  EXPECT_EQ(step.keyframe.path, dir / "f50.png");
  EXPECT_EQ(step.artifact.caption, MockCaptioner().caption(ImageRef::file(dir / "f50.png")));
}

TEST(SceneStep, SpeechContextIsTrimmedAndReferencesAttached) {
  const auto spec = small_story(4);
  auto backends = Backends::mock(spec);
  auto speech = std::make_shared<RecordingSpeech>();
  backends.speech = speech;
  VoiceLibrary voices;
  voices.add("Donkey", {AudioClip({0.1f}, 8000), "donkey words"});
  RunConfig cfg;
  cfg.speech_context_turns = 1;
  NarrativeBank bank;
  for (std::size_t t = 0; t < 3; ++t) {
    SceneStepInputs in;
    in.voices = &voices;
    bank = run_scene_step(spec, t, bank, backends, cfg, in).bank;
  }
  ASSERT_EQ(speech->requests.size(), 3u);
  EXPECT_TRUE(speech->requests[0].context_turns.empty());
  ASSERT_EQ(speech->requests[2].context_turns.size(), 1u);
  EXPECT_EQ(speech->requests[2].context_turns[0].speaker, "Donkey");
  EXPECT_TRUE(speech->requests[0].reference_clips.empty());
  ASSERT_EQ(speech->requests[1].reference_clips.size(), 1u);
  EXPECT_EQ(speech->requests[1].reference_clips[0].transcript, "donkey words");
}

TEST(RunStory, WritesTranscriptBankAndMedia) {
  TempDir dir("run");
  const auto spec = small_story(3);
  const auto result = run_story(spec, {}, Backends::mock(spec), config_for(dir.path()));
  ASSERT_EQ(result.artifacts.size(), 3u);
  const auto loaded = load_story_run(dir.path());
  EXPECT_EQ(loaded.artifacts, result.artifacts);
  EXPECT_EQ(loaded.artifacts[1].audio->generic_string(), "audio/scene_001_Donkey.wav");
  EXPECT_EQ(loaded.artifacts[2].keyframe->generic_string(), "keyframes/scene_002.bin");
  EXPECT_TRUE(std::filesystem::exists(dir / "audio/scene_002_Shrek.wav"));
  EXPECT_EQ(read_file_text(dir / "keyframes/scene_000.bin"), "placeholder-keyframe:s1");

  const auto bank = NarrativeBank::load(read_file_text(dir / "bank.jsonl"), EntryLimit::all());
  ASSERT_EQ(bank.size(), 3u);
  EXPECT_EQ(bank.entries()[2].text, result.artifacts[2].dialogue);
  // Scene 2 sees the two earlier lines in its memory section.
  EXPECT_NE(result.artifacts[2].assembled_prompt.find("Donkey (scene 1): " + result.artifacts[1].dialogue),
            std::string::npos);

  const auto first = read_file_text(dir / "transcript.jsonl");
  EXPECT_EQ(first.substr(0, 16), R"({"scene_index":0)");

  const auto info = nlohmann::json::parse(read_file_text(dir / "run.json"));
  EXPECT_EQ(info["config"]["rnb_capacity"], "all");
  EXPECT_EQ(info["scene_count"], 3);
}

TEST(RunStory, AbortKeepsCommittedScenesAndResumeFinishes) {
  TempDir dir("abort");
  const auto spec = small_story(4);
  auto broken = Backends::mock(spec);
  broken.dialogue = std::make_shared<FailingDialogue>("beat 3");
  try {
    run_story(spec, {}, broken, config_for(dir.path()));
    FAIL();
  } catch (const StoryAborted& e) {
    EXPECT_EQ(e.last_committed_scene(), 1u);
  }
  EXPECT_EQ(load_story_run(dir.path()).artifacts.size(), 2u);
  EXPECT_FALSE(std::filesystem::exists(dir / "audio/scene_002_Shrek.wav"));

  auto cfg = config_for(dir.path());
  cfg.resume = true;
  const auto resumed = run_story(spec, {}, Backends::mock(spec), cfg);

  TempDir fresh("fresh");
  run_story(spec, {}, Backends::mock(spec), config_for(fresh.path()));
  EXPECT_EQ(resumed.artifacts.size(), 4u);
  EXPECT_EQ(read_file_text(dir / "transcript.jsonl"), read_file_text(fresh / "transcript.jsonl"));
  EXPECT_EQ(read_file_text(dir / "bank.jsonl"), read_file_text(fresh / "bank.jsonl"));
}

TEST(RunStory, FirstSceneFailureHasNoCommittedScene) {
  TempDir dir("abort0");
  const auto spec = small_story(2);
  auto broken = Backends::mock(spec);
  broken.dialogue = std::make_shared<FailingDialogue>("beat 1");
  try {
    run_story(spec, {}, broken, config_for(dir.path()));
    FAIL();
  } catch (const StoryAborted& e) {
    EXPECT_FALSE(e.last_committed_scene());
  }
}

TEST(RunStory, FreshRunReplacesOldOutput) {
  TempDir dir("rerun");
  const auto spec = small_story(3);
  run_story(spec, {}, Backends::mock(spec), config_for(dir.path()));
  const auto again = run_story(small_story(2), {}, Backends::mock(spec), config_for(dir.path()));
  EXPECT_EQ(load_story_run(dir.path()).artifacts.size(), 2u);
  EXPECT_FALSE(std::filesystem::exists(dir / "audio/scene_002_Shrek.wav"));
}

TEST(RunStory, AblationSwitches) {
  TempDir dir("ablate");
  const auto spec = small_story(4);
  auto cfg = config_for(dir.path());
  cfg.rnb_capacity = EntryLimit::at_most(0);
  cfg.image_conditioning = false;
  cfg.caption_placeholder = "no picture";
  const auto r = run_story(spec, {}, Backends::mock(spec), cfg);
  for (const auto& a : r.artifacts) {
    EXPECT_EQ(a.caption, "no picture");
    EXPECT_TRUE(a.assembled_prompt.ends_with("[Image] no picture\n[DialogueMemory]")) << a.assembled_prompt;
  }
  EXPECT_EQ(read_file_text(dir / "bank.jsonl"), "");

  cfg.rnb_capacity = EntryLimit::at_most(1);
  cfg.image_conditioning = true;
  const auto one = run_story(spec, {}, Backends::mock(spec), cfg);
  const auto& last = one.artifacts.back().assembled_prompt;
  const auto memory = last.substr(last.find("[DialogueMemory]"));
  EXPECT_EQ(std::count(memory.begin(), memory.end(), '\n'), 1);
  EXPECT_NE(memory.find("(scene 2)"), std::string::npos);
}

TEST(RunStory, LiveSpeechLoadsVoiceReferences) {
  TempDir dir("voices");
  auto spec = small_story(2);
  spec.characters[0].voice_reference = "voices/shrek.wav";
  spec.characters[0].voice_transcript = "ogres are like onions";
  write_wav_file(dir / "voices/shrek.wav", AudioClip({0.2f, 0.1f}, 16000));
  auto backends = Backends::mock(spec);
  auto speech = std::make_shared<RecordingSpeech>();
  backends.speech = speech;
  auto cfg = config_for(dir / "out");
  cfg.reference_base_dir = dir.path();
  run_story(spec, {}, backends, cfg);
  ASSERT_EQ(speech->requests.size(), 2u);
  ASSERT_EQ(speech->requests[0].reference_clips.size(), 1u);
  EXPECT_EQ(speech->requests[0].reference_clips[0].audio.samples.size(), 2u);
  EXPECT_TRUE(speech->requests[1].reference_clips.empty());
  // The second scene's context carries the first scene's rendered audio.
  ASSERT_EQ(speech->requests[1].context_turns.size(), 1u);
  EXPECT_TRUE(speech->requests[1].context_turns[0].audio.has_value());

  std::filesystem::remove(dir / "voices/shrek.wav");
  EXPECT_THROW(run_story(spec, {}, backends, cfg), FileError);
}
