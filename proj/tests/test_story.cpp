#include <gtest/gtest.h>

#include <random>

#include "storyweave/story.hpp"
#include "test_support.hpp"

using namespace storyweave;
using storyweave::testing::random_sentence;
using storyweave::testing::random_word;
using storyweave::testing::small_story;

namespace {

StorySpec random_story(std::mt19937& rng) {
  std::uniform_int_distribution<std::size_t> n_chars(1, 4), n_scenes(1, 14), coin(0, 1);
  std::uniform_real_distribution<double> pitch(60.0, 400.0);
  StorySpec spec;
  spec.title = random_sentence(rng, 1, 4);
  const auto nc = n_chars(rng);
  for (std::size_t i = 0; i < nc; ++i) {
    CharacterProfile c;
    c.name = random_word(rng) + std::to_string(i);
    if (coin(rng)) {
      c.voice_reference = "voices/" + c.name + ".wav";
      c.voice_transcript = random_sentence(rng);
    }
    c.base_pitch_hz = pitch(rng);
    spec.characters.push_back(c);
  }
  const auto ns = n_scenes(rng);
  for (std::size_t i = 0; i < ns; ++i)
    spec.scenes.push_back({"scene-" + std::to_string(i), random_sentence(rng), random_sentence(rng)});
  if (coin(rng)) {
    std::vector<std::string> schedule;
    std::uniform_int_distribution<std::size_t> pick(0, nc - 1);
    for (std::size_t i = 0; i < ns; ++i) schedule.push_back(spec.characters[pick(rng)].name);
    spec.speaker_schedule = schedule;
  }
  return spec;
}

const char* kMinimal = R"({
  "title": "T",
  "characters": [{"name": "A"}, {"name": "B", "voice_reference": "b.wav", "voice_transcript": "hi"}],
  "scenes": [{"scene_id": "x", "setting": "A road", "action": "A walks"}]
})";

}  // namespace

TEST(StorySpec, RoundTripPreservesEveryField) {
  std::mt19937 rng(20240611);
  for (int i = 0; i < 300; ++i) {
    const auto spec = random_story(rng);
    const auto again = parse_story_spec(serialize_story_spec(spec));
    ASSERT_EQ(again, spec) << serialize_story_spec(spec);
  }
}

TEST(StorySpec, OptionalFieldsTakeDefaults) {
  const auto spec = parse_story_spec(kMinimal);
  ASSERT_EQ(spec.characters.size(), 2u);
  EXPECT_FALSE(spec.characters[0].voice_reference);
  EXPECT_DOUBLE_EQ(spec.characters[0].base_pitch_hz, 150.0);
  EXPECT_EQ(spec.characters[1].voice_reference->string(), "b.wav");
  EXPECT_FALSE(spec.speaker_schedule);
}

TEST(StorySpec, ParseErrorCarriesPosition) {
  try {
    parse_story_spec("{\n  \"title\": \"T\",\n  oops\n}");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
    EXPECT_GE(e.column(), 3u);
  }
}

TEST(StorySpec, MissingFieldNamesThePath) {
  try {
    parse_story_spec(R"({"title": "T", "characters": [{"name": "A"}],
                         "scenes": [{"scene_id": "x", "setting": "s"}]})");
    FAIL() << "expected SchemaError";
  } catch (const SchemaError& e) {
    EXPECT_EQ(e.field(), "scenes[0].action");
  }
  EXPECT_THROW(parse_story_spec(R"({"characters": [], "scenes": []})"), SchemaError);
}

TEST(StorySpec, UnknownFieldsAndLengthProduceWarnings) {
  std::vector<std::string> warnings;
  parse_story_spec(R"({"title": "T", "genre": "comedy", "characters": [{"name": "A", "age": 3}],
                       "scenes": [{"scene_id": "x", "setting": "s", "action": "a"}]})",
                   &warnings);
  ASSERT_EQ(warnings.size(), 3u);
  EXPECT_NE(warnings[0].find("genre"), std::string::npos);
  EXPECT_NE(warnings[1].find("characters[0].age"), std::string::npos);
  EXPECT_NE(warnings[2].find("1 scenes"), std::string::npos);

  warnings.clear();
  parse_story_spec(serialize_story_spec(small_story(12)), &warnings);
  EXPECT_TRUE(warnings.empty());
}

TEST(StorySpec, ValidationRejectsBrokenSpecs) {
  auto broken = [](auto mutate) {
    auto s = small_story();
    mutate(s);
    return s;
  };
  EXPECT_NO_THROW(validate(small_story()));
  EXPECT_THROW(validate(broken([](StorySpec& s) { s.scenes.clear(); })), ValidationError);
  EXPECT_THROW(validate(broken([](StorySpec& s) { s.characters.clear(); })), ValidationError);
  EXPECT_THROW(validate(broken([](StorySpec& s) { s.characters[1].name = "Shrek"; })), ValidationError);
  EXPECT_THROW(validate(broken([](StorySpec& s) { s.characters[0].name.clear(); })), ValidationError);
  EXPECT_THROW(validate(broken([](StorySpec& s) { s.characters[0].voice_reference = "a.wav"; })), ValidationError);
  EXPECT_THROW(validate(broken([](StorySpec& s) { s.characters[0].base_pitch_hz = 0; })), ValidationError);
  EXPECT_THROW(validate(broken([](StorySpec& s) { s.scenes[1].scene_id = "s1"; })), ValidationError);
  EXPECT_THROW(validate(broken([](StorySpec& s) { s.scenes[0].action.clear(); })), ValidationError);
  EXPECT_THROW(validate(broken([](StorySpec& s) { s.speaker_schedule = {{"Shrek"}}; })), ValidationError);
  EXPECT_THROW(validate(broken([](StorySpec& s) { s.speaker_schedule = {{"Shrek", "Fiona", "Shrek"}}; })),
               ValidationError);
}

TEST(StorySpec, ResolveSpeaker) {
  auto spec = small_story(4);
  EXPECT_EQ(resolve_speaker(spec, 0), "Shrek");
  EXPECT_EQ(resolve_speaker(spec, 1), "Donkey");
  EXPECT_EQ(resolve_speaker(spec, 2), "Shrek");
  EXPECT_EQ(resolve_speaker(spec, 3), "Donkey");
  EXPECT_THROW(resolve_speaker(spec, 4), RangeError);

  spec.speaker_schedule = {{"Donkey", "Donkey", "Shrek", "Donkey"}};
  EXPECT_EQ(resolve_speaker(spec, 0), "Donkey");
  EXPECT_EQ(resolve_speaker(spec, 2), "Shrek");
}

TEST(StorySpec, ResolveSpeakerAlwaysNamesADeclaredCharacter) {
  std::mt19937 rng(7);
  for (int i = 0; i < 200; ++i) {
    const auto spec = random_story(rng);
    for (std::size_t t = 0; t < spec.scenes.size(); ++t)
      ASSERT_NE(spec.find_character(resolve_speaker(spec, t)), nullptr);
  }
}
