#include <gtest/gtest.h>

#include <random>

#include "storyweave/eval_audio.hpp"
#include "test_support.hpp"

using namespace storyweave;
using storyweave::testing::sine;

TEST(F0, PureSinesWithinFiveHertz) {
  for (double hz : {60.0, 110.0, 220.0, 440.0, 550.0}) {
    const auto contour = estimate_f0(sine(hz, 1.0, 22050));
    EXPECT_EQ(contour.voiced().size(), contour.f0_hz.size()) << hz;
    EXPECT_NEAR(mean_f0_hz(contour), hz, 5.0) << hz;
    EXPECT_LT(pitch_std_hz(contour), 5.0) << hz;
  }
}

TEST(F0, FrameCountFollowsHop) {
  // 22050 samples, 882-sample window, 221-sample hop.
  const auto contour = estimate_f0(sine(200, 1.0, 22050));
  EXPECT_EQ(contour.f0_hz.size(), (22050u - 882u) / 221u + 1u);
  EXPECT_DOUBLE_EQ(contour.frame_hop_s, 0.01);
}

TEST(F0, SilenceAndNoiseAreUnvoiced) {
  const auto silent = estimate_f0(AudioClip(std::vector<float>(22050, 0.0f), 22050));
  EXPECT_TRUE(silent.voiced().empty());
  EXPECT_THROW(pitch_std_hz(silent), NoVoicedFramesError);

  std::mt19937 rng(2024);
  std::uniform_real_distribution<float> u(-0.5f, 0.5f);
  std::vector<float> noise(22050);
  for (auto& x : noise) x = u(rng);
  const auto c = estimate_f0(AudioClip(noise, 22050));
  const double unvoiced = 1.0 - static_cast<double>(c.voiced().size()) / static_cast<double>(c.f0_hz.size());
  EXPECT_GE(unvoiced, 0.8);
}

TEST(F0, RejectsShortOrLowRateClips) {
  EXPECT_THROW(estimate_f0(AudioClip({}, 16000)), TooShortError);
  EXPECT_THROW(estimate_f0(AudioClip(std::vector<float>(100, 0.1f), 16000)), TooShortError);
  EXPECT_THROW(estimate_f0(sine(100, 1.0, 4000)), ValidationError);
}

TEST(Dtw, HandCases) {
  const std::vector<double> a = {1, 3}, b = {1, 2, 3};
  const auto r = dtw_align(a, b);
  EXPECT_DOUBLE_EQ(r.cost, 1.0);
  EXPECT_EQ(r.path_length, 3u);

  PitchContour x{{0, 1, 0, 3}, 0.01}, y{{1, 2, 3}, 0.01};
  EXPECT_DOUBLE_EQ(dtw_contours(x, y).cost, 1.0);
  EXPECT_DOUBLE_EQ(dtw_distance(x, y), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(dtw_distance({{100}, 0.01}, {{103}, 0.01}), 3.0);
  EXPECT_DOUBLE_EQ(dtw_distance(y, y), 0.0);
}

TEST(Dtw, Errors) {
  EXPECT_THROW(dtw_distance({{0, 0}, 0.01}, {{1}, 0.01}), NoVoicedFramesError);
  EXPECT_THROW(dtw_distance({{1}, 0.01}, {{1}, 0.02}), ValidationError);
  EXPECT_THROW(dtw_align({}, std::vector<double>{1.0}), EmptyInputError);
}

TEST(Dtw, ShortestPathAmongMinimumCostPaths) {
  // All-equal values: every path costs 0, the diagonal is the shortest.
  const std::vector<double> a(4, 2.0), b(6, 2.0);
  const auto r = dtw_align(a, b);
  EXPECT_EQ(r.cost, 0.0);
  EXPECT_EQ(r.path_length, 6u);
}

TEST(Contour, SerializeParseRoundTrip) {
  const PitchContour c{{0.0, 120.5, 0.0, 130.25}, 0.01};
  const auto text = serialize_contour(c);
  EXPECT_EQ(text.substr(0, text.find('\n')), R"({"f0_hz":0.0,"frame_index":0})");
  EXPECT_EQ(parse_contour(text).f0_hz, c.f0_hz);
  EXPECT_EQ(parse_contour("{\"frame_index\": 2, \"f0_hz\": 90}\n").f0_hz, (std::vector<double>{0, 0, 90}));
  EXPECT_THROW(parse_contour("{\"frame_index\": 0}\n"), ParseError);
}

TEST(Silence, FrameCases) {
  const auto zeros = silence_profile(AudioClip(std::vector<float>(10 * 2048, 0.0f), 16000));
  EXPECT_EQ(zeros.silent_mask.size(), 10u);
  EXPECT_EQ(zeros.silent_fraction, 1.0);
  EXPECT_EQ(zeros.active_fraction(), 0.0);

  const auto tone = sine(440, 10 * 2048 / 16000.0, 16000);
  EXPECT_EQ(silence_profile(tone).silent_fraction, 0.0);

  std::vector<float> half(10 * 2048, 0.0f);
  std::copy(tone.samples.begin() + 5 * 2048, tone.samples.end(), half.begin() + 5 * 2048);
  const auto p = silence_profile(AudioClip(half, 16000));
  EXPECT_EQ(p.silent_fraction, 0.5);
  EXPECT_EQ(p.silent_mask, (std::vector<bool>{true, true, true, true, true, false, false, false, false, false}));
}

TEST(Silence, PartialFrameDroppedAndThresholdStrict) {
  std::vector<float> s(2048 + 1000, 0.0f);
  std::fill(s.begin() + 2048, s.end(), 0.9f);
  const auto p = silence_profile(AudioClip(s, 16000));
  EXPECT_EQ(p.silent_mask.size(), 1u);
  EXPECT_EQ(p.silent_fraction, 1.0);
  // RMS exactly at the threshold is not silent.
  EXPECT_EQ(silence_profile(AudioClip(std::vector<float>(2048, 0.5f), 16000), 2048, 0.5).silent_fraction, 0.0);
  EXPECT_THROW(silence_profile(AudioClip(std::vector<float>(100), 16000)), TooShortError);
}

TEST(Phonemes, BuiltinRules) {
  RuleBasedPhonemizer g2p;
  EXPECT_EQ(voiced_phoneme_count("", g2p), 0u);
  EXPECT_EQ(voiced_phoneme_count("mama", g2p), 4u);
  EXPECT_EQ(g2p.phonemize("the ship"), (std::vector<std::string>{"ð", "ʃ", "ɪ", "p"}));
  EXPECT_EQ(voiced_phoneme_count("the ship", g2p), 2u);
  EXPECT_EQ(g2p.phonemize("wall"), (std::vector<std::string>{"w", "a", "l"}));
}

TEST(Phonemes, ExternalList) {
  const PhonemeListPhonemizer g2p("w iː  d ɒ ŋ k i\nð ɛ ə z s t");
  EXPECT_EQ(g2p.phonemize("ignored").size(), 13u);
  // voiced: w iː d ɒ ŋ i ð ɛ ə z; unvoiced: k s t
  EXPECT_EQ(voiced_phoneme_count("", g2p), 10u);
  EXPECT_TRUE(is_voiced_phoneme("ˈaɪ"));
  EXPECT_TRUE(is_voiced_phoneme("ɹ"));
  EXPECT_TRUE(is_voiced_phoneme("d͡ʒ"));
  EXPECT_FALSE(is_voiced_phoneme("tʃ"));
  EXPECT_FALSE(is_voiced_phoneme("ˈ"));
}

TEST(VoiceStats, ConstantToneReport) {
  const auto stats = voice_stats_report(sine(180, 2.0, 22050), "test", RuleBasedPhonemizer());
  ASSERT_TRUE(stats.pitch_std_hz);
  EXPECT_LT(*stats.pitch_std_hz, 5.0);
  EXPECT_EQ(stats.unique_words, 1u);
  EXPECT_EQ(stats.silent_fraction, 0.0);
  EXPECT_EQ(stats.pause_ratio, 1.0);
  EXPECT_NEAR(stats.duration_s, 2.0, 1e-9);
  const auto j = stats.to_json();
  EXPECT_TRUE(j["method_dependent"].get<bool>());
}

TEST(VoiceStats, SilentClipStillReportsOtherFields) {
  const auto stats =
      voice_stats_report(AudioClip(std::vector<float>(22050, 0.0f), 22050), "hello there", RuleBasedPhonemizer());
  EXPECT_FALSE(stats.pitch_std_hz);
  EXPECT_FALSE(stats.pitch_error.empty());
  EXPECT_EQ(stats.unique_words, 2u);
  EXPECT_EQ(stats.silent_fraction, 1.0);
  EXPECT_TRUE(stats.to_json()["pitch_std_hz"].is_null());
  EXPECT_THROW(voice_stats_report(AudioClip({}, 8000), "x", RuleBasedPhonemizer()), EmptyInputError);
}
