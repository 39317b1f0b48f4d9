#pragma once

// Audio clips and WAV I/O, scene frame sequences and keyframe sampling.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "storyweave/errors.hpp"
#include "storyweave/files.hpp"

namespace storyweave {

/// Mono PCM audio, samples in [-1, 1].
struct AudioClip {
  std::vector<float> samples;
  std::uint32_t sample_rate_hz = 0;

  AudioClip() = default;
  AudioClip(std::vector<float> s, std::uint32_t rate) : samples(std::move(s)), sample_rate_hz(rate) {
    if (rate == 0) throw ValidationError("sample rate must be positive");
    for (auto& x : samples) {
      if (!std::isfinite(x)) throw ValidationError("audio sample is not finite");
      x = std::clamp(x, -1.0f, 1.0f);
    }
  }

  bool empty() const { return samples.empty(); }
  double duration_s() const {
    return static_cast<double>(samples.size()) / static_cast<double>(sample_rate_hz);
  }

  bool operator==(const AudioClip&) const = default;
};

/// An image handed to the caption/embedding backends: a file, or bytes held in memory.
struct ImageRef {
  std::filesystem::path path;
  std::optional<Bytes> inline_bytes;

  static ImageRef file(std::filesystem::path p) { return {std::move(p), std::nullopt}; }
  static ImageRef memory(Bytes bytes, std::filesystem::path name = {}) {
    return {std::move(name), std::move(bytes)};
  }

  Bytes bytes() const { return inline_bytes ? *inline_bytes : read_file_bytes(path); }

  bool operator==(const ImageRef&) const = default;
};

/// Decoded scene video: ordered frames with uniform timing over duration_s.
struct FrameSequence {
  std::vector<ImageRef> frames;
  double duration_s = 0.0;
};

/// Frame indices at bin-center timestamps t_j = (2j+1)·D/(2k). Frame i is on
/// screen during [i·D/n, (i+1)·D/n), so the index is floor((2j+1)·n / 2k),
/// which is independent of D under uniform timing.
inline std::vector<std::size_t> keyframe_indices(std::size_t frame_count, std::size_t k) {
  if (frame_count == 0) throw EmptyVideoError();
  if (k == 0) throw ValidationError("keyframe count must be at least 1");
  std::vector<std::size_t> idx(k);
  for (std::size_t j = 0; j < k; ++j)
    idx[j] = std::min(frame_count - 1, ((2 * j + 1) * frame_count) / (2 * k));
  return idx;
}

inline std::vector<ImageRef> sample_keyframes(const FrameSequence& video, std::size_t k) {
  std::vector<ImageRef> out;
  for (auto i : keyframe_indices(video.frames.size(), k)) out.push_back(video.frames[i]);
  return out;
}

/// 0-based middle of k sampled keyframes.
inline std::size_t representative_index(std::size_t k) { return k / 2; }

/// Manifest JSON: {"frames": ["0001.png", ...], "duration_s": 2.5}; relative
/// frame paths resolve against the manifest's directory.
inline FrameSequence load_frame_manifest(const std::filesystem::path& manifest_path) {
  const auto text = read_file_text(manifest_path);
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string(e.what()) + " in " + manifest_path.string(), 1, e.byte);
  }
  if (!doc.contains("frames") || !doc["frames"].is_array()) throw SchemaError("frames");
  FrameSequence seq;
  seq.duration_s = doc.value("duration_s", 0.0);
  if (seq.duration_s < 0.0) throw ValidationError("duration_s must be nonnegative");
  const auto base = manifest_path.parent_path();
  for (const auto& f : doc["frames"]) {
    if (!f.is_string()) throw SchemaError("frames[]");
    std::filesystem::path p = f.get<std::string>();
    seq.frames.push_back(ImageRef::file(p.is_absolute() ? p : base / p));
  }
  return seq;
}

namespace wav {

namespace detail {

inline std::uint16_t u16(const std::uint8_t* p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }
inline std::uint32_t u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
inline void put16(Bytes& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}
inline void put32(Bytes& out, std::uint32_t v) {
  for (int s = 0; s < 32; s += 8) out.push_back(static_cast<std::uint8_t>((v >> s) & 0xff));
}
inline void put_tag(Bytes& out, const char* tag) { out.insert(out.end(), tag, tag + 4); }

inline constexpr std::uint16_t kFormatPcm = 1;
inline constexpr std::uint16_t kFormatFloat = 3;
inline constexpr std::uint16_t kFormatExtensible = 0xFFFE;

}  // namespace detail

}  // namespace wav

/// Reads PCM16 or float32 RIFF/WAVE; multichannel is averaged to mono.
inline AudioClip read_wav(std::span<const std::uint8_t> data) {
  using namespace wav::detail;
  if (data.size() < 12 || std::memcmp(data.data(), "RIFF", 4) != 0 ||
      std::memcmp(data.data() + 8, "WAVE", 4) != 0)
    throw UnsupportedFormatError("not a RIFF/WAVE file");

  std::optional<std::uint16_t> format;
  std::uint16_t channels = 0, bits = 0;
  std::uint32_t rate = 0;
  std::optional<std::span<const std::uint8_t>> payload;

  std::size_t pos = 12;
  while (pos + 8 <= data.size()) {
    const auto* hdr = data.data() + pos;
    const std::uint32_t size = u32(hdr + 4);
    const std::size_t body = pos + 8;
    const bool is_data = std::memcmp(hdr, "data", 4) == 0;
    if (size > data.size() - body) {
      if (is_data) throw CorruptFileError("data chunk truncated");
      throw CorruptFileError("chunk truncated");
    }
    if (std::memcmp(hdr, "fmt ", 4) == 0) {
      if (size < 16) throw CorruptFileError("fmt chunk too short");
      format = u16(data.data() + body);
      channels = u16(data.data() + body + 2);
      rate = u32(data.data() + body + 4);
      bits = u16(data.data() + body + 14);
      if (*format == kFormatExtensible) {
        if (size < 40) throw CorruptFileError("extensible fmt chunk too short");
        // First two bytes of the subformat GUID carry the plain format code.
        format = u16(data.data() + body + 24);
      }
    } else if (is_data) {
      payload = data.subspan(body, size);
    }
    pos = body + size + (size & 1);
  }

  if (!format) throw CorruptFileError("missing fmt chunk");
  if (!payload) throw CorruptFileError("missing data chunk");
  if (channels == 0 || rate == 0) throw CorruptFileError("invalid channel count or sample rate");

  const bool pcm16 = *format == kFormatPcm && bits == 16;
  const bool f32 = *format == kFormatFloat && bits == 32;
  if (!pcm16 && !f32)
    throw UnsupportedFormatError("unsupported WAV encoding (format " + std::to_string(*format) +
                                 ", " + std::to_string(bits) + " bits)");

  const std::size_t frame_bytes = static_cast<std::size_t>(channels) * (bits / 8);
  if (payload->size() % frame_bytes != 0) throw CorruptFileError("data chunk ends mid-frame");
  const std::size_t frames = payload->size() / frame_bytes;

  std::vector<float> mono(frames);
  const auto* p = payload->data();
  for (std::size_t f = 0; f < frames; ++f) {
    double acc = 0.0;
    for (std::uint16_t c = 0; c < channels; ++c) {
      if (pcm16) {
        acc += static_cast<std::int16_t>(u16(p)) / 32768.0;
        p += 2;
      } else {
        const std::uint32_t raw = u32(p);
        float v;
        std::memcpy(&v, &raw, sizeof v);
        acc += v;
        p += 4;
      }
    }
    mono[f] = static_cast<float>(acc / channels);
  }
  return AudioClip(std::move(mono), rate);
}

/// 16-bit PCM mono. 1.0 saturates at 32767.
inline Bytes write_wav(const AudioClip& clip) {
  using namespace wav::detail;
  const auto data_size = static_cast<std::uint32_t>(clip.samples.size() * 2);
  Bytes out;
  out.reserve(44 + data_size);
  put_tag(out, "RIFF");
  put32(out, 36 + data_size);
  put_tag(out, "WAVE");
  put_tag(out, "fmt ");
  put32(out, 16);
  put16(out, kFormatPcm);
  put16(out, 1);
  put32(out, clip.sample_rate_hz);
  put32(out, clip.sample_rate_hz * 2);
  put16(out, 2);
  put16(out, 16);
  put_tag(out, "data");
  put32(out, data_size);
  for (float s : clip.samples) {
    const double q = std::round(static_cast<double>(s) * 32768.0);
    put16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(std::clamp(q, -32768.0, 32767.0))));
  }
  return out;
}

inline AudioClip read_wav_file(const std::filesystem::path& path) { return read_wav(read_file_bytes(path)); }

inline void write_wav_file(const std::filesystem::path& path, const AudioClip& clip) {
  write_file(path, write_wav(clip));
}

}  // namespace storyweave
