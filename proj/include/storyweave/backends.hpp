#pragma once

// Client layer for the four model roles: captioner, dialogue model, speech
// synthesizer and embedding provider. Each role has an HTTP+JSON client and a
// deterministic mock.
//
// Wire schema (all bodies JSON, base64 is standard with padding):
//   POST {endpoint}/caption {image_b64}                         -> {caption}
//   POST {endpoint}/chat    {system, user}                      -> {text}
//   POST {endpoint}/speech  {text, speaker, references[{audio_b64, transcript}],
//                            context[{speaker, text, audio_b64?}]}
//                                                               -> {audio_b64, sample_rate}
//   POST {endpoint}/embed   {kind, payload}                     -> {vector[]}
// Audio travels as base64 WAV files.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <map>
#include <memory>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <variant>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "storyweave/digest.hpp"
#include "storyweave/errors.hpp"
#include "storyweave/log.hpp"
#include "storyweave/media.hpp"
#include "storyweave/narrative_bank.hpp"
#include "storyweave/story.hpp"

namespace storyweave {

enum class BackendMode { Live, Mock };

struct BackendConfig {
  std::string endpoint_url;
  std::string api_key_env_var;
  double timeout_s = 30.0;
  unsigned max_retries = 3;
  double backoff_base_s = 0.5;
  BackendMode mode = BackendMode::Mock;
  /// Expected embedding dimension; only meaningful for the embedding role.
  std::optional<std::size_t> dimension;

  void validate() const {
    if (mode == BackendMode::Live && endpoint_url.empty())
      throw ValidationError("live backend requires endpoint_url");
    if (!(timeout_s > 0.0)) throw ValidationError("timeout_s must be positive");
    if (!(backoff_base_s > 0.0)) throw ValidationError("backoff_base_s must be positive");
  }

  static BackendConfig mock() { return {}; }
};

inline BackendConfig backend_config_from_json(const nlohmann::json& j) {
  BackendConfig c;
  if (!j.is_object()) throw SchemaError("backend");
  const auto mode = j.value("mode", std::string("mock"));
  if (mode == "live") {
    c.mode = BackendMode::Live;
  } else if (mode == "mock") {
    c.mode = BackendMode::Mock;
  } else {
    throw ValidationError("backend mode must be \"live\" or \"mock\", got \"" + mode + "\"");
  }
  try {
    c.endpoint_url = j.value("endpoint_url", std::string());
    c.api_key_env_var = j.value("api_key_env_var", std::string());
    c.timeout_s = j.value("timeout_s", c.timeout_s);
    c.max_retries = j.value("max_retries", c.max_retries);
    c.backoff_base_s = j.value("backoff_base_s", c.backoff_base_s);
    if (j.contains("dimension") && !j["dimension"].is_null()) c.dimension = j["dimension"].get<std::size_t>();
  } catch (const nlohmann::json::type_error& e) {
    throw SchemaError(std::string("backend field: ") + e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Retry

/// Attempt i failing is followed by a wait of base · 2^i, for at most
/// max_retries retries (max_retries + 1 attempts in total).
struct RetryPolicy {
  using Sleeper = std::function<void(std::chrono::duration<double>)>;

  unsigned max_retries = 3;
  double backoff_base_s = 0.5;
  Sleeper sleep = [](std::chrono::duration<double> d) { std::this_thread::sleep_for(d); };

  double delay_after_attempt(unsigned attempt) const {
    return backoff_base_s * std::ldexp(1.0, static_cast<int>(attempt));
  }
};

/// Network-level failure (connect, timeout); always retryable.
class TransportFailure : public Error {
 public:
  using Error::Error;
};

inline bool retryable_status(int status) { return status == 429 || status >= 500; }

template <class Fn>
auto with_retries(const RetryPolicy& policy, std::string_view what, Fn&& attempt_fn) {
  for (unsigned attempt = 0;; ++attempt) {
    try {
      return attempt_fn();
    } catch (const TransportFailure& e) {
      if (attempt >= policy.max_retries)
        throw BackendUnavailable(std::string(what) + " unavailable after " +
                                 std::to_string(attempt + 1) + " attempts: " + e.what());
      log::warn("backend_retry", {{"call", what}, {"attempt", attempt}, {"error", e.what()}});
    } catch (const BackendError& e) {
      if (!retryable_status(e.status()) || attempt >= policy.max_retries) throw;
      log::warn("backend_retry", {{"call", what}, {"attempt", attempt}, {"status", e.status()}});
    }
    policy.sleep(std::chrono::duration<double>(policy.delay_after_attempt(attempt)));
  }
}

// ---------------------------------------------------------------------------
// Transport

struct HttpResponse {
  int status = 0;
  std::string body;
};

class HttpTransport {
 public:
  virtual ~HttpTransport() = default;
  /// Throws TransportFailure when no response was received.
  virtual HttpResponse post(const std::string& path, const std::string& json_body,
                            const std::map<std::string, std::string>& headers) = 0;
};

class HttplibTransport final : public HttpTransport {
 public:
  HttplibTransport(std::string_view endpoint_url, double timeout_s) {
    const auto scheme_end = endpoint_url.find("://");
    const auto host_start = scheme_end == std::string_view::npos ? 0 : scheme_end + 3;
    const auto path_start = endpoint_url.find('/', host_start);
    origin_ = std::string(endpoint_url.substr(0, path_start));
    if (path_start != std::string_view::npos) prefix_ = std::string(endpoint_url.substr(path_start));
    while (!prefix_.empty() && prefix_.back() == '/') prefix_.pop_back();
    timeout_ = std::chrono::duration_cast<std::chrono::microseconds>(std::chrono::duration<double>(timeout_s));
  }

  HttpResponse post(const std::string& path, const std::string& json_body,
                    const std::map<std::string, std::string>& headers) override {
    httplib::Client client(origin_);
    if (!client.is_valid()) throw ValidationError("invalid endpoint_url: " + origin_);
    const auto secs = timeout_.count() / 1000000;
    const auto usecs = timeout_.count() % 1000000;
    client.set_connection_timeout(secs, usecs);
    client.set_read_timeout(secs, usecs);
    client.set_write_timeout(secs, usecs);
    httplib::Headers h;
    for (const auto& [k, v] : headers) h.emplace(k, v);
    auto res = client.Post(prefix_ + path, h, json_body, "application/json");
    if (!res) throw TransportFailure("POST " + prefix_ + path + ": " + httplib::to_string(res.error()));
    return {res->status, res->body};
  }

 private:
  std::string origin_;
  std::string prefix_;
  std::chrono::microseconds timeout_{};
};

/// JSON request/response exchange with auth, status mapping and retries.
class JsonEndpoint {
 public:
  JsonEndpoint(BackendConfig config, std::shared_ptr<HttpTransport> transport = nullptr)
      : config_(std::move(config)),
        transport_(transport ? std::move(transport)
                             : std::make_shared<HttplibTransport>(config_.endpoint_url, config_.timeout_s)) {
    config_.validate();
    retry_.max_retries = config_.max_retries;
    retry_.backoff_base_s = config_.backoff_base_s;
  }

  const BackendConfig& config() const { return config_; }
  RetryPolicy& retry_policy() { return retry_; }

  nlohmann::json call(const std::string& path, const nlohmann::json& body) const {
    const auto payload = body.dump();
    std::map<std::string, std::string> headers;
    if (!config_.api_key_env_var.empty()) {
      if (const char* key = std::getenv(config_.api_key_env_var.c_str()); key && *key) {
        headers["Authorization"] = std::string("Bearer ") + key;
      } else {
        log::warn("backend_api_key_missing", {{"env_var", config_.api_key_env_var}});
      }
    }
    log::debug("backend_request", {{"path", path}, {"payload_sha256", to_hex(sha256(payload))}});
    return with_retries(retry_, path, [&] {
      auto res = transport_->post(path, payload, headers);
      if (res.status < 200 || res.status >= 300)
        throw BackendError(res.status, res.body.substr(0, 200));
      try {
        return nlohmann::json::parse(res.body);
      } catch (const nlohmann::json::parse_error&) {
        throw BackendError(res.status, "response is not JSON: " + res.body.substr(0, 200));
      }
    });
  }

 private:
  BackendConfig config_;
  std::shared_ptr<HttpTransport> transport_;
  RetryPolicy retry_;
};

namespace detail {

template <class T>
T response_field(const nlohmann::json& res, const char* key) {
  if (!res.is_object() || !res.contains(key))
    throw BackendError(200, std::string("response lacks field \"") + key + "\"");
  try {
    return res.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw BackendError(200, std::string("response field \"") + key + "\" has the wrong type");
  }
}

inline std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n\f\v");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n\f\v");
  return std::string(s.substr(first, last - first + 1));
}

inline std::size_t utf8_length(std::string_view s) {
  std::size_t n = 0;
  for (unsigned char c : s) n += (c & 0xC0) != 0x80;
  return n;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Domain types

struct EmbeddingVector {
  std::vector<double> values;
  bool normalized = false;

  double norm() const {
    double s = 0.0;
    for (double v : values) s += v * v;
    return std::sqrt(s);
  }

  static EmbeddingVector unit(std::vector<double> values) {
    EmbeddingVector v{std::move(values), false};
    const double n = v.norm();
    if (!(n > 0.0) || !std::isfinite(n)) throw DimensionError("cannot normalize a zero or non-finite vector");
    for (auto& x : v.values) x /= n;
    v.normalized = true;
    return v;
  }
};

enum class EmbedKind { Text, Image };

inline std::string_view to_string(EmbedKind k) { return k == EmbedKind::Text ? "text" : "image"; }

using EmbedPayload = std::variant<std::string, ImageRef>;

struct ReferenceClip {
  AudioClip audio;
  std::string transcript;
};

struct ContextTurn {
  std::string speaker;
  std::string text;
  std::optional<AudioClip> audio;
};

inline constexpr std::size_t kDefaultSpeechContextTurns = 2;

struct SpeechRequest {
  std::string text;
  std::string speaker;
  std::vector<ReferenceClip> reference_clips;
  std::vector<ContextTurn> context_turns;
  std::size_t max_context_turns = kDefaultSpeechContextTurns;

  /// Keeps only the most recent max_context_turns context turns.
  void trim_context() {
    if (context_turns.size() > max_context_turns)
      context_turns.erase(context_turns.begin(),
                          context_turns.end() - static_cast<std::ptrdiff_t>(max_context_turns));
  }
};

// ---------------------------------------------------------------------------
// Request payloads (pure functions of their inputs)

inline nlohmann::json caption_payload(const ImageRef& image) {
  return {{"image_b64", base64_encode(image.bytes())}};
}

inline std::string dialogue_system_message(std::string_view speaker) {
  const std::string s(speaker);
  return "You are " + s + ". Reply with one short line of dialogue spoken only by " + s +
         ", in character, using the scene, image and dialogue memory sections of the prompt. "
         "Do not write lines for any other character.";
}

inline nlohmann::json chat_payload(std::string_view prompt, std::string_view speaker) {
  return {{"system", dialogue_system_message(speaker)}, {"user", prompt}};
}

inline nlohmann::json speech_payload(SpeechRequest req) {
  req.trim_context();
  nlohmann::json refs = nlohmann::json::array();
  for (const auto& r : req.reference_clips)
    refs.push_back({{"audio_b64", base64_encode(write_wav(r.audio))}, {"transcript", r.transcript}});
  nlohmann::json ctx = nlohmann::json::array();
  for (const auto& t : req.context_turns) {
    nlohmann::json turn = {{"speaker", t.speaker}, {"text", t.text}};
    if (t.audio) turn["audio_b64"] = base64_encode(write_wav(*t.audio));
    ctx.push_back(std::move(turn));
  }
  return {{"text", req.text}, {"speaker", req.speaker}, {"references", std::move(refs)}, {"context", std::move(ctx)}};
}

inline nlohmann::json embed_payload(const EmbedPayload& payload, EmbedKind kind) {
  if (const auto* text = std::get_if<std::string>(&payload)) return {{"kind", to_string(kind)}, {"payload", *text}};
  return {{"kind", to_string(kind)}, {"payload", base64_encode(std::get<ImageRef>(payload).bytes())}};
}

// ---------------------------------------------------------------------------
// Role interfaces

class Captioner {
 public:
  virtual ~Captioner() = default;
  virtual std::string caption(const ImageRef& image) const = 0;
};

class DialogueModel {
 public:
  virtual ~DialogueModel() = default;
  virtual std::string generate(std::string_view prompt, std::string_view speaker) const = 0;
};

class SpeechSynthesizer {
 public:
  virtual ~SpeechSynthesizer() = default;
  virtual AudioClip render(const SpeechRequest& req) const = 0;
  /// Live synthesizers need reference clips; the pipeline skips loading them otherwise.
  virtual bool needs_references() const = 0;
};

class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual EmbeddingVector embed(const EmbedPayload& payload, EmbedKind kind) const = 0;
};

inline void require_tags(std::string_view prompt) {
  if (!has_narrative_tags(prompt))
    throw MalformedPromptError("prompt must contain [Scene], [Image] and [DialogueMemory] once each, in order");
}

namespace detail {

inline void check_dimension(const BackendConfig& config, std::size_t got) {
  if (config.dimension && *config.dimension != got)
    throw DimensionError("embedding has dimension " + std::to_string(got) + ", expected " +
                         std::to_string(*config.dimension));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Mocks

class MockCaptioner final : public Captioner {
 public:
  std::string caption(const ImageRef& image) const override {
    return "mock-caption-" + sha256_hex_prefix(image.bytes(), 8);
  }
};

class MockDialogueModel final : public DialogueModel {
 public:
  std::string generate(std::string_view prompt, std::string_view speaker) const override {
    require_tags(prompt);
    return std::string(speaker) + ": says line " + sha256_hex_prefix(as_bytes(prompt), 6);
  }
};

inline constexpr std::uint32_t kMockSpeechRate = 24000;

/// Sine tone at the speaker's base pitch; length max(0.5, 0.05 · characters) seconds.
class MockSpeechSynthesizer final : public SpeechSynthesizer {
 public:
  MockSpeechSynthesizer() = default;
  explicit MockSpeechSynthesizer(std::map<std::string, double> base_pitch_hz)
      : pitch_(std::move(base_pitch_hz)) {}
  explicit MockSpeechSynthesizer(const StorySpec& spec) {
    for (const auto& c : spec.characters) pitch_[c.name] = c.base_pitch_hz;
  }

  AudioClip render(const SpeechRequest& req) const override {
    const auto it = pitch_.find(req.speaker);
    const double f = it == pitch_.end() ? kDefaultBasePitchHz : it->second;
    const double duration = std::max(0.5, 0.05 * static_cast<double>(detail::utf8_length(req.text)));
    const auto n = static_cast<std::size_t>(std::llround(duration * kMockSpeechRate));
    std::vector<float> s(n);
    for (std::size_t i = 0; i < n; ++i)
      s[i] = static_cast<float>(0.5 * std::sin(2.0 * std::numbers::pi * f * static_cast<double>(i) / kMockSpeechRate));
    return AudioClip(std::move(s), kMockSpeechRate);
  }

  bool needs_references() const override { return false; }

 private:
  std::map<std::string, double> pitch_;
};

inline constexpr std::size_t kMockEmbeddingDim = 8;

/// 8 dimensions from the SHA-256 of the payload bytes (four bytes each), normalized.
class MockEmbedder final : public Embedder {
 public:
  explicit MockEmbedder(BackendConfig config = {}) : config_(std::move(config)) {}

  EmbeddingVector embed(const EmbedPayload& payload, EmbedKind) const override {
    const Bytes bytes = std::holds_alternative<std::string>(payload)
                            ? Bytes(as_bytes(std::get<std::string>(payload)).begin(),
                                    as_bytes(std::get<std::string>(payload)).end())
                            : std::get<ImageRef>(payload).bytes();
    if (bytes.empty()) throw EmptyInputError("embedding payload is empty");
    const auto d = sha256(bytes);
    std::vector<double> v(kMockEmbeddingDim);
    for (std::size_t i = 0; i < kMockEmbeddingDim; ++i) {
      const std::uint32_t u = (std::uint32_t{d[4 * i]} << 24) | (std::uint32_t{d[4 * i + 1]} << 16) |
                              (std::uint32_t{d[4 * i + 2]} << 8) | std::uint32_t{d[4 * i + 3]};
      v[i] = static_cast<double>(u) / 4294967296.0 * 2.0 - 1.0;
    }
    detail::check_dimension(config_, v.size());
    return EmbeddingVector::unit(std::move(v));
  }

 private:
  BackendConfig config_;
};

// ---------------------------------------------------------------------------
// HTTP clients

class HttpCaptioner final : public Captioner {
 public:
  explicit HttpCaptioner(BackendConfig config, std::shared_ptr<HttpTransport> transport = nullptr)
      : endpoint_(std::move(config), std::move(transport)) {}

  std::string caption(const ImageRef& image) const override {
    return detail::response_field<std::string>(endpoint_.call("/caption", caption_payload(image)), "caption");
  }

  JsonEndpoint& endpoint() { return endpoint_; }

 private:
  JsonEndpoint endpoint_;
};

class HttpDialogueModel final : public DialogueModel {
 public:
  explicit HttpDialogueModel(BackendConfig config, std::shared_ptr<HttpTransport> transport = nullptr)
      : endpoint_(std::move(config), std::move(transport)) {}

  std::string generate(std::string_view prompt, std::string_view speaker) const override {
    require_tags(prompt);
    auto text = detail::trim(
        detail::response_field<std::string>(endpoint_.call("/chat", chat_payload(prompt, speaker)), "text"));
    if (text.empty()) throw EmptyCompletionError();
    return text;
  }

  JsonEndpoint& endpoint() { return endpoint_; }

 private:
  JsonEndpoint endpoint_;
};

class HttpSpeechSynthesizer final : public SpeechSynthesizer {
 public:
  explicit HttpSpeechSynthesizer(BackendConfig config, std::shared_ptr<HttpTransport> transport = nullptr)
      : endpoint_(std::move(config), std::move(transport)) {}

  AudioClip render(const SpeechRequest& req) const override {
    if (req.reference_clips.empty())
      throw MissingReferenceError("no reference clip for speaker " + req.speaker);
    const auto res = endpoint_.call("/speech", speech_payload(req));
    const auto b64 = detail::response_field<std::string>(res, "audio_b64");
    const auto rate = detail::response_field<std::uint32_t>(res, "sample_rate");
    AudioClip clip;
    try {
      clip = read_wav(base64_decode(b64));
    } catch (const Error& e) {
      throw BackendError(200, std::string("undecodable speech audio: ") + e.what());
    }
    if (clip.sample_rate_hz != rate)
      throw BackendError(200, "sample_rate " + std::to_string(rate) + " disagrees with WAV header " +
                                  std::to_string(clip.sample_rate_hz));
    return clip;
  }

  bool needs_references() const override { return true; }

  JsonEndpoint& endpoint() { return endpoint_; }

 private:
  JsonEndpoint endpoint_;
};

class HttpEmbedder final : public Embedder {
 public:
  explicit HttpEmbedder(BackendConfig config, std::shared_ptr<HttpTransport> transport = nullptr)
      : endpoint_(std::move(config), std::move(transport)) {}

  EmbeddingVector embed(const EmbedPayload& payload, EmbedKind kind) const override {
    auto values = detail::response_field<std::vector<double>>(endpoint_.call("/embed", embed_payload(payload, kind)),
                                                              "vector");
    if (values.empty()) throw BackendError(200, "empty embedding vector");
    detail::check_dimension(endpoint_.config(), values.size());
    try {
      return EmbeddingVector::unit(std::move(values));
    } catch (const DimensionError&) {
      throw BackendError(200, "zero or non-finite embedding vector");
    }
  }

  JsonEndpoint& endpoint() { return endpoint_; }

 private:
  JsonEndpoint endpoint_;
};

// ---------------------------------------------------------------------------
// Factories and one-shot calls

inline std::unique_ptr<Captioner> make_captioner(const BackendConfig& c) {
  c.validate();
  if (c.mode == BackendMode::Mock) return std::make_unique<MockCaptioner>();
  return std::make_unique<HttpCaptioner>(c);
}

inline std::unique_ptr<DialogueModel> make_dialogue_model(const BackendConfig& c) {
  c.validate();
  if (c.mode == BackendMode::Mock) return std::make_unique<MockDialogueModel>();
  return std::make_unique<HttpDialogueModel>(c);
}

inline std::unique_ptr<SpeechSynthesizer> make_speech_synthesizer(const BackendConfig& c,
                                                                  const StorySpec* spec = nullptr) {
  c.validate();
  if (c.mode == BackendMode::Mock)
    return spec ? std::make_unique<MockSpeechSynthesizer>(*spec) : std::make_unique<MockSpeechSynthesizer>();
  return std::make_unique<HttpSpeechSynthesizer>(c);
}

inline std::unique_ptr<Embedder> make_embedder(const BackendConfig& c) {
  c.validate();
  if (c.mode == BackendMode::Mock) return std::make_unique<MockEmbedder>(c);
  return std::make_unique<HttpEmbedder>(c);
}

inline std::string caption_scene(const BackendConfig& config, const ImageRef& image) {
  return make_captioner(config)->caption(image);
}

inline std::string generate_dialogue(const BackendConfig& config, std::string_view prompt, std::string_view speaker) {
  return make_dialogue_model(config)->generate(prompt, speaker);
}

inline AudioClip render_speech(const BackendConfig& config, const SpeechRequest& req, const StorySpec* spec = nullptr) {
  return make_speech_synthesizer(config, spec)->render(req);
}

inline EmbeddingVector embed(const BackendConfig& config, const EmbedPayload& payload, EmbedKind kind) {
  return make_embedder(config)->embed(payload, kind);
}

/// Per-role configuration, as read from the "backends" file.
struct BackendsConfig {
  BackendConfig caption;
  BackendConfig dialogue;
  BackendConfig speech;
  BackendConfig embed;

  void force_mock() {
    for (auto* c : {&caption, &dialogue, &speech, &embed}) c->mode = BackendMode::Mock;
  }
};

inline BackendsConfig backends_config_from_json(const nlohmann::json& j) {
  BackendsConfig c;
  if (!j.is_object()) throw SchemaError("backends");
  if (j.contains("caption")) c.caption = backend_config_from_json(j["caption"]);
  if (j.contains("dialogue")) c.dialogue = backend_config_from_json(j["dialogue"]);
  if (j.contains("speech")) c.speech = backend_config_from_json(j["speech"]);
  if (j.contains("embed")) c.embed = backend_config_from_json(j["embed"]);
  return c;
}

/// The four clients a story run needs, shared and immutable.
struct Backends {
  std::shared_ptr<const Captioner> captioner;
  std::shared_ptr<const DialogueModel> dialogue;
  std::shared_ptr<const SpeechSynthesizer> speech;
  std::shared_ptr<const Embedder> embedder;

  static Backends from_config(const BackendsConfig& c, const StorySpec& spec) {
    return {make_captioner(c.caption), make_dialogue_model(c.dialogue), make_speech_synthesizer(c.speech, &spec),
            make_embedder(c.embed)};
  }

  static Backends mock(const StorySpec& spec) {
    BackendsConfig c;
    c.force_mock();
    return from_config(c, spec);
  }
};

}  // namespace storyweave
