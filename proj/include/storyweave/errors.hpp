#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

namespace storyweave {

/// Root of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// story-model

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line, std::size_t column)
      : Error("parse error at line " + std::to_string(line) + ", column " +
              std::to_string(column) + ": " + what),
        line_(line),
        column_(column) {}

  std::size_t line() const noexcept { return line_; }
  std::size_t column() const noexcept { return column_; }

 private:
  std::size_t line_;
  std::size_t column_;
};

class SchemaError : public Error {
 public:
  explicit SchemaError(std::string field)
      : Error("missing or mistyped field: " + field), field_(std::move(field)) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class RangeError : public Error {
 public:
  using Error::Error;
};

// narrative-bank

class EmptyPromptError : public Error {
 public:
  using Error::Error;
};

class OrderingError : public Error {
 public:
  using Error::Error;
};

// media-io

class EmptyVideoError : public Error {
 public:
  EmptyVideoError() : Error("frame sequence is empty") {}
};

class UnsupportedFormatError : public Error {
 public:
  using Error::Error;
};

class CorruptFileError : public Error {
 public:
  using Error::Error;
};

class FileError : public Error {
 public:
  FileError(const std::string& what, std::string path)
      : Error(what + ": " + path), path_(std::move(path)) {}

  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

// backends

class BackendUnavailable : public Error {
 public:
  using Error::Error;
};

class BackendError : public Error {
 public:
  BackendError(int status, std::string body_excerpt)
      : Error("backend returned status " + std::to_string(status) + ": " + body_excerpt),
        status_(status),
        body_excerpt_(std::move(body_excerpt)) {}

  int status() const noexcept { return status_; }
  const std::string& body_excerpt() const noexcept { return body_excerpt_; }

 private:
  int status_;
  std::string body_excerpt_;
};

class MalformedPromptError : public Error {
 public:
  using Error::Error;
};

class EmptyCompletionError : public Error {
 public:
  EmptyCompletionError() : Error("dialogue backend returned an empty completion") {}
};

class MissingReferenceError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

// evaluation

class EmptyInputError : public Error {
 public:
  using Error::Error;
};

class TooShortError : public Error {
 public:
  using Error::Error;
};

class NoVoicedFramesError : public Error {
 public:
  NoVoicedFramesError() : Error("no voiced frames in pitch contour") {}
};

class EvaluationFailed : public Error {
 public:
  using Error::Error;
};

// pipeline

/// A backend or persistence failure inside one scene step.
class SceneStepError : public Error {
 public:
  SceneStepError(std::size_t scene_index, const std::string& cause)
      : Error("scene " + std::to_string(scene_index) + ": " + cause), scene_index_(scene_index) {}

  std::size_t scene_index() const noexcept { return scene_index_; }

 private:
  std::size_t scene_index_;
};

class StoryAborted : public Error {
 public:
  StoryAborted(std::optional<std::size_t> last_committed, const std::string& cause)
      : Error("story aborted (last committed scene: " +
              (last_committed ? std::to_string(*last_committed) : std::string("none")) +
              "): " + cause),
        last_committed_(last_committed) {}

  /// Index of the last scene whose artifacts were fully persisted.
  std::optional<std::size_t> last_committed_scene() const noexcept { return last_committed_; }

 private:
  std::optional<std::size_t> last_committed_;
};

}  // namespace storyweave
