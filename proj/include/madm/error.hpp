#pragma once

#include <stdexcept>
#include <string>

namespace madm {

/// Root of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes or dimensions disagree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A timestep, slice index or scalar parameter lies outside its valid range.
class RangeError : public Error {
 public:
  using Error::Error;
};

/// Malformed volume or weight file.
class FormatError : public Error {
 public:
  enum class Kind { kBadMagic, kTruncated, kSizeMismatch, kInvalid };

  FormatError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

/// Phantom placement could not be satisfied within the retry budget.
class GenerationError : public Error {
 public:
  using Error::Error;
};

/// Invalid run configuration. `path` is the JSON pointer of the offending field.
class ConfigError : public Error {
 public:
  ConfigError(std::string path, const std::string& message)
      : Error(path.empty() ? message : path + ": " + message), path_(std::move(path)) {}

  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

/// A pipeline stage needs an artifact that an earlier stage has not produced.
class DependencyError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf encountered in a loss or an intermediate volume.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// A manifest references a file whose content hash no longer matches.
class CorruptArtifact : public Error {
 public:
  using Error::Error;
};

/// A manifest references a file that does not exist.
class MissingReference : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace madm
