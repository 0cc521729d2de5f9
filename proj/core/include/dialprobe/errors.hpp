#pragma once

#include <stdexcept>
#include <string>

namespace dialprobe {

// Bad user-supplied configuration (caps, dims, unknown keys, ...).
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed input files (raw corpora, annotation files, label files).
class ParseError : public std::runtime_error {
 public:
  explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

// Line-oriented format violations; carries the offending line number.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& msg, std::size_t line)
      : std::runtime_error(msg + " (line " + std::to_string(line) + ")"), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// Incompatible tensor shapes; message names the op and the shapes.
class DimensionError : public std::runtime_error {
 public:
  explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};

// Out-of-range indices into vocabularies / logits.
class IndexError : public std::runtime_error {
 public:
  explicit IndexError(const std::string& msg) : std::runtime_error(msg) {}
};

// API misuse (backward before forward, evaluating an untrained classifier, ...).
class StateError : public std::runtime_error {
 public:
  explicit StateError(const std::string& msg) : std::runtime_error(msg) {}
};

// Artifacts that do not fit together (cache dim vs checkpoint dim, bad magic).
class IntegrityError : public std::runtime_error {
 public:
  explicit IntegrityError(const std::string& msg) : std::runtime_error(msg) {}
};

// A pipeline stage ran before its inputs exist; names the producing command.
class MissingArtifactError : public std::runtime_error {
 public:
  MissingArtifactError(const std::string& path, const std::string& producer)
      : std::runtime_error("missing input artifact " + path + "; run `dialprobe " + producer +
                           "` first"),
        path_(path),
        producer_(producer) {}
  const std::string& path() const { return path_; }
  const std::string& producer() const { return producer_; }

 private:
  std::string path_;
  std::string producer_;
};

}  // namespace dialprobe
