#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace kerl {

/// Base for every error raised by the library. The CLI maps the category to
/// its exit code.
class Error : public std::runtime_error {
 public:
  enum class Category { Data, Numeric, Usage };

  Error(Category category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  Category category() const noexcept { return category_; }

 private:
  Category category_;
};

class MalformedRecord : public Error {
 public:
  MalformedRecord(std::string source, std::size_t line, const std::string& detail)
      : Error(Category::Data, source + ":" + std::to_string(line) + ": malformed record: " + detail),
        line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class DanglingReference : public Error {
 public:
  explicit DanglingReference(std::int64_t id, const std::string& context = "")
      : Error(Category::Data, "dangling reference to id " + std::to_string(id) +
                                  (context.empty() ? "" : " (" + context + ")")),
        id_(id) {}
  DanglingReference(const std::string& name, const std::string& context)
      : Error(Category::Data, "dangling reference to '" + name + "' (" + context + ")"), id_(-1) {}
  std::int64_t id() const noexcept { return id_; }

 private:
  std::int64_t id_;
};

class EmptyGraph : public Error {
 public:
  EmptyGraph() : Error(Category::Data, "knowledge graph has no entities") {}
};

class ExhaustedCandidates : public Error {
 public:
  explicit ExhaustedCandidates(const std::string& what) : Error(Category::Numeric, what) {}
};

class ShapeMismatch : public Error {
 public:
  explicit ShapeMismatch(const std::string& what) : Error(Category::Usage, "shape mismatch: " + what) {}
};

class EmptySequence : public Error {
 public:
  EmptySequence() : Error(Category::Usage, "attention pooling over an empty sequence") {}
};

class SequenceTooLong : public Error {
 public:
  SequenceTooLong(std::size_t length, std::size_t cap)
      : Error(Category::Usage, "entity sequence of length " + std::to_string(length) +
                                   " exceeds positional capacity " + std::to_string(cap)) {}
};

class EmptyContext : public Error {
 public:
  EmptyContext() : Error(Category::Usage, "history encoder needs at least one utterance") {}
};

class DegenerateVector : public Error {
 public:
  explicit DegenerateVector(std::size_t row)
      : Error(Category::Numeric, "row " + std::to_string(row) + " has near-zero norm") {}
};

class TargetNotInCatalog : public Error {
 public:
  explicit TargetNotInCatalog(std::int64_t id)
      : Error(Category::Data, "target " + std::to_string(id) + " is not a catalog item") {}
};

class EmptyResponse : public Error {
 public:
  EmptyResponse() : Error(Category::Data, "response has no tokens") {}
};

class NonFiniteLoss : public Error {
 public:
  explicit NonFiniteLoss(const std::string& where) : Error(Category::Numeric, "non-finite loss in " + where) {}
};

class CheckpointError : public Error {
 public:
  explicit CheckpointError(const std::string& detail)
      : Error(Category::Data, "checkpoint manifest mismatch: " + detail) {}
};

class StageError : public Error {
 public:
  explicit StageError(const std::string& what) : Error(Category::Usage, what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(Category::Usage, what) {}
};

class NoExamples : public Error {
 public:
  explicit NoExamples(const std::string& what) : Error(Category::Data, "no usable examples: " + what) {}
};

}  // namespace kerl
