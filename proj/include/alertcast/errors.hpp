#pragma once

#include <stdexcept>
#include <string>

namespace alertcast {

// Broad failure classes; the CLI maps each one to its own exit status.
enum class ErrorClass { Usage, Data, Numeric, Io };

class Error : public std::runtime_error {
 public:
  Error(ErrorClass cls, const std::string& what) : std::runtime_error(what), cls_(cls) {}
  ErrorClass error_class() const noexcept { return cls_; }

 private:
  ErrorClass cls_;
};

class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error(ErrorClass::Data, "line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class VocabularyError : public Error {
 public:
  explicit VocabularyError(const std::string& what) : Error(ErrorClass::Data, what) {}
};

class SplitError : public Error {
 public:
  explicit SplitError(const std::string& what) : Error(ErrorClass::Data, what) {}
};

class MappingError : public Error {
 public:
  explicit MappingError(const std::string& what) : Error(ErrorClass::Data, what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorClass::Usage, what) {}
};

// Violated precondition on an API call (empty context, unseeded session, ...).
class ContractError : public Error {
 public:
  explicit ContractError(const std::string& what) : Error(ErrorClass::Usage, what) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(ErrorClass::Numeric, what) {}
};

class TrainingError : public Error {
 public:
  // Divergence is numeric; an unusable training set is a data error.
  TrainingError(const std::string& what, std::size_t epoch, std::size_t batch, ErrorClass cls = ErrorClass::Numeric)
      : Error(cls, what + " (epoch " + std::to_string(epoch) + ", batch " +
                                       std::to_string(batch) + ")"),
        epoch_(epoch),
        batch_(batch) {}
  std::size_t epoch() const noexcept { return epoch_; }
  std::size_t batch() const noexcept { return batch_; }

 private:
  std::size_t epoch_;
  std::size_t batch_;
};

enum class ModelFileFault { BadMagic, Version, Truncated, Checksum, Malformed };

class ModelFileError : public Error {
 public:
  ModelFileError(ModelFileFault fault, const std::string& what)
      : Error(ErrorClass::Data, what), fault_(fault) {}
  ModelFileFault fault() const noexcept { return fault_; }

 private:
  ModelFileFault fault_;
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorClass::Io, what) {}
};

}  // namespace alertcast
