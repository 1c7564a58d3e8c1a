#pragma once

#include <stdexcept>
#include <string>

namespace topicforge {

enum class Errc {
  EmptyInput,
  RecordError,
  EmptyCorpus,
  SplitError,
  SpecError,
  ConfigError,
  StateCorruption,
  OovError,
  ModelError,
  Intractable,
  DegenerateVector,
  UnseenProduct,
  DegenerateTopic,
  UndefinedMetric,
  DegenerateTrace,
  EmptyModel,
  IoError,
  FormatError,
};

inline const char* errc_name(Errc c) {
  switch (c) {
    case Errc::EmptyInput: return "EmptyInput";
    case Errc::RecordError: return "RecordError";
    case Errc::EmptyCorpus: return "EmptyCorpus";
    case Errc::SplitError: return "SplitError";
    case Errc::SpecError: return "SpecError";
    case Errc::ConfigError: return "ConfigError";
    case Errc::StateCorruption: return "StateCorruption";
    case Errc::OovError: return "OovError";
    case Errc::ModelError: return "ModelError";
    case Errc::Intractable: return "Intractable";
    case Errc::DegenerateVector: return "DegenerateVector";
    case Errc::UnseenProduct: return "UnseenProduct";
    case Errc::DegenerateTopic: return "DegenerateTopic";
    case Errc::UndefinedMetric: return "UndefinedMetric";
    case Errc::DegenerateTrace: return "DegenerateTrace";
    case Errc::EmptyModel: return "EmptyModel";
    case Errc::IoError: return "IoError";
    case Errc::FormatError: return "FormatError";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(std::string(errc_name(code)) + ": " + message), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& message) {
  throw Error(code, message);
}

inline void require(bool condition, Errc code, const std::string& message) {
  if (!condition) fail(code, message);
}

}  // namespace topicforge
