#pragma once

#include <stdexcept>
#include <string>

namespace lgsim {

// Base for all library errors. `kind()` is a stable machine-readable tag used
// by the CLI when it prints error lines.
class Error : public std::runtime_error {
public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

private:
  std::string kind_;
};

#define LGSIM_DEFINE_ERROR(Name)                                            \
  class Name : public Error {                                               \
  public:                                                                   \
    explicit Name(const std::string& what) : Error(#Name, what) {}          \
  };

// geometry
LGSIM_DEFINE_ERROR(BehindCamera)
LGSIM_DEFINE_ERROR(NonPositiveDepth)
LGSIM_DEFINE_ERROR(InvalidArgument)
// sampling
LGSIM_DEFINE_ERROR(EmptyGuide)
LGSIM_DEFINE_ERROR(DegenerateGuide)
LGSIM_DEFINE_ERROR(EmptySampledSet)
LGSIM_DEFINE_ERROR(TooFewPoints)
// dataset_io
LGSIM_DEFINE_ERROR(MalformedFile)
LGSIM_DEFINE_ERROR(MalformedLine)
LGSIM_DEFINE_ERROR(IoFailure)
LGSIM_DEFINE_ERROR(EmptyManifest)
LGSIM_DEFINE_ERROR(MissingInput)
// da_core
LGSIM_DEFINE_ERROR(ShapeMismatch)
LGSIM_DEFINE_ERROR(EmptyBatch)
LGSIM_DEFINE_ERROR(NonFiniteLoss)
// eval
LGSIM_DEFINE_ERROR(BadThresholds)
LGSIM_DEFINE_ERROR(FrameMismatch)

#undef LGSIM_DEFINE_ERROR

// Configuration errors carry the 1-based source line they refer to (0 when
// unknown).
class ConfigError : public Error {
public:
  ConfigError(std::string file, int line, const std::string& what)
      : Error("ConfigError", file + ":" + std::to_string(line) + ": " + what),
        file_(std::move(file)), line_(line) {}
  const std::string& file() const noexcept { return file_; }
  int line() const noexcept { return line_; }

private:
  std::string file_;
  int line_;
};

}  // namespace lgsim
