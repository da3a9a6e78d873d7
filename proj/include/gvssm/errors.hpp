#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace gvssm {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not conform.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration or precondition on user-supplied settings.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed file content. `offset()` is the byte position where parsing failed.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// Finite-difference probe evaluated to a non-finite loss.
class ProbeError : public Error {
 public:
  ProbeError(const std::string& what, std::size_t coordinate)
      : Error(what), coordinate_(coordinate) {}
  std::size_t coordinate() const noexcept { return coordinate_; }

 private:
  std::size_t coordinate_;
};

/// Distribution head holds non-finite parameters.
class HeadError : public Error {
 public:
  HeadError(const std::string& what, std::size_t node) : Error(what), node_(node) {}
  std::size_t node() const noexcept { return node_; }

 private:
  std::size_t node_;
};

/// Non-finite loss during training.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, int epoch, int batch)
      : Error(what), epoch_(epoch), batch_(batch) {}
  int epoch() const noexcept { return epoch_; }
  int batch() const noexcept { return batch_; }

 private:
  int epoch_;
  int batch_;
};

/// Compositions disagree on their support.
class SupportError : public Error {
 public:
  SupportError(const std::string& what, std::size_t pixel) : Error(what), pixel_(pixel) {}
  std::size_t pixel() const noexcept { return pixel_; }

 private:
  std::size_t pixel_;
};

/// A module was requested before the modules it depends on were trained.
class PrerequisiteError : public Error {
 public:
  using Error::Error;
};

/// Ratio against a zero baseline.
class UndefinedRatioError : public Error {
 public:
  using Error::Error;
};

}  // namespace gvssm
