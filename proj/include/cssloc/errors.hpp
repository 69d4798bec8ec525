#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace cssloc {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

// Images of different reference points were mixed where one RP is required.
class PairingError : public Error {
 public:
  using Error::Error;
};

// Corpus cannot supply positive pairs (an RP with fewer than two images).
class CorpusError : public Error {
 public:
  using Error::Error;
};

class DegenerateVectorError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Training loss became non-finite.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, std::int64_t iteration)
      : Error(what), iteration_(iteration) {}
  std::int64_t iteration() const { return iteration_; }

 private:
  std::int64_t iteration_;
};

// File-format rejection; offset is the byte position where validation failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : Error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
  std::uint64_t offset() const { return offset_; }

 private:
  std::uint64_t offset_;
};

class ChecksumError : public FormatError {
 public:
  using FormatError::FormatError;
};

class ArchitectureMismatch : public FormatError {
 public:
  using FormatError::FormatError;
};

}  // namespace cssloc
