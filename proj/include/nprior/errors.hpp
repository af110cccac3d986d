#pragma once

#include <stdexcept>
#include <string>

namespace nprior {

// Base class for all toolkit errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// ---- I/O and data errors -------------------------------------------------

class IoError : public Error {
 public:
  using Error::Error;
};

class FileNotFoundError : public IoError {
 public:
  using IoError::IoError;
};

class UnsupportedFormatError : public IoError {
 public:
  using IoError::IoError;
};

// Container samples exceed 2^B - 1 for the declared bit depth B.
class BitDepthMismatchError : public IoError {
 public:
  using IoError::IoError;
};

class DataEmptyError : public Error {
 public:
  using Error::Error;
};

// ---- Contract violations ---------------------------------------------------

class PatchTooLargeError : public Error {
 public:
  using Error::Error;
};

class EmptyPatchError : public Error {
 public:
  using Error::Error;
};

class ImageTooSmallError : public Error {
 public:
  using Error::Error;
};

class InvalidSpecError : public Error {
 public:
  using Error::Error;
};

class ShapeMismatchError : public Error {
 public:
  using Error::Error;
};

class NotDivisibleError : public Error {
 public:
  using Error::Error;
};

class ZeroTruthError : public Error {
 public:
  using Error::Error;
};

// ---- Numeric failures ------------------------------------------------------

// The [L, 1] design matrix has rank < 2: no luminance spread to fit a line.
class RankDeficientError : public Error {
 public:
  using Error::Error;
};

class TooFewPatchesError : public Error {
 public:
  using Error::Error;
};

// ---- Autodiff misuse -------------------------------------------------------

class NotScalarError : public Error {
 public:
  using Error::Error;
};

class UntrackedGraphError : public Error {
 public:
  using Error::Error;
};

}  // namespace nprior
