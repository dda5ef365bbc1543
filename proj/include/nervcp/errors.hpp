#pragma once

#include <stdexcept>
#include <string>

namespace nervcp {

// Base class for every error raised by the library. The CLI maps
// ValidationError subclasses to exit code 1 and everything else to 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

#define NERVCP_DEFINE_ERROR(Name, Base)   \
  class Name : public Base {              \
   public:                                \
    explicit Name(const std::string& msg) \
        : Base(#Name ": " + msg) {}       \
  };

// Input / configuration problems.
NERVCP_DEFINE_ERROR(UsageError, ValidationError)
NERVCP_DEFINE_ERROR(ConfigError, ValidationError)
NERVCP_DEFINE_ERROR(ConfigMismatch, ValidationError)
NERVCP_DEFINE_ERROR(InvalidCount, ValidationError)
NERVCP_DEFINE_ERROR(OutOfRangeTimestamp, ValidationError)
NERVCP_DEFINE_ERROR(ShapeMismatch, ValidationError)
NERVCP_DEFINE_ERROR(NonFiniteInput, ValidationError)
NERVCP_DEFINE_ERROR(ZeroPixels, ValidationError)
NERVCP_DEFINE_ERROR(DegenerateFrame, ValidationError)
NERVCP_DEFINE_ERROR(FrameTooSmall, ValidationError)
NERVCP_DEFINE_ERROR(MissingInput, ValidationError)

// Runtime failures.
NERVCP_DEFINE_ERROR(DecodeError, Error)
NERVCP_DEFINE_ERROR(DivergenceError, Error)
NERVCP_DEFINE_ERROR(FormatError, Error)
NERVCP_DEFINE_ERROR(FormatVersionError, Error)
NERVCP_DEFINE_ERROR(ChecksumError, Error)
NERVCP_DEFINE_ERROR(IoError, Error)

#undef NERVCP_DEFINE_ERROR

// Shape errors of the network layers are the same condition as a
// mismatched frame or key dimension.
using ShapeError = ShapeMismatch;

}  // namespace nervcp
