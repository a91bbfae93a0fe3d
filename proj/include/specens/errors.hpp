#pragma once

#include <stdexcept>
#include <string>

namespace specens {

enum class ErrorCode {
  kOk = 0,
  kInvalidArgument,
  kZeroMass,
  kVocabMismatch,
  kWeight,
  kTokenOutOfRange,
  kFormat,
  kInvariant,
  kConfig,
  kEmptyStream,
  kBudgetExceeded,
  kInsufficientSamples,
  kIo,
  kInternal,
};

const char* error_code_name(ErrorCode code);

// Base of every error the engine raises. The C API maps code() onto its
// status enum one-to-one.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

#define SPECENS_DEFINE_ERROR(Name, Code)                                   \
  class Name : public Error {                                              \
   public:                                                                 \
    explicit Name(const std::string& what) : Error(ErrorCode::Code, what) {} \
  };

SPECENS_DEFINE_ERROR(InvalidArgument, kInvalidArgument)
SPECENS_DEFINE_ERROR(ZeroMassError, kZeroMass)
SPECENS_DEFINE_ERROR(VocabMismatchError, kVocabMismatch)
SPECENS_DEFINE_ERROR(WeightError, kWeight)
SPECENS_DEFINE_ERROR(TokenOutOfRange, kTokenOutOfRange)
SPECENS_DEFINE_ERROR(FormatError, kFormat)
SPECENS_DEFINE_ERROR(InvariantError, kInvariant)
SPECENS_DEFINE_ERROR(ConfigError, kConfig)
SPECENS_DEFINE_ERROR(EmptyStream, kEmptyStream)
SPECENS_DEFINE_ERROR(BudgetExceeded, kBudgetExceeded)
SPECENS_DEFINE_ERROR(InsufficientSamples, kInsufficientSamples)
SPECENS_DEFINE_ERROR(IoError, kIo)
SPECENS_DEFINE_ERROR(InternalError, kInternal)

#undef SPECENS_DEFINE_ERROR

}  // namespace specens
