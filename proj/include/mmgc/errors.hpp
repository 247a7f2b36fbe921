#pragma once

#include <stdexcept>
#include <string>

namespace mmgc {

// Maps onto the CLI exit-code contract: usage=1, data=2, numeric=3.
enum class ErrorCategory { kUsage = 1, kData = 2, kNumeric = 3 };

class Error : public std::runtime_error {
 public:
  Error(const std::string& what, ErrorCategory category)
      : std::runtime_error(what), category_(category) {}

  ErrorCategory category() const noexcept { return category_; }
  int exit_code() const noexcept { return static_cast<int>(category_); }

 private:
  ErrorCategory category_;
};

#define MMGC_DEFINE_ERROR(Name, Category)                        \
  class Name : public Error {                                    \
   public:                                                       \
    explicit Name(const std::string& what)                       \
        : Error(std::string(#Name ": ") + what, Category) {}     \
  };

MMGC_DEFINE_ERROR(ShapeMismatch, ErrorCategory::kData)
MMGC_DEFINE_ERROR(IndexError, ErrorCategory::kData)
MMGC_DEFINE_ERROR(MaskError, ErrorCategory::kData)
MMGC_DEFINE_ERROR(GraphError, ErrorCategory::kData)
MMGC_DEFINE_ERROR(VariantMismatch, ErrorCategory::kData)
MMGC_DEFINE_ERROR(ConfigMismatch, ErrorCategory::kData)
MMGC_DEFINE_ERROR(EmptyCorpus, ErrorCategory::kData)
MMGC_DEFINE_ERROR(InvalidParams, ErrorCategory::kData)
MMGC_DEFINE_ERROR(TooFewSamples, ErrorCategory::kData)
MMGC_DEFINE_ERROR(IoError, ErrorCategory::kData)
MMGC_DEFINE_ERROR(FormatError, ErrorCategory::kData)
MMGC_DEFINE_ERROR(InvalidStep, ErrorCategory::kUsage)
MMGC_DEFINE_ERROR(ConfigError, ErrorCategory::kUsage)
MMGC_DEFINE_ERROR(NumericError, ErrorCategory::kNumeric)
MMGC_DEFINE_ERROR(DegenerateVector, ErrorCategory::kNumeric)

#undef MMGC_DEFINE_ERROR

}  // namespace mmgc
