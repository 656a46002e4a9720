#pragma once

#include <stdexcept>
#include <string>

namespace cgsur {

/// Failures caused by malformed input (sizes, dimensions, grids). Maps to the
/// CLI's configuration exit code.
class input_error : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Failures of a numerical procedure on otherwise valid input. Maps to the
/// CLI's numerical-failure exit code.
class numerical_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define CGSUR_DEFINE_ERROR(Name, Base)                   \
  class Name : public Base {                              \
   public:                                                \
    explicit Name(const std::string& what) : Base(what) {} \
  };

CGSUR_DEFINE_ERROR(InvalidSize, input_error)
CGSUR_DEFINE_ERROR(DimensionMismatch, input_error)
CGSUR_DEFINE_ERROR(GridMismatch, input_error)
CGSUR_DEFINE_ERROR(NonPositiveConductivity, input_error)
CGSUR_DEFINE_ERROR(NonPositiveInput, input_error)
CGSUR_DEFINE_ERROR(NonPositiveVariance, input_error)
CGSUR_DEFINE_ERROR(DegenerateValidation, input_error)
CGSUR_DEFINE_ERROR(ConfigError, input_error)
CGSUR_DEFINE_ERROR(TapeConsumed, std::logic_error)
CGSUR_DEFINE_ERROR(IoError, std::runtime_error)

CGSUR_DEFINE_ERROR(FactorizationError, numerical_error)
CGSUR_DEFINE_ERROR(SingularSystem, numerical_error)
CGSUR_DEFINE_ERROR(IllConditioned, numerical_error)
CGSUR_DEFINE_ERROR(Divergence, numerical_error)
CGSUR_DEFINE_ERROR(NonFiniteLoss, numerical_error)

#undef CGSUR_DEFINE_ERROR

}  // namespace cgsur
