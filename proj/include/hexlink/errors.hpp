#pragma once

#include <stdexcept>
#include <string>

namespace hexlink {

// Input or configuration rejected before any numeric work. The CLI maps these
// to exit code 2.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite value produced by a forward pass or a loss. Exit code 3.
class NumericGuardError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define HEXLINK_DEFINE_ERROR(Name)                 \
  class Name : public ValidationError {            \
   public:                                         \
    using ValidationError::ValidationError;        \
  };

HEXLINK_DEFINE_ERROR(CoordinateError)
HEXLINK_DEFINE_ERROR(OutOfWindowError)
HEXLINK_DEFINE_ERROR(IoError)
HEXLINK_DEFINE_ERROR(SchemaError)
HEXLINK_DEFINE_ERROR(DataQualityError)
HEXLINK_DEFINE_ERROR(EmptyTrajectoryError)
HEXLINK_DEFINE_ERROR(EmptyCorpusError)
HEXLINK_DEFINE_ERROR(ShapeError)
HEXLINK_DEFINE_ERROR(VocabError)
HEXLINK_DEFINE_ERROR(ChannelError)
HEXLINK_DEFINE_ERROR(LabelError)
HEXLINK_DEFINE_ERROR(SpecError)
HEXLINK_DEFINE_ERROR(ConfigError)

#undef HEXLINK_DEFINE_ERROR

}  // namespace hexlink
