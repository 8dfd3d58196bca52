#pragma once

#include <stdexcept>
#include <string>

namespace loopflow {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define LOOPFLOW_DEFINE_ERROR(Name)          \
  class Name : public Error {                \
   public:                                   \
    using Error::Error;                      \
  }

// so3
LOOPFLOW_DEFINE_ERROR(AngleAtPi);
LOOPFLOW_DEFINE_ERROR(TimeTooClose);
LOOPFLOW_DEFINE_ERROR(InvalidRotation);

// frames
LOOPFLOW_DEFINE_ERROR(CollinearAtoms);
LOOPFLOW_DEFINE_ERROR(InvalidChain);

// energy
LOOPFLOW_DEFINE_ERROR(CoincidentAtoms);

// flow matching
LOOPFLOW_DEFINE_ERROR(LengthMismatch);
LOOPFLOW_DEFINE_ERROR(MaskDegenerate);

// model
LOOPFLOW_DEFINE_ERROR(ShapeMismatch);
LOOPFLOW_DEFINE_ERROR(NotCached);
LOOPFLOW_DEFINE_ERROR(CheckpointError);

// structure io
LOOPFLOW_DEFINE_ERROR(MissingBackboneAtom);
LOOPFLOW_DEFINE_ERROR(MalformedRecord);
LOOPFLOW_DEFINE_ERROR(EmptyInput);
LOOPFLOW_DEFINE_ERROR(SelectionMismatch);
LOOPFLOW_DEFINE_ERROR(ConfigError);

#undef LOOPFLOW_DEFINE_ERROR

}  // namespace loopflow
