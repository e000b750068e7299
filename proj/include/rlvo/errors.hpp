#pragma once

#include <stdexcept>
#include <string>

namespace rlvo {

// Base of every error raised by the library. Callers that only care about
// "something in rlvo failed" catch this.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define RLVO_DEFINE_ERROR(Name, Base)        \
  class Name : public Base {                 \
   public:                                   \
    using Base::Base;                        \
  }

// geometry / metrics
RLVO_DEFINE_ERROR(DegenerateInput, Error);
RLVO_DEFINE_ERROR(InvalidTrajectory, Error);
RLVO_DEFINE_ERROR(NoAssociation, Error);
RLVO_DEFINE_ERROR(NoWindows, Error);
RLVO_DEFINE_ERROR(ZeroLength, Error);
RLVO_DEFINE_ERROR(LengthMismatch, Error);

// reward
RLVO_DEFINE_ERROR(DegenerateWindow, Error);

// environment
RLVO_DEFINE_ERROR(InvalidConfig, Error);
RLVO_DEFINE_ERROR(SteppedAfterDone, Error);

// network / autodiff
RLVO_DEFINE_ERROR(MalformedKeypoints, Error);
RLVO_DEFINE_ERROR(IndexOutOfRange, Error);
RLVO_DEFINE_ERROR(UnsupportedPrimitive, Error);

// ppo
RLVO_DEFINE_ERROR(EmptyBuffer, Error);
RLVO_DEFINE_ERROR(NoValidStates, Error);
RLVO_DEFINE_ERROR(NonFiniteLoss, Error);

// io
RLVO_DEFINE_ERROR(ParseError, Error);
RLVO_DEFINE_ERROR(CheckpointError, Error);

#undef RLVO_DEFINE_ERROR

}  // namespace rlvo
