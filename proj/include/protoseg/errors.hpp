#pragma once

#include <stdexcept>
#include <string>

namespace protoseg {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define PROTOSEG_DEFINE_ERROR(Name)   \
  class Name : public Error {         \
   public:                            \
    using Error::Error;               \
  };

PROTOSEG_DEFINE_ERROR(ShapeError)
PROTOSEG_DEFINE_ERROR(NonFiniteError)
PROTOSEG_DEFINE_ERROR(DivisibilityError)
PROTOSEG_DEFINE_ERROR(PlacementError)
PROTOSEG_DEFINE_ERROR(FormatError)
PROTOSEG_DEFINE_ERROR(IoError)
PROTOSEG_DEFINE_ERROR(InsufficientDataError)
PROTOSEG_DEFINE_ERROR(DegenerateError)
PROTOSEG_DEFINE_ERROR(EmptyMaskError)
PROTOSEG_DEFINE_ERROR(DegeneratePrototypeError)

#undef PROTOSEG_DEFINE_ERROR

}  // namespace protoseg
