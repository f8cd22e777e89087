#pragma once

#include <stdexcept>
#include <string>

namespace facecue {

// Base of every error the toolkit raises. `kind()` is the stable error name
// used in CLI messages and tests.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(kind + ": " + what), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define FACECUE_DEFINE_ERROR(Name)                                   \
  class Name : public Error {                                        \
   public:                                                           \
    explicit Name(const std::string& what) : Error(#Name, what) {}   \
  }

// mesh_io
FACECUE_DEFINE_ERROR(ParseError);
FACECUE_DEFINE_ERROR(InvariantError);
FACECUE_DEFINE_ERROR(IoError);
FACECUE_DEFINE_ERROR(DuplicateScanError);
FACECUE_DEFINE_ERROR(UnknownLabelError);
FACECUE_DEFINE_ERROR(CountError);

// preprocess / curves
FACECUE_DEFINE_ERROR(UnsupportedTopology);
FACECUE_DEFINE_ERROR(EmptyMesh);
FACECUE_DEFINE_ERROR(EmptyResult);
FACECUE_DEFINE_ERROR(DegenerateConfiguration);
FACECUE_DEFINE_ERROR(AllInvalidCurve);

// features
FACECUE_DEFINE_ERROR(SubjectMismatch);
FACECUE_DEFINE_ERROR(KindMismatch);

// learn / eval
FACECUE_DEFINE_ERROR(SingleClassError);
FACECUE_DEFINE_ERROR(DimensionMismatch);
FACECUE_DEFINE_ERROR(SingleClassFold);
FACECUE_DEFINE_ERROR(EmptyGroup);

// stats
FACECUE_DEFINE_ERROR(DegenerateVariance);
FACECUE_DEFINE_ERROR(TooFewSamples);
FACECUE_DEFINE_ERROR(DegenerateData);

// report
FACECUE_DEFINE_ERROR(NonFiniteInput);
FACECUE_DEFINE_ERROR(UnknownAlpha);

// cli
FACECUE_DEFINE_ERROR(ConfigError);

#undef FACECUE_DEFINE_ERROR

}  // namespace facecue
