#pragma once

#include <stdexcept>
#include <string>

namespace higen {

// Base class for all errors raised by the toolkit. Each concrete type maps to
// one failure mode so callers can catch selectively; the CLI maps UsageError
// to exit code 1 and everything else to exit code 2.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

#define HIGEN_DEFINE_ERROR(Name)                                \
  struct Name : Error {                                         \
    explicit Name(const std::string& msg) : Error(msg) {}       \
  }

HIGEN_DEFINE_ERROR(CycleDetected);
HIGEN_DEFINE_ERROR(UnreachableNode);
HIGEN_DEFINE_ERROR(LevelInconsistency);
HIGEN_DEFINE_ERROR(NotAncestorClosed);
HIGEN_DEFINE_ERROR(EmptyLabelSet);
HIGEN_DEFINE_ERROR(ParseError);
HIGEN_DEFINE_ERROR(EmptyCorpus);
HIGEN_DEFINE_ERROR(UnknownSpecial);
HIGEN_DEFINE_ERROR(SequenceTooLong);
HIGEN_DEFINE_ERROR(VersionMismatch);
HIGEN_DEFINE_ERROR(CorruptFile);
HIGEN_DEFINE_ERROR(InvalidFractions);
HIGEN_DEFINE_ERROR(MultiPathUnsupported);
HIGEN_DEFINE_ERROR(DivergenceDetected);
HIGEN_DEFINE_ERROR(BatchTooSmallForSemanticLoss);
HIGEN_DEFINE_ERROR(NonFinite);
HIGEN_DEFINE_ERROR(EmptyRecords);
HIGEN_DEFINE_ERROR(UsageError);

#undef HIGEN_DEFINE_ERROR

}  // namespace higen
