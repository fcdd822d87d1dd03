#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mgrgcl {

enum class Errc {
  ZeroVector,
  DimensionMismatch,
  ShapeMismatch,
  IoError,
  BadMagic,
  CorruptHeader,
  InvalidConfig,
  InvalidManifest,
  TooManyParts,
  StaleCache,
  DegenerateBatch,
  LabelOutOfRange,
  BadIndex,
  NonPositiveTemperature,
  EmptyInput,
  LengthMismatch,
  EmptyGroup,
  NotEnoughIdentities,
  NoValidQueries,
  AllNoise,
};

inline std::string_view errc_name(Errc code) {
  switch (code) {
    case Errc::ZeroVector: return "ZeroVector";
    case Errc::DimensionMismatch: return "DimensionMismatch";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::IoError: return "IoError";
    case Errc::BadMagic: return "BadMagic";
    case Errc::CorruptHeader: return "CorruptHeader";
    case Errc::InvalidConfig: return "InvalidConfig";
    case Errc::InvalidManifest: return "InvalidManifest";
    case Errc::TooManyParts: return "TooManyParts";
    case Errc::StaleCache: return "StaleCache";
    case Errc::DegenerateBatch: return "DegenerateBatch";
    case Errc::LabelOutOfRange: return "LabelOutOfRange";
    case Errc::BadIndex: return "BadIndex";
    case Errc::NonPositiveTemperature: return "NonPositiveTemperature";
    case Errc::EmptyInput: return "EmptyInput";
    case Errc::LengthMismatch: return "LengthMismatch";
    case Errc::EmptyGroup: return "EmptyGroup";
    case Errc::NotEnoughIdentities: return "NotEnoughIdentities";
    case Errc::NoValidQueries: return "NoValidQueries";
    case Errc::AllNoise: return "AllNoise";
  }
  return "Unknown";
}

/// Every failure in the library surfaces as this exception; `code()` lets
/// callers (and tests) dispatch on the kind without parsing the message.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(std::string(errc_name(code)) + ": " + message), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& message) { throw Error(code, message); }

}  // namespace mgrgcl
