#include "pfbr/common.hpp"

namespace pfbr {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::DimMismatch: return "DimMismatch";
    case ErrorKind::DimTooSmall: return "DimTooSmall";
    case ErrorKind::NonFinite: return "NonFinite";
    case ErrorKind::UnsupportedNesting: return "UnsupportedNesting";
    case ErrorKind::EmptyEnsemble: return "EmptyEnsemble";
    case ErrorKind::EmptyBatch: return "EmptyBatch";
    case ErrorKind::NonSpd: return "NonSPD";
    case ErrorKind::BadLabel: return "BadLabel";
    case ErrorKind::BadSplitIndex: return "BadSplitIndex";
    case ErrorKind::DegenerateWeights: return "DegenerateWeights";
    case ErrorKind::ModelError: return "ModelError";
    case ErrorKind::ConfigError: return "ConfigError";
    case ErrorKind::ParseError: return "ParseError";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::FormatVersionMismatch: return "FormatVersionMismatch";
    case ErrorKind::NoOracle: return "NoOracle";
  }
  return "Error";
}

int Error::exit_code() const {
  switch (kind_) {
    case ErrorKind::ConfigError:
      return 2;
    case ErrorKind::ParseError:
    case ErrorKind::IoError:
    case ErrorKind::FormatVersionMismatch:
    case ErrorKind::BadLabel:
    case ErrorKind::NoOracle:
      return 3;
    default:
      return 4;
  }
}

}  // namespace pfbr
