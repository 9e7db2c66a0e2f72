#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace pfbr {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using RowMajorMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class ErrorKind {
  ShapeMismatch,
  DimMismatch,
  DimTooSmall,
  NonFinite,
  UnsupportedNesting,
  EmptyEnsemble,
  EmptyBatch,
  NonSpd,
  BadLabel,
  BadSplitIndex,
  DegenerateWeights,
  ModelError,
  ConfigError,
  ParseError,
  IoError,
  FormatVersionMismatch,
  NoOracle,
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg)
      : std::runtime_error(std::string(to_string(kind)) + ": " + msg), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

  // Process exit class used by the CLI: 2 config, 3 data, 4 numerical.
  int exit_code() const;

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& msg) { throw Error(kind, msg); }

inline void require(bool cond, ErrorKind kind, const std::string& msg) {
  if (!cond) fail(kind, msg);
}

}  // namespace pfbr
