#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>
#include <vector>

namespace eeg2rep {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using IndexList = std::vector<int>;

/// Raised for malformed input data, configurations or checkpoints.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

/// File system failures and unreadable or corrupt files.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace eeg2rep
