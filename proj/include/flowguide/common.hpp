#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

namespace flowguide {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Every failure carries a stable machine-readable kind next to the human
// message; the CLI maps kinds to exit codes and error JSON.
struct Error : std::runtime_error {
  std::string kind;
  Error(std::string k, const std::string& msg)
      : std::runtime_error(msg), kind(std::move(k)) {}
};

}  // namespace flowguide
