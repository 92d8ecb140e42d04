#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

namespace fieldinv {

using Vec = Eigen::VectorXd;
using Vec2 = Eigen::Vector2d;
using Mat2 = Eigen::Matrix2d;

class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class SingularMatrixError : public std::runtime_error {
 public:
  SingularMatrixError(const std::string& msg, int pivot_row)
      : std::runtime_error(msg), pivot_row(pivot_row) {}
  int pivot_row;
};

}  // namespace fieldinv
