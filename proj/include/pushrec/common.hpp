#pragma once

#include <Eigen/Core>

#include <cmath>
#include <stdexcept>
#include <string>

namespace pushrec {

using Vec2 = Eigen::Vector2d;

// Upper bound on generalized coordinates; lets hot-path matrices live on the stack.
inline constexpr int kMaxDof = 16;

using VecN = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxDof, 1>;
using MatN = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, kMaxDof, kMaxDof>;
using Mat2N = Eigen::Matrix<double, 2, Eigen::Dynamic, 0, 2, kMaxDof>;
using Row1N = Eigen::Matrix<double, 1, Eigen::Dynamic, Eigen::RowMajor, 1, kMaxDof>;

// Rotation in the (horizontal, vertical) plane, counter-clockwise positive.
inline Vec2 rotate(double angle, const Vec2& v) {
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  return {c * v.x() - s * v.y(), s * v.x() + c * v.y()};
}

// d/dangle of rotate(angle, v) expressed on an already rotated vector.
inline Vec2 perp(const Vec2& v) { return {-v.y(), v.x()}; }

class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace pushrec
