#pragma once

#include <complex>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace gcd {

// Speed of light in vacuum [m/s].
inline constexpr double kSpeedOfLight = 299792458.0;

inline constexpr double kPi = 3.141592653589793238462643383279502884;

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using CMat = Eigen::MatrixXcd;
using RMat = Eigen::MatrixXd;
using RVec = Eigen::VectorXd;
using CVec3 = Eigen::Vector3cd;
using Complex = std::complex<double>;

// Bad user input: malformed files, inconsistent arguments, impossible
// requests. CLI maps this to exit code 2.
class ConfigError : public std::runtime_error {
public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numeric breakdown at runtime: NaN loss, undefined metric on an outage
// sample. CLI maps this to exit code 3.
class NumericError : public std::runtime_error {
public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace gcd
