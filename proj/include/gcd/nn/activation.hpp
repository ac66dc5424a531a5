#pragma once

#include <cmath>

#include "gcd/common.hpp"

namespace gcd::nn {

enum class Activation { gelu, tanh_act, relu };

inline double act_value(Activation a, double x) {
  switch (a) {
    case Activation::gelu:
      return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2));
    case Activation::tanh_act:
      return std::tanh(x);
    case Activation::relu:
      return x > 0 ? x : 0.0;
  }
  return 0.0;
}

inline double act_deriv(Activation a, double x) {
  switch (a) {
    case Activation::gelu: {
      const double phi = std::exp(-0.5 * x * x) / std::sqrt(2.0 * kPi);
      return 0.5 * (1.0 + std::erf(x * M_SQRT1_2)) + x * phi;
    }
    case Activation::tanh_act: {
      double t = std::tanh(x);
      return 1.0 - t * t;
    }
    case Activation::relu:
      return x > 0 ? 1.0 : 0.0;
  }
  return 0.0;
}

inline RMat act_value(Activation a, const RMat& x) {
  return x.unaryExpr([a](double v) { return act_value(a, v); });
}

inline RMat act_deriv(Activation a, const RMat& x) {
  return x.unaryExpr([a](double v) { return act_deriv(a, v); });
}

}  // namespace gcd::nn
