#pragma once

#include <functional>

#include "gcd/common.hpp"
#include "gcd/rng.hpp"

namespace gcd::nn {

// One parameter tensor with its gradient accumulator and an initialization
// half-width (0 => zero-init; kOneInit => constant one, for norm gains).
struct Tensor {
  RMat v;
  RMat g;
  double init_scale = 0.0;

  static constexpr double kOneInit = -1.0;

  void shape(Eigen::Index r, Eigen::Index c, double scale) {
    v.setZero(r, c);
    g.setZero(r, c);
    init_scale = scale;
  }
  Eigen::Index size() const { return v.size(); }
};

// Parameter walkers: every module exposes visit() enumerating its tensors in a
// fixed, documented order. The optimizer, serializer, initializer, and
// finite-difference tests all rely on that single ordering.
using TensorVisitor = std::function<void(Tensor&)>;

inline void init_tensor(Tensor& t, Rng& rng) {
  if (t.init_scale == Tensor::kOneInit) {
    t.v.setOnes();
  } else if (t.init_scale == 0.0) {
    t.v.setZero();
  } else {
    for (Eigen::Index j = 0; j < t.v.cols(); ++j)
      for (Eigen::Index i = 0; i < t.v.rows(); ++i)
        t.v(i, j) = rng.uniform(-t.init_scale, t.init_scale);
  }
}

}  // namespace gcd::nn
