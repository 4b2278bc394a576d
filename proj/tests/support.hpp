#pragma once

#include <Eigen/Dense>

#include "fsi2p/rng.hpp"
#include "fsi2p/tensor.hpp"

namespace fsi2p::test {

inline Tensor randn(Shape shape, Rng& rng, double scale = 1.0) {
  Eigen::VectorXd v(shape_numel(shape));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = scale * rng.normal();
  return Tensor(std::move(shape), std::move(v));
}

inline Tensor uniform(Shape shape, Rng& rng, double lo, double hi) {
  Eigen::VectorXd v(shape_numel(shape));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v));
}

// Generic scalar read-out: a fixed random weighting of every entry.
inline Tensor readout(const Tensor& y, std::uint64_t seed = 99) {
  Rng rng(seed);
  return sum(mul(y, randn(y.shape(), rng)));
}

inline double max_abs(const Eigen::Ref<const Eigen::MatrixXd>& m) {
  return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff();
}

}  // namespace fsi2p::test
