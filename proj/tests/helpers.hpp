#pragma once

#include <cmath>
#include <vector>

#include "fedalc/nn.hpp"
#include "fedalc/rng.hpp"

namespace testutil {

inline fedalc::Tensor random_tensor(fedalc::Shape shape, fedalc::Rng& rng, double lo = -1.0, double hi = 1.0) {
  fedalc::Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

inline std::vector<fedalc::Label> random_labels(std::size_t n, std::size_t classes, fedalc::Rng& rng) {
  std::vector<fedalc::Label> y(n);
  for (auto& v : y) v = static_cast<fedalc::Label>(rng.uniform_index(classes));
  return y;
}

inline bool bitwise_equal(const fedalc::Tensor& a, const fedalc::Tensor& b) { return a == b; }

}  // namespace testutil
