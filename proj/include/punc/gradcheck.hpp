#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "punc/tensor.hpp"

namespace punc::ad {

// Builds a scalar loss on the given tape from tensors captured by the caller.
using LossFn = std::function<Tensor(Tape&)>;

// Max over coordinates of |analytic - central difference| / max(1, |analytic|)
// for every tensor in `inputs`. Each evaluation uses a fresh tape seeded with
// `seed`, so stochastic primitives see the same draws every time.
double check_gradients(const LossFn& f, const std::vector<Tensor>& inputs,
                       double epsilon = 1e-5, std::uint64_t seed = 0);

inline double check_gradients(const LossFn& f, const Tensor& x, double epsilon = 1e-5,
                              std::uint64_t seed = 0) {
  return check_gradients(f, std::vector<Tensor>{x}, epsilon, seed);
}

}  // namespace punc::ad
