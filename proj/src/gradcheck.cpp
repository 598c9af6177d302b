#include "punc/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "punc/error.hpp"

namespace punc::ad {

namespace {

double evaluate(const LossFn& f, std::uint64_t seed) {
  Tape tape(seed, /*record=*/false);
  const double v = f(tape).item();
  if (!std::isfinite(v)) throw NumericError("check_gradients: non-finite loss at perturbed point");
  return v;
}

}  // namespace

double check_gradients(const LossFn& f, const std::vector<Tensor>& inputs, double epsilon,
                       std::uint64_t seed) {
  if (!(epsilon > 0.0)) throw ContractError("check_gradients: epsilon must be positive");
  for (const Tensor& x : inputs) {
    if (!x.requires_grad()) throw ContractError("check_gradients: input does not require grad");
  }
  for (Tensor x : inputs) x.zero_grad();
  {
    Tape tape(seed);
    Tensor loss = f(tape);
    tape.backward(loss);
  }
  double worst = 0.0;
  for (Tensor x : inputs) {
    const std::vector<double> analytic = x.grad();
    auto vals = x.mutable_values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double orig = vals[i];
      vals[i] = orig + epsilon;
      const double up = evaluate(f, seed);
      vals[i] = orig - epsilon;
      const double down = evaluate(f, seed);
      vals[i] = orig;
      const double numeric = (up - down) / (2.0 * epsilon);
      const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace punc::ad
