#pragma once

#include <cstddef>
#include <cstdint>
#include <span>

#include "punc/layers.hpp"

namespace punc {

// λ(p) = 2 / (1 + exp(-γ p)) - 1, ramping the adversarial weight from 0 to 1
// as training progress p goes from 0 to 1.
struct LambdaSchedule {
  double gamma = 10.0;
  double progress = 0.0;
};

double lambda_at(const LambdaSchedule& s);
inline double lambda_at(double progress, double gamma = 10.0) {
  return lambda_at(LambdaSchedule{gamma, progress});
}

// Gradient reversal: forward copies x; backward multiplies the upstream
// gradient by -λ.
Tensor grl(Tape& tape, const Tensor& x, double lambda);

// Task discriminator: one ReLU hidden layer over the pooled shared features.
class Discriminator {
 public:
  static constexpr std::size_t kDefaultHidden = 1024;

  Discriminator() = default;
  Discriminator(std::size_t input_dim, std::size_t num_tasks, std::uint64_t seed,
                std::size_t hidden = kDefaultHidden);

  std::size_t num_tasks() const { return out.out_dim(); }
  std::size_t input_dim() const { return hidden.in_dim(); }

  // pooled {d} -> logits {1 x M}
  Tensor logits(Tape& tape, const Tensor& pooled) const;
  void collect(ParamList& params, const std::string& prefix = "discriminator.") const;

  Linear hidden;
  Linear out;
};

// -log softmax(D(pooled))[task_label].
Tensor adversarial_loss(Tape& tape, const Tensor& pooled, std::size_t task_label,
                        const Discriminator& d);

// Scalar Σ task_losses + λ Σ adv_losses. The backward pass hands the
// adversarial terms the unscaled upstream gradient: the discriminator trains
// at λ = 1 while the -λ factor for the shared layers is applied by grl().
Tensor total_loss(Tape& tape, std::span<const Tensor> task_losses,
                  std::span<const Tensor> adv_losses, double lambda);

}  // namespace punc
