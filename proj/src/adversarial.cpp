#include "punc/adversarial.hpp"

#include <cmath>
#include <string>
#include <vector>

#include "punc/error.hpp"

namespace punc {

using namespace punc::ad;

double lambda_at(const LambdaSchedule& s) {
  if (!(s.progress >= 0.0 && s.progress <= 1.0)) {
    throw RangeError("lambda_at: progress " + std::to_string(s.progress) +
                     " outside [0, 1]");
  }
  return 2.0 / (1.0 + std::exp(-s.gamma * s.progress)) - 1.0;
}

Tensor grl(Tape& tape, const Tensor& x, double lambda) {
  if (!(lambda >= 0.0)) throw RangeError("grl: lambda must be non-negative");
  return scale_grad(tape, x, -lambda);
}

Discriminator::Discriminator(std::size_t input_dim, std::size_t num_tasks, std::uint64_t seed,
                             std::size_t hidden_dim) {
  if (num_tasks < 2) throw ContractError("Discriminator: need at least two tasks");
  auto rng = component_rng(seed, "discriminator");
  hidden = Linear(input_dim, hidden_dim, rng);
  out = Linear(hidden_dim, num_tasks, rng);
}

Tensor Discriminator::logits(Tape& tape, const Tensor& pooled) const {
  return out.forward(tape, relu(tape, hidden.forward(tape, pooled)));
}

void Discriminator::collect(ParamList& params, const std::string& prefix) const {
  hidden.collect(params, prefix + "hidden.");
  out.collect(params, prefix + "out.");
}

Tensor adversarial_loss(Tape& tape, const Tensor& pooled, std::size_t task_label,
                        const Discriminator& d) {
  if (task_label >= d.num_tasks()) {
    throw DataError("adversarial_loss: task label " + std::to_string(task_label) +
                    " outside [0, " + std::to_string(d.num_tasks()) + ")");
  }
  const Tensor logp = log_softmax(tape, d.logits(tape, pooled));
  return scale(tape, gather(tape, logp, std::span(&task_label, 1)), -1.0);
}

Tensor total_loss(Tape& tape, std::span<const Tensor> task_losses,
                  std::span<const Tensor> adv_losses, double lambda) {
  std::vector<Tensor> terms;
  std::vector<double> value_w, grad_w;
  for (const Tensor& t : task_losses) {
    terms.push_back(t);
    value_w.push_back(1.0);
    grad_w.push_back(1.0);
  }
  for (const Tensor& t : adv_losses) {
    terms.push_back(t);
    value_w.push_back(lambda);
    grad_w.push_back(1.0);
  }
  return weighted_sum(tape, terms, value_w, grad_w);
}

}  // namespace punc
