#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "punc/data.hpp"
#include "punc/eval.hpp"
#include "punc/models.hpp"

namespace punc {

// d_model^-0.5 · min(step^-0.5, step · warmup^-1.5)
struct LrSchedule {
  std::size_t d_model = 64;
  std::size_t warmup_steps = 400;
};
double lr_at(const LrSchedule& sched, std::uint64_t step);

struct ClipReport {
  double pre_norm = 0.0;
  double post_norm = 0.0;
};

// Global L2 clipping of the accumulated gradients of params.
ClipReport clip_gradients(const ParamList& params, double max_norm);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct OptimizerState {
  AdamConfig cfg;
  std::uint64_t step = 0;
  std::map<std::string, std::vector<double>> m, v;  // keyed by parameter name
};

// One bias-corrected Adam step using each parameter's gradient.
void adam_update(const ParamList& params, OptimizerState& state, double lr);

struct EarlyStopState {
  double best = -std::numeric_limits<double>::infinity();
  std::size_t since_improvement = 0;
  std::size_t patience = 2;
  double min_delta = 0.001;
  bool stop = false;

  // Records one evaluation; returns true when it is a new best.
  bool update(double score);
};

struct TrainConfig {
  std::uint64_t seed = 1;
  std::size_t epochs = 3;
  std::size_t batch_size = 32;
  std::size_t max_len = 64;
  std::size_t warmup_steps = 400;
  double base_lr = 5e-4;  // peak learning rate, reached at warmup_steps
  double max_norm = 5.0;
  AdamConfig adam;
  std::size_t eval_interval = 50;
  std::size_t patience = 2;
  double min_delta = 0.001;
  // Fraction of the POS batches used per epoch; 0 disables the auxiliary task.
  double pos_weight = 1.0;
  bool adversarial = true;
  std::optional<double> force_lambda;
  double gamma = 10.0;
  std::size_t max_steps = 0;  // 0: no cap beyond epochs
};

struct TrainResult {
  std::string log;
  Checkpoint best;
  MetricsReport best_report;
  double best_f1 = -1.0;
  std::uint64_t steps = 0;
  bool diverged = false;
  std::string divergence;
};

// Alternates PUN and POS batches, evaluates dev F1 every eval_interval steps,
// keeps the best parameters and restores them into the model before
// returning. A PunctuationTagger that is not an AdversarialModel trains the
// punctuation task alone.
TrainResult train_multitask(PunctuationTagger& model, const Vocab& vocab,
                            std::span<const LabeledSequence> pun_train,
                            std::span<const LabeledSequence> pos_train,
                            std::span<const LabeledSequence> pun_dev, const TrainConfig& cfg,
                            std::string_view kind);

struct PretrainConfig {
  std::uint64_t seed = 1;
  std::size_t epochs = 3;
  std::size_t batch_size = 32;
  std::size_t warmup_steps = 400;
  double base_lr = 5e-4;
  double max_norm = 5.0;
  AdamConfig adam;
  std::size_t eval_interval = 100;
  MaskPolicy mask;
  std::size_t stop_at_step = 0;  // 0: run to the planned end
};

// Everything needed to continue masked-LM training bit-for-bit.
struct PretrainState {
  EncoderStack encoder;
  MlmHead head;
  OptimizerState opt;
  std::uint64_t step = 0;

  Checkpoint to_checkpoint(const Vocab& vocab) const;
  static PretrainState from_checkpoint(const Checkpoint& ckpt);
};

PretrainState init_pretrain(const EncoderConfig& cfg, std::uint64_t seed);

struct PretrainResult {
  std::string log;
  std::vector<double> eval_losses;
};

// Continues from state.step. Batch order for epoch e and the masks of step s
// depend only on (seed, e) and (seed, s), so stopping and resuming reproduces
// an uninterrupted run.
PretrainResult pretrain(PretrainState& state, std::span<const std::vector<std::size_t>> corpus,
                        std::span<const std::vector<std::size_t>> eval_corpus,
                        const PretrainConfig& cfg);

// Encoder-only checkpoint for transfer.
Checkpoint encoder_checkpoint(const EncoderStack& encoder, const Vocab& vocab,
                              std::uint64_t seed, std::uint64_t step);

// Stream derived from a seed and an index (epoch, step, ...).
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index, std::string_view tag);

}  // namespace punc
