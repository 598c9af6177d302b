#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "punc/adversarial.hpp"
#include "punc/crf.hpp"
#include "punc/data.hpp"
#include "punc/layers.hpp"

namespace punc {

// Copyable counter that is safe to bump from concurrent readers.
class ForwardCounter {
 public:
  ForwardCounter() = default;
  ForwardCounter(const ForwardCounter& o) : n_(o.load()) {}
  ForwardCounter& operator=(const ForwardCounter& o) {
    n_.store(o.load());
    return *this;
  }
  void bump() const { n_.fetch_add(1, std::memory_order_relaxed); }
  std::size_t load() const { return n_.load(std::memory_order_relaxed); }
  void reset() const { n_.store(0); }

 private:
  mutable std::atomic<std::size_t> n_{0};
};

// Task-specific classifier: linear bridge -> BLSTM -> linear emissions -> CRF.
class TaskHead {
 public:
  TaskHead() = default;
  TaskHead(std::size_t d_model, std::size_t num_labels, const LstmConfig& lstm,
           std::uint64_t seed, std::string_view component);

  std::size_t num_labels() const { return crf.num_labels(); }

  // shared [T x d_model] -> emissions [T x L]
  Tensor emissions(Tape& tape, const Tensor& shared) const;
  void collect(ParamList& out, const std::string& prefix) const;

  Linear bridge;
  Blstm blstm;
  Linear emit;
  CrfParams crf;
  ForwardCounter forward_count;
};

struct ModelConfig {
  EncoderConfig encoder;
  LstmConfig lstm;
  std::size_t discriminator_hidden = Discriminator::kDefaultHidden;

  bool operator==(const ModelConfig&) const = default;
};

class PunctuationTagger {
 public:
  PunctuationTagger() = default;
  PunctuationTagger(const ModelConfig& cfg, std::uint64_t seed);
  virtual ~PunctuationTagger() = default;

  const ModelConfig& config() const { return cfg_; }
  virtual void collect(ParamList& out) const;
  ParamList parameters() const;

  EncoderStack encoder;
  TaskHead pun_head;

 protected:
  ModelConfig cfg_;
};

// Shared encoder feeding a punctuation head, a POS head and a task
// discriminator behind a gradient reversal layer.
class AdversarialModel : public PunctuationTagger {
 public:
  AdversarialModel() = default;
  AdversarialModel(const ModelConfig& cfg, std::uint64_t seed);

  void collect(ParamList& out) const override;
  const TaskHead& head(Task t) const { return t == Task::kPun ? pun_head : pos_head; }

  TaskHead pos_head;
  Discriminator discriminator;
  LambdaSchedule schedule;
  ForwardCounter discriminator_count;
};

// Per-row outputs of the punctuation path. Padded cells never enter a chain.
struct PunctuationOutput {
  std::vector<Tensor> nll;              // one scalar per row
  std::vector<std::vector<int>> labels;  // Viterbi paths, filled in eval mode
};

PunctuationOutput punctuation_forward(Tape& tape, const PunctuationTagger& model,
                                      const Batch& batch, Mode mode);

struct StepLosses {
  Tensor task;   // mean head NLL over the batch rows
  Tensor adv;    // mean discriminator NLL; undefined without the adversarial branch
  Tensor total;  // task + λ·adv
  double lambda = 0.0;
};

// One shared encoder pass per row, routed to the batch task's head. With a
// lambda the pooled shared features also go through grl -> discriminator.
StepLosses multitask_step(Tape& tape, const AdversarialModel& model, const Batch& batch,
                          std::optional<double> lambda, Mode mode = Mode::kTrain);

// Encoder + punctuation head + Viterbi only. Inputs longer than max_len are
// decoded in consecutive windows.
std::vector<int> predict_punctuation(const PunctuationTagger& model,
                                     std::span<const std::size_t> ids);

// Untied projection from encoder states to vocabulary logits.
class MlmHead {
 public:
  MlmHead() = default;
  MlmHead(std::size_t d_model, std::size_t vocab_size, std::uint64_t seed);

  Tensor logits(Tape& tape, const Tensor& hidden) const { return proj.forward(tape, hidden); }
  void collect(ParamList& out, const std::string& prefix = "mlm_head.") const {
    proj.collect(out, prefix + "proj.");
  }

  Linear proj;
};

struct MaskPolicy {
  double select_rate = 0.15;
  double mask_rate = 0.8;    // of selected: replaced by MASK
  double random_rate = 0.1;  // of selected: replaced by a random regular token
};

struct MaskedSequence {
  std::vector<std::size_t> ids;        // corrupted input
  std::vector<std::size_t> positions;  // selected positions, ascending
  std::vector<std::size_t> targets;    // original ids at those positions
};

// Selects round(select_rate·n) maskable positions (at least one when any
// exist). PAD and MASK are never selected.
MaskedSequence apply_mask(std::span<const std::size_t> ids, const MaskPolicy& policy,
                          std::size_t vocab_size, std::mt19937_64& rng);

// Mean NLL of the original tokens over all masked positions of the given
// pre-masked sequences. nullopt when nothing was masked (skip the batch).
std::optional<Tensor> mlm_loss(Tape& tape, const EncoderStack& encoder, const MlmHead& head,
                               std::span<const MaskedSequence> seqs, Mode mode);

// ---------------------------------------------------------------------------
// Checkpoints.

struct CheckpointEntry {
  ad::Shape shape;
  std::vector<double> values;
};

struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::map<std::string, CheckpointEntry> entries;  // ordered by name
  nlohmann::json metadata = nlohmann::json::object();

  std::string serialize() const;
  static Checkpoint deserialize(std::string_view bytes);
  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);
};

Checkpoint snapshot(const ParamList& params, nlohmann::json metadata = nlohmann::json::object());
// Copies every named entry into params; each param must be present with its shape.
void restore_params(const Checkpoint& ckpt, const ParamList& params);

nlohmann::json to_json(const EncoderConfig& c);
nlohmann::json to_json(const LstmConfig& c);
nlohmann::json to_json(const ModelConfig& c);
EncoderConfig encoder_config_from_json(const nlohmann::json& j);
ModelConfig model_config_from_json(const nlohmann::json& j);

struct TransferReport {
  std::vector<std::string> transferred;
  std::vector<std::string> skipped;
};

// Copies every "encoder." entry into the target encoder. Shapes must agree
// and every target encoder tensor must be present.
TransferReport transfer_encoder_params(const Checkpoint& ckpt, PunctuationTagger& target);

// Model kinds recorded in checkpoint metadata.
inline constexpr std::string_view kKindEncoder = "encoder";
inline constexpr std::string_view kKindTagger = "tagger";
inline constexpr std::string_view kKindAdversarial = "adversarial";

Checkpoint model_checkpoint(const PunctuationTagger& model, std::string_view kind,
                            const Vocab& vocab, std::uint64_t seed, std::uint64_t step);

struct LoadedModel {
  std::unique_ptr<PunctuationTagger> model;
  Vocab vocab;
  std::string kind;
};
LoadedModel load_model(const Checkpoint& ckpt);

}  // namespace punc
