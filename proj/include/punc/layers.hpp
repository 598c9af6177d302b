#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "punc/ops.hpp"
#include "punc/tensor.hpp"

namespace punc {

using ad::Tape;
using ad::Tensor;

struct NamedTensor {
  std::string name;
  Tensor tensor;
};
using ParamList = std::vector<NamedTensor>;

enum class Mode { kTrain, kEval };

// Deterministic per-component generator: the same (seed, component) always
// yields the same stream regardless of what else was initialised before.
std::mt19937_64 component_rng(std::uint64_t seed, std::string_view component);

// Glorot/Xavier uniform bound sqrt(6 / (fan_in + fan_out)).
Tensor glorot_uniform(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng);
// Uniform on the open interval (-range, range).
Tensor uniform_open(ad::Shape shape, double range, std::mt19937_64& rng);

struct EncoderConfig {
  std::size_t vocab_size = 0;
  std::size_t num_layers = 2;
  std::size_t num_heads = 4;
  std::size_t d_model = 64;
  std::size_t d_k = 16;
  std::size_t d_v = 16;
  std::size_t d_ff = 128;
  std::size_t max_len = 64;
  double dropout_rate = 0.1;

  // Throws ContractError unless d_k = d_v = d_model / num_heads exactly.
  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

struct LstmConfig {
  std::size_t num_cells = 48;
  std::size_t projection_dim = 24;
  double cell_clip = 50.0;   // cell state clamped to [-cell_clip, cell_clip]
  double init_range = 0.02;  // weights ~ U(-init_range, init_range)

  void validate() const;
  bool operator==(const LstmConfig&) const = default;
};

class Linear {
 public:
  Linear() = default;
  Linear(std::size_t in, std::size_t out, std::mt19937_64& rng);

  Tensor forward(Tape& tape, const Tensor& x) const;
  void collect(ParamList& out, const std::string& prefix) const;

  std::size_t in_dim() const { return weight.rows(); }
  std::size_t out_dim() const { return weight.cols(); }

  Tensor weight;  // [in x out]
  Tensor bias;    // [out]
};

// Fixed sinusoidal table: PE[pos, 2i] = sin(pos / 10000^(2i/d)),
// PE[pos, 2i+1] = cos(pos / 10000^(2i/d)).
std::vector<double> sinusoidal_positions(std::size_t max_len, std::size_t d_model);

struct AttentionTrace {
  // One [T x T] row-major weight matrix per head.
  std::vector<std::vector<double>> weights;
};

struct EncoderLayer {
  Tensor w_q, b_q, w_k, b_k, w_v, b_v;  // heads packed along columns
  Tensor w_o, b_o;
  Tensor ln1_gain, ln1_bias;
  Linear ff1, ff2;
  Tensor ln2_gain, ln2_bias;
};

class EncoderStack {
 public:
  EncoderStack() = default;
  EncoderStack(const EncoderConfig& cfg, std::uint64_t seed);

  const EncoderConfig& config() const { return cfg_; }

  // Row t = embedding[id_t] + position[t].
  Tensor embed(Tape& tape, std::span<const std::size_t> ids) const;

  Tensor multi_head_attention(Tape& tape, const EncoderLayer& layer, const Tensor& x,
                              std::span<const bool> mask,
                              AttentionTrace* trace = nullptr) const;

  // Post-norm residual blocks: x = LN(x + Drop(MHA(x))); x = LN(x + Drop(FFN(x))).
  Tensor forward(Tape& tape, std::span<const std::size_t> ids, std::span<const bool> mask,
                 Mode mode, std::vector<AttentionTrace>* traces = nullptr) const;

  void collect(ParamList& out, const std::string& prefix = "encoder.") const;
  std::size_t parameter_count() const;

  Tensor token_embedding;  // [vocab x d_model]
  std::vector<EncoderLayer> layers;

 private:
  EncoderConfig cfg_;
  std::vector<double> positions_;  // [max_len x d_model]
};

// Peephole LSTM with a recurrent projection layer, one direction.
struct LstmDirection {
  Tensor w_x;     // [in x 4H], gate order i, f, g, o
  Tensor w_r;     // [P x 4H], applied to the previous projected output
  Tensor bias;    // [4H]
  Tensor peep_i, peep_f, peep_o;  // [H]
  Tensor w_proj;  // [H x P]
};

struct LstmStepTrace {
  std::vector<double> cells;  // clipped cell state per step, [T x H]
};

class Blstm {
 public:
  Blstm() = default;
  Blstm(std::size_t input_dim, const LstmConfig& cfg, std::mt19937_64& rng);

  const LstmConfig& config() const { return cfg_; }
  std::size_t input_dim() const { return fwd.w_x.rows(); }
  std::size_t output_dim() const { return 2 * cfg_.projection_dim; }

  // [T x in] -> [T x 2P]; columns [0, P) forward direction, [P, 2P) backward.
  Tensor forward(Tape& tape, const Tensor& x, LstmStepTrace* fwd_trace = nullptr) const;

  // One direction over the rows of x, in reverse order when `reverse`.
  Tensor run_direction(Tape& tape, const LstmDirection& d, const Tensor& x, bool reverse,
                       LstmStepTrace* trace = nullptr) const;

  void collect(ParamList& out, const std::string& prefix) const;

  LstmDirection fwd, bwd;

 private:
  LstmConfig cfg_;
};

// Columnwise max over the valid (mask = true) rows -> {d}.
inline Tensor max_pool_over_time(Tape& tape, const Tensor& x, std::span<const bool> mask) {
  return ad::max_over_time(tape, x, mask);
}

}  // namespace punc
