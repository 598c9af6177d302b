#include "punc/layers.hpp"

#include <cmath>
#include <string>

#include "punc/error.hpp"

namespace punc {

using namespace punc::ad;

std::mt19937_64 component_rng(std::uint64_t seed, std::string_view component) {
  // FNV-1a keeps the stream stable across standard library implementations.
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : component) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
  return std::mt19937_64(seq);
}

Tensor glorot_uniform(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> v(fan_in * fan_out);
  for (double& x : v) x = dist(rng);
  return Tensor::from({fan_in, fan_out}, std::move(v), true);
}

Tensor uniform_open(Shape shape, double range, std::mt19937_64& rng) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  std::uniform_real_distribution<double> dist(-range, range);
  std::vector<double> v(n);
  for (double& x : v) {
    do {
      x = dist(rng);
    } while (x <= -range || x >= range);
  }
  return Tensor::from(std::move(shape), std::move(v), true);
}

void EncoderConfig::validate() const {
  if (vocab_size == 0 || num_heads == 0 || d_model == 0 || d_ff == 0 || max_len == 0) {
    throw ContractError("EncoderConfig: dimensions must be positive");
  }
  if (d_model % num_heads != 0 || d_k != d_model / num_heads || d_v != d_model / num_heads) {
    throw ContractError("EncoderConfig: require d_k = d_v = d_model / num_heads (d_model=" +
                        std::to_string(d_model) + ", h=" + std::to_string(num_heads) +
                        ", d_k=" + std::to_string(d_k) + ", d_v=" + std::to_string(d_v) + ")");
  }
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    throw ContractError("EncoderConfig: dropout_rate must lie in [0, 1)");
  }
}

void LstmConfig::validate() const {
  if (num_cells == 0 || projection_dim == 0 || projection_dim > num_cells) {
    throw ContractError("LstmConfig: need 0 < projection_dim <= num_cells");
  }
  if (!(cell_clip > 0.0) || !(init_range > 0.0)) {
    throw ContractError("LstmConfig: cell_clip and init_range must be positive");
  }
}

Linear::Linear(std::size_t in, std::size_t out, std::mt19937_64& rng)
    : weight(glorot_uniform(in, out, rng)), bias(Tensor::zeros({out}, true)) {}

Tensor Linear::forward(Tape& tape, const Tensor& x) const {
  return add(tape, matmul(tape, x, weight), bias);
}

void Linear::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + "weight", weight});
  out.push_back({prefix + "bias", bias});
}

std::vector<double> sinusoidal_positions(std::size_t max_len, std::size_t d_model) {
  std::vector<double> pe(max_len * d_model);
  for (std::size_t pos = 0; pos < max_len; ++pos) {
    for (std::size_t i = 0; i < d_model; i += 2) {
      const double rate =
          std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(d_model));
      pe[pos * d_model + i] = std::sin(static_cast<double>(pos) * rate);
      if (i + 1 < d_model) pe[pos * d_model + i + 1] = std::cos(static_cast<double>(pos) * rate);
    }
  }
  return pe;
}

EncoderStack::EncoderStack(const EncoderConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  auto rng = component_rng(seed, "encoder");
  const std::size_t d = cfg.d_model;
  token_embedding = glorot_uniform(cfg.vocab_size, d, rng);
  positions_ = sinusoidal_positions(cfg.max_len, d);
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    EncoderLayer layer;
    layer.w_q = glorot_uniform(d, cfg.num_heads * cfg.d_k, rng);
    layer.b_q = Tensor::zeros({cfg.num_heads * cfg.d_k}, true);
    layer.w_k = glorot_uniform(d, cfg.num_heads * cfg.d_k, rng);
    layer.b_k = Tensor::zeros({cfg.num_heads * cfg.d_k}, true);
    layer.w_v = glorot_uniform(d, cfg.num_heads * cfg.d_v, rng);
    layer.b_v = Tensor::zeros({cfg.num_heads * cfg.d_v}, true);
    layer.w_o = glorot_uniform(cfg.num_heads * cfg.d_v, d, rng);
    layer.b_o = Tensor::zeros({d}, true);
    layer.ln1_gain = Tensor::from({d}, std::vector<double>(d, 1.0), true);
    layer.ln1_bias = Tensor::zeros({d}, true);
    layer.ff1 = Linear(d, cfg.d_ff, rng);
    layer.ff2 = Linear(cfg.d_ff, d, rng);
    layer.ln2_gain = Tensor::from({d}, std::vector<double>(d, 1.0), true);
    layer.ln2_bias = Tensor::zeros({d}, true);
    layers.push_back(std::move(layer));
  }
}

Tensor EncoderStack::embed(Tape& tape, std::span<const std::size_t> ids) const {
  if (ids.empty()) throw ShapeError("embed: empty sequence");
  if (ids.size() > cfg_.max_len) {
    throw RangeError("embed: sequence length " + std::to_string(ids.size()) +
                     " exceeds max_len " + std::to_string(cfg_.max_len));
  }
  for (std::size_t id : ids) {
    if (id >= cfg_.vocab_size) {
      throw RangeError("embed: token id " + std::to_string(id) + " outside vocabulary of " +
                       std::to_string(cfg_.vocab_size));
    }
  }
  const std::size_t d = cfg_.d_model;
  Tensor pos = Tensor::from(
      {ids.size(), d},
      std::vector<double>(positions_.begin(), positions_.begin() + ids.size() * d));
  return add(tape, embedding_lookup(tape, token_embedding, ids), pos);
}

Tensor EncoderStack::multi_head_attention(Tape& tape, const EncoderLayer& layer,
                                          const Tensor& x, std::span<const bool> mask,
                                          AttentionTrace* trace) const {
  const std::size_t dk = cfg_.d_k, dv = cfg_.d_v;
  const Tensor q = add(tape, matmul(tape, x, layer.w_q), layer.b_q);
  const Tensor k = add(tape, matmul(tape, x, layer.w_k), layer.b_k);
  const Tensor v = add(tape, matmul(tape, x, layer.w_v), layer.b_v);
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));
  std::vector<Tensor> heads;
  heads.reserve(cfg_.num_heads);
  for (std::size_t h = 0; h < cfg_.num_heads; ++h) {
    Tensor qh = slice_cols(tape, q, h * dk, dk);
    Tensor kh = slice_cols(tape, k, h * dk, dk);
    Tensor vh = slice_cols(tape, v, h * dv, dv);
    Tensor scores = scale(tape, matmul(tape, qh, kh, /*transpose_b=*/true), inv_sqrt_dk);
    Tensor weights = softmax(tape, scores, mask);
    if (trace) trace->weights.emplace_back(weights.values().begin(), weights.values().end());
    heads.push_back(matmul(tape, weights, vh));
  }
  Tensor joined = heads.size() == 1 ? heads[0] : concat_cols(tape, heads);
  return add(tape, matmul(tape, joined, layer.w_o), layer.b_o);
}

Tensor EncoderStack::forward(Tape& tape, std::span<const std::size_t> ids,
                             std::span<const bool> mask, Mode mode,
                             std::vector<AttentionTrace>* traces) const {
  if (!mask.empty() && mask.size() != ids.size()) {
    throw ShapeError("encoder: mask length does not match sequence length");
  }
  const bool train = mode == Mode::kTrain;
  const double rate = cfg_.dropout_rate;
  Tensor x = dropout(tape, embed(tape, ids), rate, train);
  for (const EncoderLayer& layer : layers) {
    AttentionTrace* trace = nullptr;
    if (traces) trace = &traces->emplace_back();
    Tensor a = multi_head_attention(tape, layer, x, mask, trace);
    x = layer_norm(tape, add(tape, x, dropout(tape, a, rate, train)));
    x = add(tape, mul(tape, x, layer.ln1_gain), layer.ln1_bias);
    Tensor f = layer.ff2.forward(tape, relu(tape, layer.ff1.forward(tape, x)));
    x = layer_norm(tape, add(tape, x, dropout(tape, f, rate, train)));
    x = add(tape, mul(tape, x, layer.ln2_gain), layer.ln2_bias);
  }
  return x;
}

void EncoderStack::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + "token_embedding", token_embedding});
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const EncoderLayer& L = layers[l];
    const std::string p = prefix + "layer" + std::to_string(l) + ".";
    out.push_back({p + "attn.w_q", L.w_q});
    out.push_back({p + "attn.b_q", L.b_q});
    out.push_back({p + "attn.w_k", L.w_k});
    out.push_back({p + "attn.b_k", L.b_k});
    out.push_back({p + "attn.w_v", L.w_v});
    out.push_back({p + "attn.b_v", L.b_v});
    out.push_back({p + "attn.w_o", L.w_o});
    out.push_back({p + "attn.b_o", L.b_o});
    out.push_back({p + "ln1.gain", L.ln1_gain});
    out.push_back({p + "ln1.bias", L.ln1_bias});
    L.ff1.collect(out, p + "ff1.");
    L.ff2.collect(out, p + "ff2.");
    out.push_back({p + "ln2.gain", L.ln2_gain});
    out.push_back({p + "ln2.bias", L.ln2_bias});
  }
}

std::size_t EncoderStack::parameter_count() const {
  ParamList params;
  collect(params);
  std::size_t n = 0;
  for (const auto& p : params) n += p.tensor.size();
  return n;
}

namespace {

LstmDirection make_direction(std::size_t in, const LstmConfig& cfg, std::mt19937_64& rng) {
  const std::size_t H = cfg.num_cells, P = cfg.projection_dim;
  const double r = cfg.init_range;
  LstmDirection d;
  d.w_x = uniform_open({in, 4 * H}, r, rng);
  d.w_r = uniform_open({P, 4 * H}, r, rng);
  d.bias = uniform_open({4 * H}, r, rng);
  d.peep_i = uniform_open({H}, r, rng);
  d.peep_f = uniform_open({H}, r, rng);
  d.peep_o = uniform_open({H}, r, rng);
  d.w_proj = uniform_open({H, P}, r, rng);
  return d;
}

void collect_direction(const LstmDirection& d, ParamList& out, const std::string& p) {
  out.push_back({p + "w_x", d.w_x});
  out.push_back({p + "w_r", d.w_r});
  out.push_back({p + "bias", d.bias});
  out.push_back({p + "peep_i", d.peep_i});
  out.push_back({p + "peep_f", d.peep_f});
  out.push_back({p + "peep_o", d.peep_o});
  out.push_back({p + "w_proj", d.w_proj});
}

}  // namespace

Blstm::Blstm(std::size_t input_dim, const LstmConfig& cfg, std::mt19937_64& rng) : cfg_(cfg) {
  cfg_.validate();
  fwd = make_direction(input_dim, cfg, rng);
  bwd = make_direction(input_dim, cfg, rng);
}

Tensor Blstm::run_direction(Tape& tape, const LstmDirection& d, const Tensor& x, bool reverse,
                            LstmStepTrace* trace) const {
  const std::size_t T = x.rows(), H = cfg_.num_cells;
  const double clip_at = cfg_.cell_clip;
  const Tensor xw = add(tape, matmul(tape, x, d.w_x), d.bias);
  std::vector<Tensor> outputs(T);
  Tensor h_prev, c_prev;
  if (trace) trace->cells.assign(T * H, 0.0);
  for (std::size_t step = 0; step < T; ++step) {
    const std::size_t t = reverse ? T - 1 - step : step;
    Tensor pre = slice_rows(tape, xw, t, 1);
    if (h_prev.defined()) pre = add(tape, pre, matmul(tape, h_prev, d.w_r));
    Tensor i_pre = slice_cols(tape, pre, 0, H);
    Tensor f_pre = slice_cols(tape, pre, H, H);
    Tensor g_pre = slice_cols(tape, pre, 2 * H, H);
    Tensor o_pre = slice_cols(tape, pre, 3 * H, H);
    if (c_prev.defined()) {
      i_pre = add(tape, i_pre, mul(tape, c_prev, d.peep_i));
      f_pre = add(tape, f_pre, mul(tape, c_prev, d.peep_f));
    }
    Tensor c = mul(tape, sigmoid(tape, i_pre), tanh(tape, g_pre));
    if (c_prev.defined()) c = add(tape, c, mul(tape, sigmoid(tape, f_pre), c_prev));
    c = clip(tape, c, -clip_at, clip_at);
    Tensor o = sigmoid(tape, add(tape, o_pre, mul(tape, c, d.peep_o)));
    Tensor m = mul(tape, o, tanh(tape, c));
    Tensor h = matmul(tape, m, d.w_proj);
    if (trace) std::copy(c.values().begin(), c.values().end(), trace->cells.begin() + t * H);
    outputs[t] = h;
    h_prev = h;
    c_prev = c;
  }
  return T == 1 ? outputs[0] : concat_rows(tape, outputs);
}

Tensor Blstm::forward(Tape& tape, const Tensor& x, LstmStepTrace* fwd_trace) const {
  if (x.cols() != input_dim()) {
    throw ShapeError("blstm: input width " + std::to_string(x.cols()) + " != expected " +
                     std::to_string(input_dim()));
  }
  const Tensor f = run_direction(tape, fwd, x, false, fwd_trace);
  const Tensor b = run_direction(tape, bwd, x, true);
  const Tensor parts[] = {f, b};
  return concat_cols(tape, parts);
}

void Blstm::collect(ParamList& out, const std::string& prefix) const {
  collect_direction(fwd, out, prefix + "fwd.");
  collect_direction(bwd, out, prefix + "bwd.");
}

}  // namespace punc
