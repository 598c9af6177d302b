#include "punc/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

#include "punc/error.hpp"

namespace punc {

using namespace punc::ad;
using nlohmann::json;

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index, std::string_view tag) {
  auto rng = component_rng(seed + 0x9E3779B97F4A7C15ull * (index + 1), tag);
  return rng();
}

double lr_at(const LrSchedule& sched, std::uint64_t step) {
  if (step == 0) throw RangeError("lr_at: step must be >= 1");
  if (sched.d_model == 0 || sched.warmup_steps == 0) {
    throw ContractError("lr_at: d_model and warmup_steps must be positive");
  }
  const double s = static_cast<double>(step);
  const double w = static_cast<double>(sched.warmup_steps);
  return std::pow(static_cast<double>(sched.d_model), -0.5) *
         std::min(std::pow(s, -0.5), s * std::pow(w, -1.5));
}

ClipReport clip_gradients(const ParamList& params, double max_norm) {
  if (!(max_norm > 0.0)) throw ContractError("clip_gradients: max_norm must be positive");
  double sq = 0.0;
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) continue;
    for (double g : p.tensor.node()->grad) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in " + p.name);
      sq += g * g;
    }
  }
  ClipReport r;
  r.pre_norm = std::sqrt(sq);
  r.post_norm = r.pre_norm;
  if (r.pre_norm > max_norm) {
    const double f = max_norm / r.pre_norm;
    double post = 0.0;
    for (const auto& p : params) {
      if (!p.tensor.has_grad()) continue;
      for (double& g : p.tensor.node()->grad) {
        g *= f;
        post += g * g;
      }
    }
    r.post_norm = std::sqrt(post);
  }
  return r;
}

void adam_update(const ParamList& params, OptimizerState& st, double lr) {
  ++st.step;
  const double b1 = st.cfg.beta1, b2 = st.cfg.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(st.step));
  for (const auto& p : params) {
    Node& n = *p.tensor.node();
    auto& m = st.m[p.name];
    auto& v = st.v[p.name];
    if (m.empty()) m.assign(n.size(), 0.0);
    if (v.empty()) v.assign(n.size(), 0.0);
    if (m.size() != n.size() || v.size() != n.size()) {
      throw ShapeError("adam_update: moment size mismatch for " + p.name);
    }
    if (!n.grad.empty() && n.grad.size() != n.size()) {
      throw ShapeError("adam_update: gradient size mismatch for " + p.name);
    }
    for (std::size_t i = 0; i < n.size(); ++i) {
      const double g = n.grad.empty() ? 0.0 : n.grad[i];
      m[i] = b1 * m[i] + (1.0 - b1) * g;
      v[i] = b2 * v[i] + (1.0 - b2) * g * g;
      n.value[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + st.cfg.eps);
    }
  }
}

bool EarlyStopState::update(double score) {
  if (score - best >= min_delta) {
    since_improvement = 0;
  } else {
    ++since_improvement;
  }
  const bool improved = score > best;
  if (improved) best = score;
  if (since_improvement >= patience) stop = true;
  return improved;
}

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void zero_all(const ParamList& params) {
  for (const auto& p : params) {
    Tensor t = p.tensor;
    t.zero_grad();
  }
}

std::string eval_line(std::uint64_t step, const MetricsReport& r) {
  std::string line = std::to_string(step) + "\tEVAL";
  for (const auto& c : r.per_class) {
    line += "\t" + fmt(c.precision()) + "\t" + fmt(c.recall()) + "\t" + fmt(c.f1());
  }
  line += "\t" + fmt(r.overall.precision()) + "\t" + fmt(r.overall.recall()) + "\t" +
          fmt(r.overall.f1()) + "\n";
  return line;
}

StepLosses punctuation_step(Tape& tape, const PunctuationTagger& model, const Batch& batch) {
  if (batch.task != Task::kPun) throw ContractError("punctuation-only model given a POS batch");
  const PunctuationOutput o = punctuation_forward(tape, model, batch, Mode::kTrain);
  Tensor acc = o.nll.front();
  for (std::size_t i = 1; i < o.nll.size(); ++i) acc = add(tape, acc, o.nll[i]);
  StepLosses s;
  s.task = scale(tape, acc, 1.0 / static_cast<double>(o.nll.size()));
  s.total = s.task;
  return s;
}

}  // namespace

TrainResult train_multitask(PunctuationTagger& model, const Vocab& vocab,
                            std::span<const LabeledSequence> pun_train,
                            std::span<const LabeledSequence> pos_train,
                            std::span<const LabeledSequence> pun_dev, const TrainConfig& cfg,
                            std::string_view kind) {
  if (pun_train.empty()) throw DataError("punctuation training corpus is empty");
  if (pun_dev.empty()) throw DataError("punctuation dev corpus is empty");
  auto* adv = dynamic_cast<AdversarialModel*>(&model);
  const bool use_pos = adv && cfg.pos_weight > 0.0 && !pos_train.empty();
  const bool forced_off = cfg.force_lambda && *cfg.force_lambda == 0.0;
  const bool use_adv = adv && cfg.adversarial && !forced_off;

  const ParamList params = model.parameters();
  OptimizerState opt{cfg.adam, 0, {}, {}};
  EarlyStopState es;
  es.patience = cfg.patience;
  es.min_delta = cfg.min_delta;
  const LrSchedule sched{model.config().encoder.d_model, cfg.warmup_steps};
  const double peak = lr_at(sched, cfg.warmup_steps);

  const auto pun_chunks = split_long(pun_train, cfg.max_len).size();
  const std::size_t n_pun = (pun_chunks + cfg.batch_size - 1) / cfg.batch_size;
  std::size_t n_pos = 0;
  if (use_pos) {
    const auto pos_chunks = split_long(pos_train, cfg.max_len).size();
    const std::size_t all = (pos_chunks + cfg.batch_size - 1) / cfg.batch_size;
    n_pos = std::min(all, static_cast<std::size_t>(
                              std::lround(cfg.pos_weight * static_cast<double>(all))));
  }
  const double total_steps = static_cast<double>(cfg.epochs * (n_pun + n_pos));

  TrainResult res;
  res.best = model_checkpoint(model, kind, vocab, cfg.seed, 0);
  std::uint64_t step = 0, last_eval = 0;
  auto run_eval = [&] {
    const MetricsReport r = evaluate(model, vocab, pun_dev);
    res.log += eval_line(step, r);
    last_eval = step;
    if (es.update(r.overall.f1())) {
      res.best_f1 = r.overall.f1();
      res.best_report = r;
      res.best = model_checkpoint(model, kind, vocab, cfg.seed, step);
    }
  };

  bool done = false;
  for (std::size_t epoch = 0; epoch < cfg.epochs && !done; ++epoch) {
    const auto pun_b =
        make_batches(pun_train, vocab, cfg.batch_size, cfg.max_len, mix_seed(cfg.seed, epoch, "pun-order"));
    std::vector<Batch> pos_b;
    if (use_pos) {
      pos_b = make_batches(pos_train, vocab, cfg.batch_size, cfg.max_len,
                           mix_seed(cfg.seed, epoch, "pos-order"));
      pos_b.resize(n_pos);
    }
    std::mt19937_64 pick(mix_seed(cfg.seed, epoch, "alternation"));
    std::size_t i = 0, j = 0;
    while (!done && (i < pun_b.size() || j < pos_b.size())) {
      const std::size_t rem_pun = pun_b.size() - i, rem_pos = pos_b.size() - j;
      bool take_pos = false;
      if (rem_pos > 0 && rem_pun > 0) {
        take_pos = std::uniform_int_distribution<std::size_t>(0, rem_pun + rem_pos - 1)(pick) >= rem_pun;
      } else {
        take_pos = rem_pos > 0;
      }
      const Batch& batch = take_pos ? pos_b[j++] : pun_b[i++];
      ++step;

      double lambda = 0.0;
      if (use_adv) {
        lambda = cfg.force_lambda ? *cfg.force_lambda
                                  : lambda_at(std::min(1.0, static_cast<double>(step) / total_steps),
                                              cfg.gamma);
      }
      try {
        Tape tape(mix_seed(cfg.seed, step, "dropout"));
        const StepLosses L =
            adv ? multitask_step(tape, *adv, batch,
                                 use_adv ? std::optional<double>(lambda) : std::nullopt)
                : punctuation_step(tape, model, batch);
        tape.backward(L.total);
        const ClipReport clip = clip_gradients(params, cfg.max_norm);
        const double lr = cfg.base_lr * lr_at(sched, step) / peak;
        adam_update(params, opt, lr);
        zero_all(params);
        const double l_adv = L.adv.defined() ? L.adv.item() : 0.0;
        res.log += std::to_string(step) + "\t" + std::string(task_name(batch.task)) + "\t" +
                   fmt(L.task.item()) + "\t" + fmt(l_adv) + "\t" + fmt(lambda) + "\t" + fmt(lr) +
                   "\t" + fmt(clip.pre_norm) + "\t" + fmt(L.total.item()) + "\n";
      } catch (const NumericError& e) {
        res.diverged = true;
        res.divergence = "step " + std::to_string(step) + ": " + e.what();
        zero_all(params);
        done = true;
        break;
      }
      if (cfg.eval_interval > 0 && step % cfg.eval_interval == 0) run_eval();
      if (es.stop || (cfg.max_steps > 0 && step >= cfg.max_steps)) done = true;
    }
  }
  if (!res.diverged && last_eval != step) run_eval();
  res.steps = step;
  restore_params(res.best, params);
  return res;
}

// ---------------------------------------------------------------------------

Checkpoint encoder_checkpoint(const EncoderStack& encoder, const Vocab& vocab,
                              std::uint64_t seed, std::uint64_t step) {
  ParamList params;
  encoder.collect(params, "encoder.");
  return snapshot(params, json{{"kind", kKindEncoder},
                               {"encoder", to_json(encoder.config())},
                               {"vocab", vocab.serialize()},
                               {"seed", seed},
                               {"step", step}});
}

PretrainState init_pretrain(const EncoderConfig& cfg, std::uint64_t seed) {
  PretrainState s;
  s.encoder = EncoderStack(cfg, seed);
  s.head = MlmHead(cfg.d_model, cfg.vocab_size, seed);
  return s;
}

namespace {

ParamList pretrain_params(const PretrainState& s) {
  ParamList params;
  s.encoder.collect(params, "encoder.");
  s.head.collect(params, "mlm_head.");
  return params;
}

}  // namespace

Checkpoint PretrainState::to_checkpoint(const Vocab& vocab) const {
  const ParamList params = pretrain_params(*this);
  Checkpoint ck = snapshot(params, json{{"kind", "pretrain-state"},
                                        {"encoder", to_json(encoder.config())},
                                        {"vocab", vocab.serialize()},
                                        {"step", step},
                                        {"adam_step", opt.step},
                                        {"beta1", opt.cfg.beta1},
                                        {"beta2", opt.cfg.beta2},
                                        {"eps", opt.cfg.eps}});
  for (const auto& p : params) {
    const auto mi = opt.m.find(p.name);
    const auto vi = opt.v.find(p.name);
    if (mi == opt.m.end() || vi == opt.v.end()) continue;
    ck.entries["optimizer.m." + p.name] = CheckpointEntry{p.tensor.shape(), mi->second};
    ck.entries["optimizer.v." + p.name] = CheckpointEntry{p.tensor.shape(), vi->second};
  }
  return ck;
}

PretrainState PretrainState::from_checkpoint(const Checkpoint& ckpt) {
  PretrainState s;
  try {
    if (ckpt.metadata.at("kind").get<std::string>() != "pretrain-state") {
      throw DataError("not a pretraining state checkpoint");
    }
    s = init_pretrain(encoder_config_from_json(ckpt.metadata.at("encoder")), 0);
    s.step = ckpt.metadata.at("step").get<std::uint64_t>();
    s.opt.step = ckpt.metadata.at("adam_step").get<std::uint64_t>();
    s.opt.cfg.beta1 = ckpt.metadata.at("beta1").get<double>();
    s.opt.cfg.beta2 = ckpt.metadata.at("beta2").get<double>();
    s.opt.cfg.eps = ckpt.metadata.at("eps").get<double>();
  } catch (const json::exception& e) {
    throw DataError(std::string("pretraining state metadata: ") + e.what());
  }
  const ParamList params = pretrain_params(s);
  restore_params(ckpt, params);
  for (const auto& p : params) {
    const auto mi = ckpt.entries.find("optimizer.m." + p.name);
    const auto vi = ckpt.entries.find("optimizer.v." + p.name);
    if (mi == ckpt.entries.end() || vi == ckpt.entries.end()) continue;
    s.opt.m[p.name] = mi->second.values;
    s.opt.v[p.name] = vi->second.values;
  }
  return s;
}

PretrainResult pretrain(PretrainState& state, std::span<const std::vector<std::size_t>> corpus,
                        std::span<const std::vector<std::size_t>> eval_corpus,
                        const PretrainConfig& cfg) {
  if (corpus.empty()) throw DataError("pretraining corpus is empty");
  const std::size_t max_len = state.encoder.config().max_len;
  const std::size_t vocab_size = state.encoder.config().vocab_size;
  auto chunked = [&](std::span<const std::vector<std::size_t>> seqs) {
    std::vector<std::vector<std::size_t>> out;
    for (const auto& s : seqs) {
      for (std::size_t b = 0; b < s.size(); b += max_len) {
        out.emplace_back(s.begin() + static_cast<std::ptrdiff_t>(b),
                         s.begin() + static_cast<std::ptrdiff_t>(std::min(s.size(), b + max_len)));
      }
    }
    return out;
  };
  const auto train = chunked(corpus);
  const auto held = chunked(eval_corpus);

  std::vector<MaskedSequence> eval_masked;
  {
    std::mt19937_64 rng(mix_seed(cfg.seed, 0, "mlm-eval"));
    for (const auto& s : held) eval_masked.push_back(apply_mask(s, cfg.mask, vocab_size, rng));
  }

  const ParamList params = pretrain_params(state);
  state.opt.cfg = cfg.adam;
  const LrSchedule sched{state.encoder.config().d_model, cfg.warmup_steps};
  const double peak = lr_at(sched, cfg.warmup_steps);
  const std::size_t per_epoch = (train.size() + cfg.batch_size - 1) / cfg.batch_size;
  std::uint64_t end = cfg.epochs * per_epoch;
  if (cfg.stop_at_step > 0) end = std::min<std::uint64_t>(end, cfg.stop_at_step);

  PretrainResult res;
  std::vector<std::size_t> order;
  std::size_t order_epoch = static_cast<std::size_t>(-1);
  for (std::uint64_t s = state.step + 1; s <= end; ++s) {
    const std::size_t epoch = (s - 1) / per_epoch, k = (s - 1) % per_epoch;
    if (epoch != order_epoch) {
      order.resize(train.size());
      std::iota(order.begin(), order.end(), 0);
      std::mt19937_64 shuffle_rng(mix_seed(cfg.seed, epoch, "mlm-order"));
      std::shuffle(order.begin(), order.end(), shuffle_rng);
      order_epoch = epoch;
    }
    std::mt19937_64 mask_rng(mix_seed(cfg.seed, s, "mlm-mask"));
    std::vector<MaskedSequence> batch;
    for (std::size_t r = k * cfg.batch_size; r < std::min(train.size(), (k + 1) * cfg.batch_size); ++r) {
      batch.push_back(apply_mask(train[order[r]], cfg.mask, vocab_size, mask_rng));
    }
    Tape tape(mix_seed(cfg.seed, s, "dropout"));
    const auto loss = mlm_loss(tape, state.encoder, state.head, batch, Mode::kTrain);
    state.step = s;
    if (!loss) {
      res.log += std::to_string(s) + "\tSKIP\n";
      continue;
    }
    tape.backward(*loss);
    const ClipReport clip = clip_gradients(params, cfg.max_norm);
    const double lr = cfg.base_lr * lr_at(sched, s) / peak;
    adam_update(params, state.opt, lr);
    zero_all(params);
    res.log += std::to_string(s) + "\tMLM\t" + fmt(loss->item()) + "\t" + fmt(lr) + "\t" +
               fmt(clip.pre_norm) + "\n";
    if (cfg.eval_interval > 0 && s % cfg.eval_interval == 0 && !eval_masked.empty()) {
      Tape eval_tape(0, false);
      const auto l = mlm_loss(eval_tape, state.encoder, state.head, eval_masked, Mode::kEval);
      if (l) {
        res.eval_losses.push_back(l->item());
        res.log += std::to_string(s) + "\tEVAL\t" + fmt(l->item()) + "\n";
      }
    }
  }
  return res;
}

}  // namespace punc
