#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "punc/error.hpp"
#include "punc/training.hpp"

using namespace punc;

namespace {

Tensor with_grad(std::vector<double> value, std::vector<double> grad) {
  const std::size_t n = value.size();
  Tensor t = Tensor::from({n}, std::move(value), true);
  t.node()->ensure_grad() = std::move(grad);
  return t;
}

struct Fixture {
  SynthCorpus corpus;
  Vocab vocab;
  ModelConfig cfg;

  Fixture() {
    SynthOptions o;
    o.pun_train = 48;
    o.pun_dev = 12;
    o.pos_train = 30;
    o.unlabeled = 1;
    corpus = synth_corpus(21, o);
    std::vector<std::vector<std::string>> words;
    for (const auto& s : corpus.pun_train) words.push_back(s.words);
    for (const auto& s : corpus.pos_train) words.push_back(s.words);
    vocab = build_vocab(words, 1);
    cfg.encoder.vocab_size = vocab.size();
    cfg.encoder.num_layers = 1;
    cfg.encoder.num_heads = 2;
    cfg.encoder.d_model = 8;
    cfg.encoder.d_k = cfg.encoder.d_v = 4;
    cfg.encoder.d_ff = 16;
    cfg.encoder.max_len = 64;
    cfg.lstm.num_cells = 4;
    cfg.lstm.projection_dim = 2;
    cfg.discriminator_hidden = 8;
  }

  TrainConfig train_cfg() const {
    TrainConfig t;
    t.seed = 5;
    t.epochs = 2;
    t.batch_size = 16;
    t.warmup_steps = 4;
    t.base_lr = 5e-3;
    t.eval_interval = 3;
    t.patience = 100;
    return t;
  }
};

std::vector<std::vector<std::string>> split_lines(const std::string& log) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(log);
  for (std::string line; std::getline(in, line);) {
    std::vector<std::string> cols;
    std::istringstream ls(line);
    for (std::string c; std::getline(ls, c, '\t');) cols.push_back(c);
    rows.push_back(cols);
  }
  return rows;
}

}  // namespace

TEST(Lr, FormulaValues) {
  const LrSchedule s{64, 4000};
  EXPECT_NEAR(lr_at(s, 4000), std::pow(64.0, -0.5) * std::pow(4000.0, -0.5), 1e-18);
  EXPECT_NEAR(lr_at(s, 4000), 1.97642e-3, 1e-8);
  EXPECT_NEAR(lr_at(s, 1), 4.9411e-7, 1e-11);
  EXPECT_THROW(lr_at(s, 0), RangeError);
}

TEST(Lr, PeakAtWarmupAndMonotone) {
  const LrSchedule s{32, 50};
  for (std::uint64_t t = 1; t < 50; ++t) EXPECT_LT(lr_at(s, t), lr_at(s, t + 1));
  for (std::uint64_t t = 50; t < 300; ++t) EXPECT_GT(lr_at(s, t), lr_at(s, t + 1));
}

TEST(Clip, Examples) {
  Tensor a = with_grad({0, 0}, {3, 4});
  ParamList p{{"a", a}};
  ClipReport r = clip_gradients(p, 1.0);
  EXPECT_DOUBLE_EQ(r.pre_norm, 5.0);
  EXPECT_NEAR(a.grad()[0], 0.6, 1e-15);
  EXPECT_NEAR(a.grad()[1], 0.8, 1e-15);
  EXPECT_LE(r.post_norm, 1.0 + 1e-12);

  Tensor b = with_grad({0, 0}, {0.3, 0.4});
  ParamList q{{"b", b}};
  r = clip_gradients(q, 1.0);
  EXPECT_EQ(b.grad(), (std::vector<double>{0.3, 0.4}));
  EXPECT_EQ(r.post_norm, r.pre_norm);
}

TEST(Clip, GlobalNormAcrossParameters) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0, 10);
  for (int trial = 0; trial < 100; ++trial) {
    ParamList p;
    for (int k = 0; k < 3; ++k) {
      std::vector<double> g(5);
      for (double& x : g) x = n(rng);
      p.push_back({"p" + std::to_string(k), with_grad(std::vector<double>(5, 0.0), g)});
    }
    const ClipReport r = clip_gradients(p, 5.0);
    double sq = 0;
    for (const auto& t : p)
      for (double g : t.tensor.grad()) sq += g * g;
    EXPECT_LE(std::sqrt(sq), 5.0 + 1e-12);
    EXPECT_NEAR(std::sqrt(sq), r.post_norm, 1e-12);
  }
}

TEST(Clip, NonFiniteNamesParameter) {
  ParamList p{{"ok", with_grad({0}, {1})}, {"encoder.bad", with_grad({0, 0}, {1, NAN})}};
  try {
    clip_gradients(p, 1.0);
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("encoder.bad"), std::string::npos);
  }
}

TEST(Adam, FirstStepMovesByLr) {
  Tensor x = with_grad({0.0}, {1.0});
  OptimizerState st;
  adam_update({{"x", x}}, st, 0.1);
  EXPECT_NEAR(x.values()[0], -0.1, 1e-8);
  EXPECT_EQ(st.step, 1u);
}

TEST(Adam, ZeroGradLeavesParameter) {
  Tensor x = with_grad({1.5, -2.0}, {0.0, 0.0});
  OptimizerState st;
  for (int i = 0; i < 10; ++i) adam_update({{"x", x}}, st, 0.1);
  EXPECT_EQ(x.values()[0], 1.5);
  EXPECT_EQ(x.values()[1], -2.0);
  EXPECT_EQ(st.step, 10u);
}

TEST(Adam, Deterministic) {
  auto run = [] {
    Tensor x = with_grad({0.5, 0.25}, {0, 0});
    OptimizerState st;
    std::vector<double> traj;
    for (int i = 0; i < 20; ++i) {
      auto& g = x.node()->ensure_grad();
      g = {std::sin(i * 1.0), std::cos(i * 0.5)};
      adam_update({{"x", x}}, st, 0.01);
      traj.insert(traj.end(), x.values().begin(), x.values().end());
    }
    return traj;
  };
  EXPECT_EQ(run(), run());
}

TEST(EarlyStop, PatienceAndMinDelta) {
  EarlyStopState es;
  es.patience = 2;
  es.min_delta = 0.001;
  EXPECT_TRUE(es.update(0.50));
  EXPECT_TRUE(es.update(0.60));
  // new best, but below min_delta: the patience counter keeps running
  EXPECT_TRUE(es.update(0.6005));
  EXPECT_EQ(es.since_improvement, 1u);
  EXPECT_FALSE(es.stop);
  EXPECT_TRUE(es.update(0.70));
  EXPECT_FALSE(es.update(0.69));
  EXPECT_FALSE(es.update(0.70));
  EXPECT_TRUE(es.stop);
  EXPECT_DOUBLE_EQ(es.best, 0.70);
}

TEST(Train, LogColumnsAndLambda) {
  Fixture f;
  AdversarialModel m(f.cfg, 3);
  const TrainConfig tc = f.train_cfg();
  const auto r = train_multitask(m, f.vocab, f.corpus.pun_train, f.corpus.pos_train,
                                 f.corpus.pun_dev, tc, kKindAdversarial);
  const std::size_t n_pun = 3, n_pos = 2;
  const double total = static_cast<double>(tc.epochs * (n_pun + n_pos));
  std::size_t steps = 0, pun = 0, pos = 0, evals = 0;
  for (const auto& row : split_lines(r.log)) {
    if (row[1] == "EVAL") {
      ASSERT_EQ(row.size(), 14u);
      ++evals;
      continue;
    }
    ASSERT_EQ(row.size(), 8u);
    ++steps;
    EXPECT_EQ(std::stoull(row[0]), steps);
    (row[1] == "PUN" ? pun : pos)++;
    const double l_task = std::stod(row[2]), l_adv = std::stod(row[3]), lambda = std::stod(row[4]),
                 l_total = std::stod(row[7]);
    EXPECT_NEAR(lambda, lambda_at(std::min(1.0, steps / total)), 1e-12);
    EXPECT_NEAR(l_total, l_task + lambda * l_adv, 1e-12);
    EXPECT_GT(l_adv, 0.0);
    EXPECT_NEAR(std::stod(row[5]), tc.base_lr * lr_at({8, 4}, steps) / lr_at({8, 4}, 4), 1e-15);
  }
  EXPECT_EQ(steps, r.steps);
  EXPECT_EQ(pun, tc.epochs * n_pun);
  EXPECT_EQ(pos, tc.epochs * n_pos);
  EXPECT_GE(evals, 3u);
}

TEST(Train, BestCheckpointBookkeeping) {
  Fixture f;
  AdversarialModel m(f.cfg, 3);
  const auto r = train_multitask(m, f.vocab, f.corpus.pun_train, f.corpus.pos_train,
                                 f.corpus.pun_dev, f.train_cfg(), kKindAdversarial);
  for (const auto& row : split_lines(r.log)) {
    if (row[1] == "EVAL") {
      EXPECT_GE(r.best_f1, std::stod(row[13]) - 1e-9);
    }
  }
  EXPECT_EQ(r.best_report.overall.f1(), r.best_f1);
  // the model holds the best parameters on return
  const auto again = evaluate(m, f.vocab, f.corpus.pun_dev);
  EXPECT_EQ(again.overall.f1(), r.best_f1);
  EXPECT_EQ(model_checkpoint(m, kKindAdversarial, f.vocab, 5, r.best.metadata.at("step").get<std::uint64_t>()).serialize(),
            r.best.serialize());
}

TEST(Train, LambdaZeroWithoutPosEqualsSingleTask) {
  Fixture f;
  PunctuationTagger single(f.cfg, 8);
  AdversarialModel adv(f.cfg, 8);
  TrainConfig a = f.train_cfg();
  const auto rs = train_multitask(single, f.vocab, f.corpus.pun_train, {}, f.corpus.pun_dev, a,
                                  kKindTagger);
  a.force_lambda = 0.0;
  a.pos_weight = 0.0;
  const auto ra = train_multitask(adv, f.vocab, f.corpus.pun_train, f.corpus.pos_train,
                                  f.corpus.pun_dev, a, kKindAdversarial);
  EXPECT_EQ(rs.log, ra.log);
}

TEST(Train, ReplayDeterminism) {
  Fixture f;
  auto run = [&] {
    AdversarialModel m(f.cfg, 4);
    return train_multitask(m, f.vocab, f.corpus.pun_train, f.corpus.pos_train, f.corpus.pun_dev,
                           f.train_cfg(), kKindAdversarial);
  };
  const auto a = run(), b = run();
  EXPECT_EQ(a.log, b.log);
  EXPECT_EQ(a.best.serialize(), b.best.serialize());
  EXPECT_EQ(a.best_f1, b.best_f1);
}

TEST(Train, RejectsEmptyCorpora) {
  Fixture f;
  PunctuationTagger m(f.cfg, 1);
  EXPECT_THROW(train_multitask(m, f.vocab, {}, {}, f.corpus.pun_dev, f.train_cfg(), kKindTagger),
               DataError);
  EXPECT_THROW(train_multitask(m, f.vocab, f.corpus.pun_train, {}, {}, f.train_cfg(), kKindTagger),
               DataError);
}

namespace {

struct PretrainFixture {
  Vocab vocab;
  std::vector<std::vector<std::size_t>> train, held;
  EncoderConfig enc;

  PretrainFixture() {
    SynthOptions o;
    o.pun_train = 1;
    o.pun_dev = 1;
    o.pos_train = 1;
    o.unlabeled = 260;
    const auto c = synth_corpus(31, o);
    vocab = build_vocab(c.unlabeled, 1);
    for (std::size_t i = 0; i < c.unlabeled.size(); ++i) {
      (i < 220 ? train : held).push_back(vocab.encode(c.unlabeled[i]));
    }
    enc.vocab_size = vocab.size();
    enc.num_layers = 1;
    enc.num_heads = 2;
    enc.d_model = 16;
    enc.d_k = enc.d_v = 8;
    enc.d_ff = 32;
    enc.max_len = 64;
  }

  PretrainConfig cfg() const {
    PretrainConfig p;
    p.seed = 3;
    p.epochs = 3;
    p.batch_size = 16;
    p.warmup_steps = 10;
    p.base_lr = 3e-3;
    p.eval_interval = 10;
    return p;
  }
};

}  // namespace

TEST(Pretrain, EvalLossDecreases) {
  PretrainFixture f;
  PretrainState st = init_pretrain(f.enc, 3);
  const auto r = pretrain(st, f.train, f.held, f.cfg());
  ASSERT_GE(r.eval_losses.size(), 3u);
  EXPECT_LT(r.eval_losses[1], r.eval_losses[0]);
  EXPECT_LT(r.eval_losses[2], r.eval_losses[1]);
}

TEST(Pretrain, ResumeMatchesUninterruptedRun) {
  PretrainFixture f;
  PretrainState full = init_pretrain(f.enc, 3);
  const auto r_full = pretrain(full, f.train, f.held, f.cfg());

  PretrainState part = init_pretrain(f.enc, 3);
  PretrainConfig first = f.cfg();
  first.stop_at_step = 17;
  const auto r1 = pretrain(part, f.train, f.held, first);
  EXPECT_EQ(part.step, 17u);
  const std::string bytes = part.to_checkpoint(f.vocab).serialize();
  PretrainState resumed = PretrainState::from_checkpoint(Checkpoint::deserialize(bytes));
  const auto r2 = pretrain(resumed, f.train, f.held, f.cfg());

  EXPECT_EQ(r1.log + r2.log, r_full.log);
  EXPECT_EQ(resumed.to_checkpoint(f.vocab).serialize(), full.to_checkpoint(f.vocab).serialize());
}

TEST(Pretrain, EncoderCheckpointHoldsEncoderOnly) {
  PretrainFixture f;
  PretrainState st = init_pretrain(f.enc, 3);
  PretrainConfig c = f.cfg();
  c.stop_at_step = 2;
  pretrain(st, f.train, f.held, c);
  const Checkpoint ck = encoder_checkpoint(st.encoder, f.vocab, 3, st.step);
  ParamList enc;
  st.encoder.collect(enc, "encoder.");
  EXPECT_EQ(ck.entries.size(), enc.size());
  for (const auto& [name, e] : ck.entries) EXPECT_EQ(name.rfind("encoder.", 0), 0u) << name;
  EXPECT_EQ(ck.metadata["kind"], "encoder");
  EXPECT_THROW(PretrainState::from_checkpoint(ck), DataError);
}

TEST(MixSeed, DistinctStreams) {
  EXPECT_EQ(mix_seed(1, 2, "a"), mix_seed(1, 2, "a"));
  EXPECT_NE(mix_seed(1, 2, "a"), mix_seed(1, 3, "a"));
  EXPECT_NE(mix_seed(1, 2, "a"), mix_seed(1, 2, "b"));
  EXPECT_NE(mix_seed(1, 2, "a"), mix_seed(2, 2, "a"));
}
