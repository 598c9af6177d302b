#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>
#include <vector>

#include "oracles.hpp"
#include "punc/error.hpp"
#include "punc/eval.hpp"
#include "punc/gradcheck.hpp"
#include "punc/models.hpp"
#include "punc/training.hpp"

using namespace punc;

namespace {

const std::vector<std::string> kWords = {"susan", "where", "is",  "the",   "national",
                                         "library", "it",  "a",   "morning", "oh"};

Vocab tiny_vocab() { return Vocab(kWords); }

ModelConfig tiny_config(std::size_t vocab_size, std::size_t d_model = 8) {
  ModelConfig c;
  c.encoder.vocab_size = vocab_size;
  c.encoder.num_layers = 1;
  c.encoder.num_heads = 2;
  c.encoder.d_model = d_model;
  c.encoder.d_k = c.encoder.d_v = d_model / 2;
  c.encoder.d_ff = 2 * d_model;
  c.encoder.max_len = 12;
  c.encoder.dropout_rate = 0.1;
  c.lstm.num_cells = 4;
  c.lstm.projection_dim = 2;
  c.discriminator_hidden = 6;
  return c;
}

LabeledSequence pun(std::vector<std::string> w, std::vector<int> l) {
  return {std::move(w), std::move(l), Task::kPun};
}

LabeledSequence table1() {
  return pun({"susan", "where", "is", "the", "national", "library"},
             {kComma, kO, kO, kO, kO, kQuestion});
}

LabeledSequence table2() {
  LabeledSequence s;
  s.words = {"oh", "it", "is", "a", "beautiful", "morning"};
  for (auto t : {"UH", "PRP", "VBZ", "DT", "JJ", "NN"}) s.labels.push_back(*pos_tag_id(t));
  s.task = Task::kPos;
  return s;
}

Batch one_batch(std::vector<LabeledSequence> seqs, const Vocab& v) {
  auto b = make_batches(seqs, v, seqs.size(), 12, std::nullopt);
  return b.at(0);
}

std::vector<double> grads_of(const ParamList& p, std::string_view prefix) {
  std::vector<double> g;
  for (const auto& n : p) {
    if (n.name.rfind(prefix, 0) != 0) continue;
    auto v = n.tensor.grad();
    g.insert(g.end(), v.begin(), v.end());
  }
  return g;
}

void zero_grads(const ParamList& p) {
  for (auto n : p) n.tensor.zero_grad();
}

}  // namespace

TEST(Models, PaddedBatchMatchesSingleSequence) {
  const Vocab v = tiny_vocab();
  PunctuationTagger m(tiny_config(v.size()), 3);
  const auto s = pun({"where", "is", "it"}, {kO, kO, kQuestion});
  Tape t1(0, false), t2(0, false);
  const auto alone = punctuation_forward(t1, m, one_batch({s}, v), Mode::kEval);
  const auto padded = punctuation_forward(t2, m, one_batch({s, table1()}, v), Mode::kEval);
  EXPECT_NEAR(alone.nll[0].item(), padded.nll[0].item(), 1e-8);
  EXPECT_EQ(alone.labels[0], padded.labels[0]);
}

TEST(Models, TaggingExampleShapeContract) {
  const Vocab v = tiny_vocab();
  PunctuationTagger m(tiny_config(v.size()), 4);
  const auto ids = v.encode(table1().words);
  const auto labels = predict_punctuation(m, ids);
  ASSERT_EQ(labels.size(), 6u);
  for (int l : labels) {
    EXPECT_GE(l, 0);
    EXPECT_LT(l, 4);
  }
  Tape tape(0, false);
  const auto out = punctuation_forward(tape, m, one_batch({table1()}, v), Mode::kEval);
  EXPECT_EQ(out.labels[0], labels);
  EXPECT_EQ(predict_punctuation(m, ids), labels);
  EXPECT_TRUE(predict_punctuation(m, std::vector<std::size_t>{}).empty());
}

TEST(Models, LongInputDecodedInWindows) {
  const Vocab v = tiny_vocab();
  PunctuationTagger m(tiny_config(v.size()), 4);
  std::vector<std::size_t> ids(30, v.id("the"));
  EXPECT_EQ(predict_punctuation(m, ids).size(), 30u);
}

TEST(Models, HeadsShareNothing) {
  const Vocab v = tiny_vocab();
  AdversarialModel m(tiny_config(v.size()), 5);
  EXPECT_EQ(m.pun_head.num_labels(), 4u);
  EXPECT_EQ(m.pos_head.num_labels(), 36u);
  std::set<const void*> seen;
  std::set<std::string> names;
  for (const auto& p : m.parameters()) {
    EXPECT_TRUE(seen.insert(p.tensor.node()).second) << p.name;
    EXPECT_TRUE(names.insert(p.name).second) << p.name;
  }
}

TEST(Models, IdenticalInitAcrossVariants) {
  const Vocab v = tiny_vocab();
  PunctuationTagger a(tiny_config(v.size()), 9);
  AdversarialModel b(tiny_config(v.size()), 9);
  const auto pa = a.parameters(), pb = b.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    ASSERT_EQ(pa[i].name, pb[i].name);
    EXPECT_TRUE(std::equal(pa[i].tensor.values().begin(), pa[i].tensor.values().end(),
                           pb[i].tensor.values().begin()));
  }
}

TEST(Models, LambdaZeroSharedGradsEqualSingleTask) {
  const Vocab v = tiny_vocab();
  AdversarialModel m(tiny_config(v.size()), 6);
  const auto params = m.parameters();
  const Batch b = one_batch({table1(), pun({"the", "morning"}, {kO, kPeriod})}, v);
  auto run = [&](std::optional<double> lambda) {
    zero_grads(params);
    Tape tape(17);
    tape.backward(multitask_step(tape, m, b, lambda).total);
    return grads_of(params, "encoder.");
  };
  const auto with = run(0.0), without = run(std::nullopt);
  ASSERT_EQ(with.size(), without.size());
  for (std::size_t i = 0; i < with.size(); ++i) EXPECT_NEAR(with[i], without[i], 1e-12);
}

TEST(Models, PosBatchNeverTouchesPunctuationHead) {
  const Vocab v = tiny_vocab();
  AdversarialModel m(tiny_config(v.size()), 7);
  const auto params = m.parameters();
  zero_grads(params);
  Tape tape(3);
  tape.backward(multitask_step(tape, m, one_batch({table2()}, v), 0.5).total);
  for (double g : grads_of(params, "pun_head.")) EXPECT_EQ(g, 0.0);
  double pos_mass = 0.0, disc_mass = 0.0;
  for (double g : grads_of(params, "pos_head.")) pos_mass += std::abs(g);
  for (double g : grads_of(params, "discriminator.")) disc_mass += std::abs(g);
  EXPECT_GT(pos_mass, 0.0);
  EXPECT_GT(disc_mass, 0.0);
}

TEST(Models, TotalLossIdentity) {
  const Vocab v = tiny_vocab();
  AdversarialModel m(tiny_config(v.size()), 8);
  for (double lambda : {0.0, 0.25, 0.9}) {
    for (const auto& s : {table1(), table2()}) {
      Tape tape(1);
      const auto L = multitask_step(tape, m, one_batch({s}, v), lambda);
      EXPECT_NEAR(L.total.item(), L.task.item() + lambda * L.adv.item(), 1e-12);
      EXPECT_EQ(L.lambda, lambda);
    }
  }
}

TEST(Models, PredictionUsesOnlyPunctuationPath) {
  const Vocab v = tiny_vocab();
  AdversarialModel m(tiny_config(v.size()), 10);
  Tape tape(2);
  multitask_step(tape, m, one_batch({table2()}, v), 0.3);
  ASSERT_GT(m.pos_head.forward_count.load(), 0u);
  ASSERT_GT(m.discriminator_count.load(), 0u);
  m.pos_head.forward_count.reset();
  m.discriminator_count.reset();
  m.pun_head.forward_count.reset();
  predict_punctuation(m, v.encode(table1().words));
  restore(m, v, "Susan, where is the national library?");
  evaluate(m, v, std::vector<LabeledSequence>{table1()});
  EXPECT_EQ(m.pos_head.forward_count.load(), 0u);
  EXPECT_EQ(m.discriminator_count.load(), 0u);
  EXPECT_EQ(m.pun_head.forward_count.load(), 3u);
}

TEST(Models, EndToEndGradientCheck) {
  const Vocab v = tiny_vocab();
  AdversarialModel m(tiny_config(v.size()), 11);
  ParamList params = m.parameters();
  std::vector<Tensor> all;
  for (const auto& p : params) all.push_back(p.tensor);
  const Batch pun_b = one_batch({pun({"where", "is", "it"}, {kO, kO, kQuestion}),
                                 pun({"oh", "the", "library", "is"}, {kComma, kO, kO, kPeriod})},
                                v);
  const Batch pos_b = one_batch({table2()}, v);
  // the GRL reroutes gradients on purpose, so the composed loss is checked
  // with its value-consistent form: head NLL + discriminator NLL on shared
  // features, for both task batches
  auto composed = [&](Tape& t) {
    std::vector<Tensor> task, adv;
    for (const Batch* b : {&pun_b, &pos_b}) {
      const TaskHead& head = m.head(b->task);
      for (std::size_t r = 0; r < b->batch_size; ++r) {
        const Tensor h = m.encoder.forward(t, b->row_ids(r), {}, Mode::kTrain);
        task.push_back(crf_nll(t, head.emissions(t, h), b->row_labels(r), head.crf));
        adv.push_back(adversarial_loss(t, max_pool_over_time(t, h, {}),
                                       static_cast<std::size_t>(b->task), m.discriminator));
      }
    }
    return total_loss(t, task, adv, 1.0);
  };
  EXPECT_LT(ad::check_gradients(composed, all, 1e-5, 4), 1e-4);

  // multitask_step itself: parameters that sit downstream of the GRL see the
  // plain derivative of the total
  std::vector<Tensor> downstream;
  for (const auto& p : params) {
    if (p.name.rfind("encoder.", 0) != 0) downstream.push_back(p.tensor);
  }
  auto step = [&](Tape& t) { return multitask_step(t, m, pun_b, 1.0).total; };
  EXPECT_LT(ad::check_gradients(step, downstream, 1e-5, 5), 1e-4);
  auto no_adv = [&](Tape& t) { return multitask_step(t, m, pos_b, std::nullopt).total; };
  EXPECT_LT(ad::check_gradients(no_adv, all, 1e-5, 6), 1e-4);
}

TEST(Models, MlmUniformLogitsGiveLogTwo) {
  EncoderConfig c = tiny_config(5).encoder;
  EncoderStack enc(c, 1);
  MlmHead head(c.d_model, 2, 1);
  auto w = head.proj.weight.mutable_values();
  std::fill(w.begin(), w.end(), 0.0);
  MaskedSequence s{{3, Vocab::kMask, 4, 3}, {1, 3}, {1, 0}};
  Tape tape;
  const auto loss = mlm_loss(tape, enc, head, std::span(&s, 1), Mode::kEval);
  ASSERT_TRUE(loss);
  EXPECT_NEAR(loss->item(), std::log(2.0), 1e-12);
}

TEST(Models, MlmLossCountsMaskedPositionsOnly) {
  EncoderConfig c = tiny_config(12).encoder;
  EncoderStack enc(c, 2);
  MlmHead head(c.d_model, 12, 2);
  MaskedSequence s{{5, Vocab::kMask, 7, 9, Vocab::kMask}, {1, 4}, {6, 11}};
  Tape tape(0, false);
  const double loss = mlm_loss(tape, enc, head, std::span(&s, 1), Mode::kEval)->item();

  // oracle: full-sequence logits, averaged NLL over the masked rows
  const Tensor hidden = enc.forward(tape, s.ids, {}, Mode::kEval);
  const Tensor logits = head.logits(tape, hidden);
  auto nll_at = [&](std::vector<double> lg, std::size_t row, std::size_t target) {
    double mx = -1e300, z = 0.0;
    for (std::size_t k = 0; k < 12; ++k) mx = std::max(mx, lg[row * 12 + k]);
    for (std::size_t k = 0; k < 12; ++k) z += std::exp(lg[row * 12 + k] - mx);
    return -(lg[row * 12 + target] - mx - std::log(z));
  };
  std::vector<double> lg(logits.values().begin(), logits.values().end());
  const double expect = (nll_at(lg, 1, 6) + nll_at(lg, 4, 11)) / 2.0;
  EXPECT_NEAR(loss, expect, 1e-12);
  // corrupt the unmasked rows: nothing changes
  for (std::size_t row : {0u, 2u, 3u})
    for (std::size_t k = 0; k < 12; ++k) lg[row * 12 + k] += 1000.0 * static_cast<double>(k % 3);
  EXPECT_NEAR((nll_at(lg, 1, 6) + nll_at(lg, 4, 11)) / 2.0, loss, 1e-12);

  MaskedSequence none{{5, 6}, {}, {}};
  EXPECT_FALSE(mlm_loss(tape, enc, head, std::span(&none, 1), Mode::kEval));
}

TEST(Models, MaskPolicySemantics) {
  const std::size_t V = 40;
  std::mt19937_64 rng(3);
  std::size_t selected = 0, masked = 0, random = 0, kept = 0;
  for (int trial = 0; trial < 2000; ++trial) {
    std::vector<std::size_t> ids(20);
    for (auto& id : ids) id = 3 + rng() % (V - 3);
    ids[0] = Vocab::kPad;
    ids[1] = Vocab::kMask;
    const auto m = apply_mask(ids, MaskPolicy{}, V, rng);
    // 15% of the 18 maskable positions, rounded
    ASSERT_EQ(m.positions.size(), 3u);
    for (std::size_t i = 0; i < m.positions.size(); ++i) {
      const auto p = m.positions[i];
      ASSERT_GE(p, 2u);
      ASSERT_EQ(m.targets[i], ids[p]);
      ++selected;
      if (m.ids[p] == Vocab::kMask) ++masked;
      else if (m.ids[p] == ids[p]) ++kept;
      else ++random;
    }
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (std::find(m.positions.begin(), m.positions.end(), i) == m.positions.end()) {
        ASSERT_EQ(m.ids[i], ids[i]);
      }
    }
  }
  const double n = static_cast<double>(selected);
  EXPECT_NEAR(masked / n, 0.8, 0.02);
  // random replacements that happen to hit the original id count as kept
  EXPECT_NEAR(random / n, 0.1 * (V - 4.0) / (V - 3.0), 0.02);
  EXPECT_NEAR(kept / n, 0.1 + 0.1 / (V - 3.0), 0.02);
  std::vector<std::size_t> two = {7, 8};
  EXPECT_EQ(apply_mask(two, MaskPolicy{}, V, rng).positions.size(), 1u);
}

TEST(Models, MlmTrainingLowersLoss) {
  SynthOptions o;
  o.pun_train = 50;
  o.pun_dev = 1;
  o.pos_train = 1;
  o.unlabeled = 1;
  const auto corpus = synth_corpus(5, o);
  std::vector<std::vector<std::string>> words;
  for (const auto& s : corpus.pun_train) words.push_back(s.words);
  const Vocab v = build_vocab(words, 1);
  std::vector<std::vector<std::size_t>> ids;
  for (const auto& w : words) ids.push_back(v.encode(w));

  EncoderConfig c = tiny_config(v.size(), 16).encoder;
  c.max_len = 64;
  PretrainState st = init_pretrain(c, 1);
  std::mt19937_64 rng(99);
  std::vector<MaskedSequence> fixed;
  for (const auto& s : ids) fixed.push_back(apply_mask(s, MaskPolicy{}, v.size(), rng));
  auto loss_now = [&] {
    Tape t(0, false);
    return mlm_loss(t, st.encoder, st.head, fixed, Mode::kEval)->item();
  };
  const double before = loss_now();
  PretrainConfig pc;
  pc.batch_size = 1;
  pc.epochs = 4;  // 200 steps
  pc.warmup_steps = 20;
  pc.base_lr = 3e-3;
  pc.eval_interval = 0;
  pretrain(st, ids, {}, pc);
  EXPECT_EQ(st.step, 200u);
  EXPECT_LT(loss_now(), before);
}

TEST(Models, TransferCopiesEncoderOnly) {
  const Vocab v = tiny_vocab();
  const ModelConfig cfg = tiny_config(v.size());
  EncoderStack source(cfg.encoder, 100);
  const Checkpoint ck = encoder_checkpoint(source, v, 100, 0);
  for (const auto& [name, e] : ck.entries) EXPECT_EQ(name.rfind("encoder.", 0), 0u) << name;

  AdversarialModel fresh(cfg, 7), target(cfg, 7);
  const auto report = transfer_encoder_params(ck, target);
  ParamList src;
  source.collect(src, "encoder.");
  EXPECT_EQ(report.transferred.size(), src.size());
  ParamList tgt;
  target.encoder.collect(tgt, "encoder.");
  for (std::size_t i = 0; i < src.size(); ++i) {
    EXPECT_TRUE(std::equal(src[i].tensor.values().begin(), src[i].tensor.values().end(),
                           tgt[i].tensor.values().begin()));
  }
  const auto tp = target.parameters(), fp = fresh.parameters();
  std::size_t heads = 0;
  for (std::size_t i = 0; i < tp.size(); ++i) {
    if (tp[i].name.rfind("encoder.", 0) == 0) continue;
    ++heads;
    EXPECT_TRUE(std::equal(tp[i].tensor.values().begin(), tp[i].tensor.values().end(),
                           fp[i].tensor.values().begin()));
    EXPECT_TRUE(std::binary_search(report.skipped.begin(), report.skipped.end(), tp[i].name));
  }
  EXPECT_EQ(report.skipped.size(), heads);
  EXPECT_TRUE(std::binary_search(report.skipped.begin(), report.skipped.end(), "pun_head.emit.weight"));
}

TEST(Models, TransferRejectsMismatch) {
  const Vocab v = tiny_vocab();
  EncoderStack big(tiny_config(v.size(), 16).encoder, 1);
  PunctuationTagger small(tiny_config(v.size(), 8), 1);
  try {
    transfer_encoder_params(encoder_checkpoint(big, v, 1, 0), small);
    FAIL() << "expected TransferError";
  } catch (const TransferError& e) {
    EXPECT_NE(std::string(e.what()).find("shape mismatch for encoder."), std::string::npos);
  }
  Checkpoint partial = encoder_checkpoint(EncoderStack(tiny_config(v.size()).encoder, 1), v, 1, 0);
  partial.entries.erase("encoder.layer0.ln2.bias");
  try {
    transfer_encoder_params(partial, small);
    FAIL() << "expected TransferError";
  } catch (const TransferError& e) {
    EXPECT_NE(std::string(e.what()).find("missing encoder.layer0.ln2.bias"), std::string::npos);
  }
}

TEST(Models, CheckpointRoundTrip) {
  const Vocab v = tiny_vocab();
  AdversarialModel m(tiny_config(v.size()), 12);
  const Checkpoint ck = model_checkpoint(m, kKindAdversarial, v, 12, 34);
  const std::string bytes = ck.serialize();
  EXPECT_EQ(bytes.substr(0, 4), "PFCK");
  EXPECT_EQ(Checkpoint::deserialize(bytes).serialize(), bytes);

  const std::string path = ::testing::TempDir() + "/round.ckpt";
  ck.save(path);
  const Checkpoint back = Checkpoint::load(path);
  back.save(path + "2");
  EXPECT_EQ(Checkpoint::load(path + "2").serialize(), bytes);

  const LoadedModel lm = load_model(back);
  EXPECT_EQ(lm.kind, "adversarial");
  EXPECT_NE(dynamic_cast<AdversarialModel*>(lm.model.get()), nullptr);
  EXPECT_EQ(lm.vocab.serialize(), v.serialize());
  EXPECT_EQ(model_checkpoint(*lm.model, kKindAdversarial, v, 12, 34).serialize(), bytes);
  const auto ids = v.encode(table1().words);
  EXPECT_EQ(predict_punctuation(*lm.model, ids), predict_punctuation(m, ids));
}

TEST(Models, CheckpointRejectsCorruption) {
  const Vocab v = tiny_vocab();
  PunctuationTagger m(tiny_config(v.size()), 1);
  const std::string bytes = model_checkpoint(m, kKindTagger, v, 1, 0).serialize();
  EXPECT_THROW(Checkpoint::deserialize("XFCK" + bytes.substr(4)), DataError);
  EXPECT_THROW(Checkpoint::deserialize(bytes.substr(0, bytes.size() / 2)), DataError);
  EXPECT_THROW(Checkpoint::deserialize(bytes + "x"), DataError);
  std::string v2 = bytes;
  v2[4] = 2;
  EXPECT_THROW(Checkpoint::deserialize(v2), DataError);
  EXPECT_THROW(load_model(encoder_checkpoint(m.encoder, v, 1, 0)), DataError);
}
