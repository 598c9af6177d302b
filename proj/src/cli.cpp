#include "punc/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "punc/error.hpp"
#include "punc/eval.hpp"
#include "punc/training.hpp"

namespace punc {

namespace {

namespace fs = std::filesystem;

struct Common {
  std::uint64_t seed = 1;
  std::string out_dir = ".";
  std::string config;
};

// Splices the entries of a --config file in front of the command-line flags
// of the subcommand, so that later (explicit) flags win.
std::vector<std::string> expand_config(int argc, const char* const* argv) {
  std::vector<std::string> args(argv, argv + argc);
  if (args.size() < 2) return args;
  std::string path;
  for (std::size_t i = 2; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    else if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
  }
  if (path.empty()) return args;
  if (!fs::is_regular_file(path)) throw DataError("cannot open config file " + path);
  std::vector<std::string> spliced;
  for (const CLI::ConfigItem& item : CLI::ConfigINI().from_file(path)) {
    if (!item.parents.empty() && !(item.parents.size() == 1 && item.parents[0] == args[1])) continue;
    if (item.name == "config" || item.name == "++" || item.name == "--") continue;
    if (item.inputs.size() == 1) {
      spliced.push_back("--" + item.name + "=" + item.inputs[0]);
    } else {
      spliced.push_back("--" + item.name);
      spliced.insert(spliced.end(), item.inputs.begin(), item.inputs.end());
    }
  }
  args.insert(args.begin() + 2, spliced.begin(), spliced.end());
  return args;
}

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "key=value file; command-line flags take precedence");
  sub->add_option("--seed", c.seed, "Random seed")->capture_default_str();
  sub->add_option("--out-dir", c.out_dir, "Directory for outputs")->capture_default_str();
}

struct EncoderFlags {
  std::size_t layers = 2, heads = 4, d_model = 64, d_ff = 128, max_len = 64;
  double dropout = 0.1;

  EncoderConfig config(std::size_t vocab_size) const {
    EncoderConfig c;
    c.vocab_size = vocab_size;
    c.num_layers = layers;
    c.num_heads = heads;
    c.d_model = d_model;
    c.d_k = c.d_v = heads ? d_model / heads : 0;
    c.d_ff = d_ff;
    c.max_len = max_len;
    c.dropout_rate = dropout;
    return c;
  }
};

void add_encoder(CLI::App* sub, EncoderFlags& e) {
  sub->add_option("--layers", e.layers, "Encoder layers")->capture_default_str();
  sub->add_option("--heads", e.heads, "Attention heads")->capture_default_str();
  sub->add_option("--d-model", e.d_model, "Model width")->capture_default_str();
  sub->add_option("--d-ff", e.d_ff, "Feed-forward width")->capture_default_str();
  sub->add_option("--max-len", e.max_len, "Maximum sequence length")->capture_default_str();
  sub->add_option("--dropout", e.dropout, "Dropout rate")->capture_default_str();
}

fs::path out_path(const Common& c, const std::string& name) {
  fs::create_directories(c.out_dir);
  return fs::path(c.out_dir) / name;
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw DataError("cannot write " + p.string());
  out << text;
}

std::vector<std::vector<std::string>> read_plain_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open corpus " + path);
  std::vector<std::vector<std::string>> out;
  for (std::string line; std::getline(in, line);) {
    try {
      out.push_back(strip_punctuation(line));
    } catch (const DataError&) {
      // no words on this line
    }
  }
  return out;
}

Vocab vocab_from(std::initializer_list<const std::vector<LabeledSequence>*> corpora,
                 std::size_t min_count) {
  std::vector<std::vector<std::string>> texts;
  for (const auto* c : corpora) {
    for (const auto& s : *c) texts.push_back(s.words);
  }
  return build_vocab(texts, min_count);
}

// ---------------------------------------------------------------------------

struct PrepareArgs {
  Common common;
  SynthOptions synth;
  std::size_t min_count = 1;
};

void cmd_prepare(const PrepareArgs& a, std::ostream& out) {
  const SynthCorpus c = synth_corpus(a.common.seed, a.synth);
  write_pun_corpus(out_path(a.common, "pun_train.txt"), c.pun_train);
  write_pun_corpus(out_path(a.common, "pun_dev.txt"), c.pun_dev);
  write_pos_corpus(out_path(a.common, "pos_train.txt"), c.pos_train);
  std::string unlabeled;
  for (const auto& words : c.unlabeled) {
    for (std::size_t i = 0; i < words.size(); ++i) unlabeled += (i ? " " : "") + words[i];
    unlabeled += '\n';
  }
  write_file(out_path(a.common, "unlabeled.txt"), unlabeled);
  std::vector<std::vector<std::string>> texts;
  for (const auto& s : c.pun_train) texts.push_back(s.words);
  for (const auto& s : c.pos_train) texts.push_back(s.words);
  texts.insert(texts.end(), c.unlabeled.begin(), c.unlabeled.end());
  const Vocab v = build_vocab(texts, a.min_count);
  v.save(out_path(a.common, "vocab.txt").string());
  out << "wrote " << c.pun_train.size() << " train, " << c.pun_dev.size() << " dev, "
      << c.pos_train.size() << " POS and " << c.unlabeled.size()
      << " unlabeled sentences; vocabulary " << v.size() << " to " << a.common.out_dir << "\n";
}

struct PretrainArgs {
  Common common;
  EncoderFlags enc;
  PretrainConfig cfg;
  std::string corpus, vocab, resume;
  double dev_fraction = 0.05;
  std::size_t min_count = 1;
};

int cmd_pretrain(PretrainArgs a, std::ostream& out) {
  a.cfg.seed = a.common.seed;
  const auto sentences = read_plain_corpus(a.corpus);
  if (sentences.empty()) throw DataError("pretraining corpus " + a.corpus + " has no sentences");
  PretrainState state;
  Vocab vocab;
  if (!a.resume.empty()) {
    const Checkpoint ck = Checkpoint::load(a.resume);
    state = PretrainState::from_checkpoint(ck);
    vocab = Vocab::deserialize(ck.metadata.at("vocab").get<std::string>());
  } else {
    vocab = a.vocab.empty() ? build_vocab(sentences, a.min_count) : Vocab::load(a.vocab);
    state = init_pretrain(a.enc.config(vocab.size()), a.common.seed);
  }
  std::vector<std::vector<std::size_t>> train, dev;
  const auto every = a.dev_fraction > 0.0
                         ? std::max<std::size_t>(1, static_cast<std::size_t>(1.0 / a.dev_fraction))
                         : 0;
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    (every && i % every == 0 ? dev : train).push_back(vocab.encode(sentences[i]));
  }
  if (train.empty()) throw DataError("pretraining corpus too small for the dev split");
  const PretrainResult r = pretrain(state, train, dev, a.cfg);
  write_file(out_path(a.common, "pretrain_log.tsv"), r.log);
  state.to_checkpoint(vocab).save(out_path(a.common, "pretrain_state.ckpt").string());
  encoder_checkpoint(state.encoder, vocab, a.common.seed, state.step)
      .save(out_path(a.common, "encoder.ckpt").string());
  out << "pretrained " << state.step << " steps";
  if (!r.eval_losses.empty()) out << "; held-out MLM loss " << r.eval_losses.back();
  out << "\n";
  return kExitOk;
}

struct TrainArgs {
  Common common;
  EncoderFlags enc;
  TrainConfig cfg;
  std::optional<double> lr;
  double min_delta_points = 0.1;
  std::string train_corpus, dev_corpus, pos_corpus, init, vocab;
  std::size_t min_count = 1;
  std::size_t lstm_cells = 48, lstm_projection = 24;
  std::size_t discriminator_hidden = Discriminator::kDefaultHidden;
  bool no_adversarial = false;
};

void add_train(CLI::App* sub, TrainArgs& a) {
  add_common(sub, a.common);
  add_encoder(sub, a.enc);
  sub->add_option("--train-corpus", a.train_corpus, "Punctuated training text")->required();
  sub->add_option("--dev-corpus", a.dev_corpus, "Punctuated dev text")->required();
  sub->add_option("--init", a.init, "Pretrained encoder checkpoint");
  sub->add_option("--vocab", a.vocab, "Vocabulary file (ignored with --init)");
  sub->add_option("--min-count", a.min_count, "Vocabulary frequency cut-off")->capture_default_str();
  sub->add_option("--epochs", a.cfg.epochs, "Training epochs")->capture_default_str();
  sub->add_option("--batch-size", a.cfg.batch_size, "Sentences per batch")->capture_default_str();
  sub->add_option("--lr", a.lr, "Peak learning rate (default 5e-4, or 5e-5 with --init)");
  sub->add_option("--warmup", a.cfg.warmup_steps, "Warmup steps")->capture_default_str();
  sub->add_option("--max-norm", a.cfg.max_norm, "Gradient clipping norm")->capture_default_str();
  sub->add_option("--eval-interval", a.cfg.eval_interval, "Steps between dev evaluations")
      ->capture_default_str();
  sub->add_option("--patience", a.cfg.patience, "Early-stopping patience")->capture_default_str();
  sub->add_option("--min-delta", a.min_delta_points, "Early-stopping threshold in F1 points")
      ->capture_default_str();
  sub->add_option("--max-steps", a.cfg.max_steps, "Step cap (0 = none)")->capture_default_str();
  sub->add_option("--lstm-cells", a.lstm_cells, "LSTM cells")->capture_default_str();
  sub->add_option("--lstm-projection", a.lstm_projection, "LSTM projection size")
      ->capture_default_str();
}

int cmd_train(TrainArgs a, bool adversarial, std::ostream& out, std::ostream& err) {
  a.cfg.seed = a.common.seed;
  a.cfg.min_delta = a.min_delta_points / 100.0;
  const auto train = read_pun_corpus(a.train_corpus);
  const auto dev = read_pun_corpus(a.dev_corpus);
  std::vector<LabeledSequence> pos;
  if (adversarial) pos = read_pos_corpus(a.pos_corpus);
  if (train.empty()) throw DataError("training corpus " + a.train_corpus + " is empty");
  if (dev.empty()) throw DataError("dev corpus " + a.dev_corpus + " is empty");
  if (adversarial && pos.empty()) throw DataError("POS corpus " + a.pos_corpus + " is empty");

  std::optional<Checkpoint> init;
  Vocab vocab;
  ModelConfig mc;
  if (!a.init.empty()) {
    init = Checkpoint::load(a.init);
    try {
      vocab = Vocab::deserialize(init->metadata.at("vocab").get<std::string>());
      mc.encoder = encoder_config_from_json(init->metadata.at("encoder"));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(std::string("init checkpoint metadata: ") + e.what());
    }
    mc.encoder.dropout_rate = a.enc.dropout;
  } else {
    vocab = !a.vocab.empty() ? Vocab::load(a.vocab)
                             : vocab_from({&train, &pos}, a.min_count);
    mc.encoder = a.enc.config(vocab.size());
  }
  mc.lstm.num_cells = a.lstm_cells;
  mc.lstm.projection_dim = a.lstm_projection;
  mc.discriminator_hidden = a.discriminator_hidden;
  a.cfg.base_lr = a.lr.value_or(init ? 5e-5 : 5e-4);
  a.cfg.max_len = mc.encoder.max_len;
  a.cfg.adversarial = adversarial && !a.no_adversarial;

  std::unique_ptr<PunctuationTagger> model;
  if (adversarial) model = std::make_unique<AdversarialModel>(mc, a.common.seed);
  else model = std::make_unique<PunctuationTagger>(mc, a.common.seed);
  if (init) {
    const TransferReport rep = transfer_encoder_params(*init, *model);
    out << "transferred " << rep.transferred.size() << " encoder tensors; "
        << rep.skipped.size() << " head tensors freshly initialised\n";
  }
  const std::string kind(adversarial ? kKindAdversarial : kKindTagger);
  const TrainResult r = train_multitask(*model, vocab, train, pos, dev, a.cfg, kind);
  write_file(out_path(a.common, "train_log.tsv"), r.log);
  r.best.save(out_path(a.common, "model.ckpt").string());
  write_file(out_path(a.common, "dev_metrics.json"), r.best_report.to_json().dump(2) + "\n");
  if (r.diverged) {
    err << "training diverged at " << r.divergence << "; kept the last good checkpoint\n";
    return kExitNumeric;
  }
  out << "trained " << r.steps << " steps; best dev overall F1 " << r.best_f1 << "\n"
      << r.best_report.table();
  return kExitOk;
}

struct EvalArgs {
  Common common;
  std::string model, corpus, format = "table";
};

int cmd_evaluate(const EvalArgs& a, std::ostream& out) {
  const LoadedModel m = load_model(Checkpoint::load(a.model));
  const auto corpus = read_pun_corpus(a.corpus);
  const MetricsReport r = evaluate(*m.model, m.vocab, corpus);
  const std::string text = a.format == "json" ? r.to_json().dump(2) + "\n" : r.table();
  out << text;
  if (a.common.out_dir != ".") {
    write_file(out_path(a.common, a.format == "json" ? "metrics.json" : "metrics.txt"), text);
  }
  return kExitOk;
}

struct PredictArgs {
  Common common;
  std::string model, text, input, format = "text";
};

int cmd_predict(const PredictArgs& a, std::ostream& out) {
  const LoadedModel m = load_model(Checkpoint::load(a.model));
  std::vector<std::string> lines;
  if (!a.text.empty()) {
    lines.push_back(a.text);
  } else {
    std::ifstream in(a.input);
    if (!in) throw DataError("cannot open input " + a.input);
    for (std::string line; std::getline(in, line);) lines.push_back(line);
  }
  std::string result;
  for (const auto& line : lines) {
    const PredictionOutput p = restore(*m.model, m.vocab, line);
    if (a.format == "labels") {
      for (std::size_t i = 0; i < p.words.size(); ++i) {
        result += p.words[i] + "\t" + std::string(kPunctNames[static_cast<std::size_t>(p.labels[i])]) + "\n";
      }
      result += "\n";
    } else {
      result += p.text + "\n";
    }
  }
  out << result;
  if (a.common.out_dir != ".") write_file(out_path(a.common, "predictions.txt"), result);
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Punctuation restoration with transfer and adversarial multi-task learning",
               "punc"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  PrepareArgs prep;
  auto* sp = app.add_subcommand("prepare-data", "Generate the synthetic paired corpus");
  add_common(sp, prep.common);
  sp->add_option("--train-size", prep.synth.pun_train, "Punctuation training sentences")
      ->capture_default_str();
  sp->add_option("--dev-size", prep.synth.pun_dev, "Punctuation dev sentences")->capture_default_str();
  sp->add_option("--pos-size", prep.synth.pos_train, "POS sentences")->capture_default_str();
  sp->add_option("--unlabeled-size", prep.synth.unlabeled, "Unlabeled sentences")
      ->capture_default_str();
  sp->add_option("--held-out-fraction", prep.synth.held_out_fraction,
                 "Share of open-class words kept out of the training split")
      ->capture_default_str();
  sp->add_option("--min-count", prep.min_count, "Vocabulary frequency cut-off")->capture_default_str();

  PretrainArgs pre;
  auto* spt = app.add_subcommand("pretrain", "Masked-LM pretraining of the shared encoder");
  add_common(spt, pre.common);
  add_encoder(spt, pre.enc);
  spt->add_option("--corpus", pre.corpus, "Unlabeled text, one sentence per line")->required();
  spt->add_option("--vocab", pre.vocab, "Vocabulary file (built from the corpus when absent)");
  spt->add_option("--min-count", pre.min_count, "Vocabulary frequency cut-off")->capture_default_str();
  spt->add_option("--dev-fraction", pre.dev_fraction, "Share of sentences held out for MLM loss")
      ->capture_default_str();
  spt->add_option("--epochs", pre.cfg.epochs, "Passes over the corpus")->capture_default_str();
  spt->add_option("--batch-size", pre.cfg.batch_size, "Sentences per batch")->capture_default_str();
  spt->add_option("--lr", pre.cfg.base_lr, "Peak learning rate")->capture_default_str();
  spt->add_option("--warmup", pre.cfg.warmup_steps, "Warmup steps")->capture_default_str();
  spt->add_option("--max-norm", pre.cfg.max_norm, "Gradient clipping norm")->capture_default_str();
  spt->add_option("--eval-interval", pre.cfg.eval_interval, "Steps between held-out evaluations")
      ->capture_default_str();
  spt->add_option("--stop-at-step", pre.cfg.stop_at_step, "Stop early at this global step (0 = run to the end)")
      ->capture_default_str();
  spt->add_option("--resume", pre.resume, "Continue from a pretrain_state.ckpt");

  TrainArgs tr;
  auto* st = app.add_subcommand("train", "Train the punctuation tagger alone");
  add_train(st, tr);

  TrainArgs ta;
  auto* sa = app.add_subcommand("train-adversarial",
                                "Joint punctuation + POS training with a task discriminator");
  add_train(sa, ta);
  sa->add_option("--pos-corpus", ta.pos_corpus, "Two-column POS corpus")->required();
  sa->add_option("--pos-weight", ta.cfg.pos_weight, "Fraction of POS batches used per epoch")
      ->capture_default_str();
  sa->add_flag("--no-adversarial", ta.no_adversarial, "Plain multi-task training (no discriminator)");
  sa->add_option("--lambda", ta.cfg.force_lambda, "Fix the adversarial weight instead of the schedule");
  sa->add_option("--gamma", ta.cfg.gamma, "Schedule steepness")->capture_default_str();
  sa->add_option("--discriminator-hidden", ta.discriminator_hidden, "Discriminator hidden units")
      ->capture_default_str();

  EvalArgs ev;
  auto* se = app.add_subcommand("evaluate", "Score a model on a punctuated corpus");
  add_common(se, ev.common);
  se->add_option("--model", ev.model, "Model checkpoint")->required();
  se->add_option("--corpus", ev.corpus, "Punctuated text")->required();
  se->add_option("--format", ev.format, "table or json")
      ->check(CLI::IsMember({"table", "json"}))
      ->capture_default_str();

  PredictArgs pr;
  auto* sr = app.add_subcommand("predict", "Restore punctuation in raw text");
  add_common(sr, pr.common);
  sr->add_option("--model", pr.model, "Model checkpoint")->required();
  auto* text_opt = sr->add_option("--text", pr.text, "Text to punctuate");
  auto* input_opt = sr->add_option("--input", pr.input, "File with one text per line");
  text_opt->excludes(input_opt);
  sr->add_option("--format", pr.format, "text or labels")
      ->check(CLI::IsMember({"text", "labels"}))
      ->capture_default_str();

  try {
    std::vector<std::string> args;
    try {
      args = expand_config(argc, argv);
    } catch (const Error& e) {
      err << "data error: " << e.what() << "\n";
      return kExitData;
    }
    std::vector<const char*> ptrs;
    for (const auto& x : args) ptrs.push_back(x.c_str());
    app.parse(static_cast<int>(ptrs.size()), ptrs.data());
    if (*sr && pr.text.empty() && pr.input.empty()) {
      throw CLI::RequiredError("--text or --input");
    }
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*sp) {
      cmd_prepare(prep, out);
      return kExitOk;
    }
    if (*spt) return cmd_pretrain(pre, out);
    if (*st) return cmd_train(tr, false, out, err);
    if (*sa) return cmd_train(ta, true, out, err);
    if (*se) return cmd_evaluate(ev, out);
    if (*sr) return cmd_predict(pr, out);
  } catch (const ContractError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const Error& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const nlohmann::json::exception& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace punc
