#include "punc/models.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <memory>
#include <sstream>

#include "punc/error.hpp"

namespace punc {

using namespace punc::ad;
using nlohmann::json;

namespace {

struct AllValid {
  explicit AllValid(std::size_t n) : buf(std::make_unique<bool[]>(n)), size(n) {
    std::fill_n(buf.get(), n, true);
  }
  std::span<const bool> span() const { return {buf.get(), size}; }
  std::unique_ptr<bool[]> buf;
  std::size_t size;
};

Tensor mean_of(Tape& tape, const std::vector<Tensor>& terms) {
  Tensor acc = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) acc = add(tape, acc, terms[i]);
  return scale(tape, acc, 1.0 / static_cast<double>(terms.size()));
}

}  // namespace

TaskHead::TaskHead(std::size_t d_model, std::size_t num_labels, const LstmConfig& lstm,
                   std::uint64_t seed, std::string_view component) {
  auto rng = component_rng(seed, component);
  bridge = Linear(d_model, lstm.projection_dim, rng);
  blstm = Blstm(lstm.projection_dim, lstm, rng);
  emit = Linear(blstm.output_dim(), num_labels, rng);
  crf = CrfParams(num_labels, rng);
}

Tensor TaskHead::emissions(Tape& tape, const Tensor& shared) const {
  forward_count.bump();
  return emit.forward(tape, blstm.forward(tape, bridge.forward(tape, shared)));
}

void TaskHead::collect(ParamList& out, const std::string& prefix) const {
  bridge.collect(out, prefix + "bridge.");
  blstm.collect(out, prefix + "blstm.");
  emit.collect(out, prefix + "emit.");
  crf.collect(out, prefix + "crf.");
}

PunctuationTagger::PunctuationTagger(const ModelConfig& cfg, std::uint64_t seed)
    : encoder(cfg.encoder, seed),
      pun_head(cfg.encoder.d_model, kNumPunctLabels, cfg.lstm, seed, "pun_head"),
      cfg_(cfg) {}

void PunctuationTagger::collect(ParamList& out) const {
  encoder.collect(out, "encoder.");
  pun_head.collect(out, "pun_head.");
}

ParamList PunctuationTagger::parameters() const {
  ParamList out;
  collect(out);
  return out;
}

AdversarialModel::AdversarialModel(const ModelConfig& cfg, std::uint64_t seed)
    : PunctuationTagger(cfg, seed),
      pos_head(cfg.encoder.d_model, kNumPosTags, cfg.lstm, seed, "pos_head"),
      discriminator(cfg.encoder.d_model, 2, seed, cfg.discriminator_hidden) {}

void AdversarialModel::collect(ParamList& out) const {
  PunctuationTagger::collect(out);
  pos_head.collect(out, "pos_head.");
  discriminator.collect(out, "discriminator.");
}

PunctuationOutput punctuation_forward(Tape& tape, const PunctuationTagger& model,
                                      const Batch& batch, Mode mode) {
  PunctuationOutput out;
  for (std::size_t b = 0; b < batch.batch_size; ++b) {
    const auto ids = batch.row_ids(b);
    const auto gold = batch.row_labels(b);
    const AllValid mask(ids.size());
    const Tensor shared = model.encoder.forward(tape, ids, mask.span(), mode);
    const Tensor e = model.pun_head.emissions(tape, shared);
    out.nll.push_back(crf_nll(tape, e, gold, model.pun_head.crf));
    if (mode == Mode::kEval) out.labels.push_back(viterbi_decode(e, model.pun_head.crf));
  }
  return out;
}

StepLosses multitask_step(Tape& tape, const AdversarialModel& model, const Batch& batch,
                          std::optional<double> lambda, Mode mode) {
  if (batch.batch_size == 0) throw ContractError("multitask_step: empty batch");
  const TaskHead& head = model.head(batch.task);
  const std::size_t task_label = static_cast<std::size_t>(batch.task);
  std::vector<Tensor> task_terms, adv_terms;
  for (std::size_t b = 0; b < batch.batch_size; ++b) {
    const auto ids = batch.row_ids(b);
    const AllValid mask(ids.size());
    const Tensor shared = model.encoder.forward(tape, ids, mask.span(), mode);
    task_terms.push_back(crf_nll(tape, head.emissions(tape, shared), batch.row_labels(b), head.crf));
    if (lambda) {
      model.discriminator_count.bump();
      const Tensor pooled = max_pool_over_time(tape, shared, mask.span());
      adv_terms.push_back(
          adversarial_loss(tape, grl(tape, pooled, *lambda), task_label, model.discriminator));
    }
  }
  StepLosses out;
  out.task = mean_of(tape, task_terms);
  if (lambda) {
    out.lambda = *lambda;
    out.adv = mean_of(tape, adv_terms);
    out.total = total_loss(tape, std::span(&out.task, 1), std::span(&out.adv, 1), *lambda);
  } else {
    out.total = out.task;
  }
  return out;
}

std::vector<int> predict_punctuation(const PunctuationTagger& model,
                                     std::span<const std::size_t> ids) {
  std::vector<int> labels;
  const std::size_t window = model.encoder.config().max_len;
  for (std::size_t begin = 0; begin < ids.size(); begin += window) {
    const auto chunk = ids.subspan(begin, std::min(window, ids.size() - begin));
    Tape tape(0, false);
    const AllValid mask(chunk.size());
    const Tensor shared = model.encoder.forward(tape, chunk, mask.span(), Mode::kEval);
    const auto path = viterbi_decode(model.pun_head.emissions(tape, shared), model.pun_head.crf);
    labels.insert(labels.end(), path.begin(), path.end());
  }
  return labels;
}

MlmHead::MlmHead(std::size_t d_model, std::size_t vocab_size, std::uint64_t seed) {
  auto rng = component_rng(seed, "mlm_head");
  proj = Linear(d_model, vocab_size, rng);
}

MaskedSequence apply_mask(std::span<const std::size_t> ids, const MaskPolicy& policy,
                          std::size_t vocab_size, std::mt19937_64& rng) {
  MaskedSequence out;
  out.ids.assign(ids.begin(), ids.end());
  std::vector<std::size_t> maskable;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] != Vocab::kPad && ids[i] != Vocab::kMask) maskable.push_back(i);
  }
  if (maskable.empty()) return out;
  const auto k = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::lround(policy.select_rate * static_cast<double>(maskable.size()))));
  std::sample(maskable.begin(), maskable.end(), std::back_inserter(out.positions),
              std::min(k, maskable.size()), rng);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t pos : out.positions) {
    out.targets.push_back(ids[pos]);
    const double r = u(rng);
    if (r < policy.mask_rate) {
      out.ids[pos] = Vocab::kMask;
    } else if (r < policy.mask_rate + policy.random_rate && vocab_size > Vocab::kNumSpecial) {
      out.ids[pos] =
          std::uniform_int_distribution<std::size_t>(Vocab::kNumSpecial, vocab_size - 1)(rng);
    }
  }
  return out;
}

std::optional<Tensor> mlm_loss(Tape& tape, const EncoderStack& encoder, const MlmHead& head,
                               std::span<const MaskedSequence> seqs, Mode mode) {
  std::optional<Tensor> total;
  std::size_t count = 0;
  const std::size_t V = head.proj.out_dim();
  for (const MaskedSequence& s : seqs) {
    if (s.positions.empty()) continue;
    const AllValid mask(s.ids.size());
    const Tensor hidden = encoder.forward(tape, s.ids, mask.span(), mode);
    const Tensor picked = embedding_lookup(tape, hidden, s.positions);
    const Tensor logp = log_softmax(tape, head.logits(tape, picked));
    std::vector<std::size_t> flat(s.targets.size());
    for (std::size_t i = 0; i < flat.size(); ++i) {
      if (s.targets[i] >= V) throw RangeError("mlm_loss: target id outside the output vocabulary");
      flat[i] = i * V + s.targets[i];
    }
    const Tensor part = sum(tape, gather(tape, logp, flat));
    total = total ? add(tape, *total, part) : part;
    count += flat.size();
  }
  if (!total) return std::nullopt;
  return scale(tape, *total, -1.0 / static_cast<double>(count));
}

// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'P', 'F', 'C', 'K'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : b_(bytes) {}

  std::string_view take(std::size_t n) {
    if (n > b_.size() - pos_) throw DataError("checkpoint truncated");
    auto s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint64_t u(int width) {
    const auto s = take(static_cast<std::size_t>(width));
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(s[static_cast<std::size_t>(i)]))
           << (8 * i);
    }
    return v;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  std::string_view b_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string Checkpoint::serialize() const {
  std::string out(kMagic, 4);
  put_u32(out, kVersion);
  put_u64(out, entries.size());
  for (const auto& [name, e] : entries) {
    put_u64(out, name.size());
    out += name;
    put_u64(out, e.shape.size());
    for (std::size_t d : e.shape) put_u64(out, d);
    for (double v : e.values) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  const std::string meta = metadata.dump();
  put_u64(out, meta.size());
  out += meta;
  return out;
}

Checkpoint Checkpoint::deserialize(std::string_view bytes) {
  Reader r(bytes);
  if (r.take(4) != std::string_view(kMagic, 4)) throw DataError("not a checkpoint (bad magic)");
  const auto version = r.u(4);
  if (version != kVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ck;
  const auto n = r.u(8);
  for (std::uint64_t i = 0; i < n; ++i) {
    std::string name(r.take(r.u(8)));
    CheckpointEntry e;
    const auto rank = r.u(8);
    if (rank < 1 || rank > 2) throw DataError("checkpoint entry " + name + " has bad rank");
    std::size_t count = 1;
    for (std::uint64_t k = 0; k < rank; ++k) {
      e.shape.push_back(r.u(8));
      count *= e.shape.back();
    }
    e.values.resize(count);
    for (double& v : e.values) v = std::bit_cast<double>(r.u(8));
    if (!ck.entries.emplace(std::move(name), std::move(e)).second) {
      throw DataError("duplicate checkpoint entry");
    }
  }
  const std::string meta(r.take(r.u(8)));
  if (!r.done()) throw DataError("trailing bytes after checkpoint metadata");
  try {
    ck.metadata = json::parse(meta);
  } catch (const json::exception& e) {
    throw DataError(std::string("checkpoint metadata: ") + e.what());
  }
  return ck;
}

void Checkpoint::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path);
  const std::string bytes = serialize();
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize(ss.str());
}

Checkpoint snapshot(const ParamList& params, json metadata) {
  Checkpoint ck;
  for (const auto& p : params) {
    auto v = p.tensor.values();
    if (!ck.entries.emplace(p.name, CheckpointEntry{p.tensor.shape(), {v.begin(), v.end()}}).second) {
      throw ContractError("duplicate parameter name " + p.name);
    }
  }
  ck.metadata = std::move(metadata);
  return ck;
}

void restore_params(const Checkpoint& ckpt, const ParamList& params) {
  for (const auto& p : params) {
    auto it = ckpt.entries.find(p.name);
    if (it == ckpt.entries.end()) throw TransferError("checkpoint is missing " + p.name);
    if (it->second.shape != p.tensor.shape()) {
      throw TransferError("shape mismatch for " + p.name + ": checkpoint " +
                          shape_string(it->second.shape) + " vs model " +
                          shape_string(p.tensor.shape()));
    }
  }
  for (const auto& p : params) {
    const auto& src = ckpt.entries.at(p.name).values;
    Tensor t = p.tensor;
    std::copy(src.begin(), src.end(), t.mutable_values().begin());
  }
}

json to_json(const EncoderConfig& c) {
  return json{{"vocab_size", c.vocab_size}, {"num_layers", c.num_layers},
              {"num_heads", c.num_heads},   {"d_model", c.d_model},
              {"d_k", c.d_k},               {"d_v", c.d_v},
              {"d_ff", c.d_ff},             {"max_len", c.max_len},
              {"dropout_rate", c.dropout_rate}};
}

json to_json(const LstmConfig& c) {
  return json{{"num_cells", c.num_cells},
              {"projection_dim", c.projection_dim},
              {"cell_clip", c.cell_clip},
              {"init_range", c.init_range}};
}

json to_json(const ModelConfig& c) {
  return json{{"encoder", to_json(c.encoder)},
              {"lstm", to_json(c.lstm)},
              {"discriminator_hidden", c.discriminator_hidden}};
}

EncoderConfig encoder_config_from_json(const json& j) {
  try {
    EncoderConfig c;
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.num_layers = j.at("num_layers").get<std::size_t>();
    c.num_heads = j.at("num_heads").get<std::size_t>();
    c.d_model = j.at("d_model").get<std::size_t>();
    c.d_k = j.at("d_k").get<std::size_t>();
    c.d_v = j.at("d_v").get<std::size_t>();
    c.d_ff = j.at("d_ff").get<std::size_t>();
    c.max_len = j.at("max_len").get<std::size_t>();
    c.dropout_rate = j.at("dropout_rate").get<double>();
    return c;
  } catch (const json::exception& e) {
    throw DataError(std::string("encoder config: ") + e.what());
  }
}

ModelConfig model_config_from_json(const json& j) {
  try {
    ModelConfig c;
    c.encoder = encoder_config_from_json(j.at("encoder"));
    const json& l = j.at("lstm");
    c.lstm.num_cells = l.at("num_cells").get<std::size_t>();
    c.lstm.projection_dim = l.at("projection_dim").get<std::size_t>();
    c.lstm.cell_clip = l.at("cell_clip").get<double>();
    c.lstm.init_range = l.at("init_range").get<double>();
    c.discriminator_hidden = j.at("discriminator_hidden").get<std::size_t>();
    return c;
  } catch (const json::exception& e) {
    throw DataError(std::string("model config: ") + e.what());
  }
}

TransferReport transfer_encoder_params(const Checkpoint& ckpt, PunctuationTagger& target) {
  ParamList enc;
  target.encoder.collect(enc, "encoder.");
  for (const auto& p : enc) {
    auto it = ckpt.entries.find(p.name);
    if (it == ckpt.entries.end()) {
      throw TransferError("incomplete encoder checkpoint: missing " + p.name);
    }
    if (it->second.shape != p.tensor.shape()) {
      throw TransferError("shape mismatch for " + p.name + ": checkpoint " +
                          shape_string(it->second.shape) + " vs target " +
                          shape_string(p.tensor.shape()));
    }
  }
  restore_params(ckpt, enc);

  TransferReport report;
  for (const auto& p : enc) report.transferred.push_back(p.name);
  std::sort(report.transferred.begin(), report.transferred.end());
  for (const auto& p : target.parameters()) {
    if (!std::binary_search(report.transferred.begin(), report.transferred.end(), p.name)) {
      report.skipped.push_back(p.name);
    }
  }
  std::sort(report.skipped.begin(), report.skipped.end());
  return report;
}

Checkpoint model_checkpoint(const PunctuationTagger& model, std::string_view kind,
                            const Vocab& vocab, std::uint64_t seed, std::uint64_t step) {
  json meta{{"kind", kind},
            {"config", to_json(model.config())},
            {"vocab", vocab.serialize()},
            {"seed", seed},
            {"step", step}};
  return snapshot(model.parameters(), std::move(meta));
}

LoadedModel load_model(const Checkpoint& ckpt) {
  LoadedModel out;
  try {
    out.kind = ckpt.metadata.at("kind").get<std::string>();
    if (out.kind == kKindEncoder) {
      throw DataError("checkpoint holds a pretrained encoder only, not a tagger");
    }
    const ModelConfig cfg = model_config_from_json(ckpt.metadata.at("config"));
    out.vocab = Vocab::deserialize(ckpt.metadata.at("vocab").get<std::string>());
    if (out.kind == kKindAdversarial) {
      out.model = std::make_unique<AdversarialModel>(cfg, 0);
    } else if (out.kind == kKindTagger) {
      out.model = std::make_unique<PunctuationTagger>(cfg, 0);
    } else {
      throw DataError("unknown checkpoint kind '" + out.kind + "'");
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("checkpoint metadata: ") + e.what());
  }
  if (out.vocab.size() != out.model->config().encoder.vocab_size) {
    throw DataError("checkpoint vocabulary size disagrees with its encoder config");
  }
  restore_params(ckpt, out.model->parameters());
  return out;
}

}  // namespace punc
