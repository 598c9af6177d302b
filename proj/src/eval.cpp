#include "punc/eval.hpp"

#include <cstdio>

#include "punc/error.hpp"

namespace punc {

namespace {

double ratio(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

double ClassCounts::precision() const { return ratio(tp, tp + fp); }
double ClassCounts::recall() const { return ratio(tp, tp + fn); }
double ClassCounts::f1() const {
  const double p = precision(), r = recall();
  return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
}

MetricsReport compute_prf(std::span<const std::vector<int>> gold,
                          std::span<const std::vector<int>> pred) {
  if (gold.size() != pred.size()) {
    throw ShapeError("compute_prf: " + std::to_string(gold.size()) + " gold sequences vs " +
                     std::to_string(pred.size()) + " predicted");
  }
  MetricsReport r;
  for (std::size_t s = 0; s < gold.size(); ++s) {
    if (gold[s].size() != pred[s].size()) {
      throw ShapeError("compute_prf: sequence " + std::to_string(s) + " has " +
                       std::to_string(gold[s].size()) + " gold labels but " +
                       std::to_string(pred[s].size()) + " predictions");
    }
    for (std::size_t t = 0; t < gold[s].size(); ++t) {
      const int g = gold[s][t], p = pred[s][t];
      for (int l : {g, p}) {
        if (l < 0 || l >= static_cast<int>(kNumPunctLabels)) {
          throw DataError("compute_prf: label " + std::to_string(l) + " in sequence " +
                          std::to_string(s) + " is not a punctuation class");
        }
      }
      if (g == p) {
        if (g != kO) ++r.per_class[static_cast<std::size_t>(g - 1)].tp;
        continue;
      }
      if (p != kO) ++r.per_class[static_cast<std::size_t>(p - 1)].fp;
      if (g != kO) ++r.per_class[static_cast<std::size_t>(g - 1)].fn;
    }
  }
  for (const auto& c : r.per_class) {
    r.overall.tp += c.tp;
    r.overall.fp += c.fp;
    r.overall.fn += c.fn;
  }
  return r;
}

nlohmann::json MetricsReport::to_json() const {
  auto one = [](const ClassCounts& c) {
    return nlohmann::json{{"tp", c.tp},
                          {"fp", c.fp},
                          {"fn", c.fn},
                          {"precision", c.precision()},
                          {"recall", c.recall()},
                          {"f1", c.f1()}};
  };
  nlohmann::json j;
  for (std::size_t i = 0; i < per_class.size(); ++i) {
    j[std::string(kPunctNames[i + 1])] = one(per_class[i]);
  }
  j["overall"] = one(overall);
  return j;
}

std::string MetricsReport::table() const {
  std::string out;
  char buf[128];
  std::snprintf(buf, sizeof buf, "%-10s %7s %7s %7s\n", "", "P", "R", "F1");
  out += buf;
  auto row = [&](std::string_view name, const ClassCounts& c) {
    std::snprintf(buf, sizeof buf, "%-10.*s %7.1f %7.1f %7.1f\n", static_cast<int>(name.size()),
                  name.data(), 100.0 * c.precision(), 100.0 * c.recall(), 100.0 * c.f1());
    out += buf;
  };
  for (std::size_t i = 0; i < per_class.size(); ++i) row(kPunctNames[i + 1], per_class[i]);
  row("Overall", overall);
  return out;
}

MetricsReport evaluate(const PunctuationTagger& model, const Vocab& vocab,
                       std::span<const LabeledSequence> corpus) {
  std::vector<std::vector<int>> gold, pred;
  gold.reserve(corpus.size());
  pred.reserve(corpus.size());
  for (const auto& s : corpus) {
    gold.push_back(s.labels);
    pred.push_back(predict_punctuation(model, vocab.encode(s.words)));
  }
  return compute_prf(gold, pred);
}

PredictionOutput restore(const PunctuationTagger& model, const Vocab& vocab,
                         std::string_view raw_text) {
  PredictionOutput out;
  out.words = strip_punctuation(raw_text);
  out.labels = predict_punctuation(model, vocab.encode(out.words));
  out.text = detokenize(LabeledSequence{out.words, out.labels, Task::kPun});
  return out;
}

}  // namespace punc
