#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "punc/data.hpp"
#include "punc/models.hpp"

namespace punc {

struct ClassCounts {
  std::size_t tp = 0, fp = 0, fn = 0;

  // 0/0 is taken as 0 throughout.
  double precision() const;
  double recall() const;
  double f1() const;
};

// Scored classes COMMA, PERIOD, QUESTION (index = label - 1) plus their
// micro-aggregate. O never contributes to any count.
struct MetricsReport {
  std::array<ClassCounts, 3> per_class;
  ClassCounts overall;

  nlohmann::json to_json() const;
  std::string table() const;
};

// Positional matching: a predicted mark is a TP only when gold has the same
// class at the same position.
MetricsReport compute_prf(std::span<const std::vector<int>> gold,
                          std::span<const std::vector<int>> pred);

MetricsReport evaluate(const PunctuationTagger& model, const Vocab& vocab,
                       std::span<const LabeledSequence> corpus);

struct PredictionOutput {
  std::vector<std::string> words;
  std::vector<int> labels;
  std::string text;
};

// Strips any marks from raw_text, predicts, and renders the result.
PredictionOutput restore(const PunctuationTagger& model, const Vocab& vocab,
                         std::string_view raw_text);

}  // namespace punc
