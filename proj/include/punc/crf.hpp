#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "punc/layers.hpp"

namespace punc {

// Linear-chain CRF scores. A label path y scores
//   start[y_0] + Σ_t emit[t, y_t] + Σ_t trans[y_{t-1}, y_t] + stop[y_{T-1}].
struct CrfParams {
  CrfParams() = default;
  CrfParams(std::size_t num_labels, std::mt19937_64& rng, double init_range = 0.1);

  std::size_t num_labels() const { return transitions.rows(); }
  void collect(ParamList& out, const std::string& prefix) const;

  Tensor transitions;  // [L x L], row = from, column = to
  Tensor start_scores;  // [L]
  Tensor stop_scores;   // [L]
};

// Score of one path evaluated directly from raw buffers (no tape).
double crf_path_score(std::span<const double> emissions, std::size_t num_labels,
                      const CrfParams& p, std::span<const int> path);

// log Σ_y exp(score(y)) by the log-space forward recursion, recorded on the
// tape so gradients flow to emissions and CRF parameters. Returns a scalar.
Tensor crf_log_partition(Tape& tape, const Tensor& emissions, const CrfParams& p);

// log_partition - gold path score.
Tensor crf_nll(Tape& tape, const Tensor& emissions, std::span<const int> gold,
               const CrfParams& p);

// Highest-scoring path. At every choice ties go to the lowest label index.
std::vector<int> viterbi_decode(std::span<const double> emissions, std::size_t num_labels,
                                const CrfParams& p);

inline std::vector<int> viterbi_decode(const Tensor& emissions, const CrfParams& p) {
  return viterbi_decode(emissions.values(), emissions.cols(), p);
}

}  // namespace punc
