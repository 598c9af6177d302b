#include "punc/crf.hpp"

#include <string>

#include "punc/error.hpp"

namespace punc {

using namespace punc::ad;

CrfParams::CrfParams(std::size_t num_labels, std::mt19937_64& rng, double init_range)
    : transitions(uniform_open({num_labels, num_labels}, init_range, rng)),
      start_scores(uniform_open({num_labels}, init_range, rng)),
      stop_scores(uniform_open({num_labels}, init_range, rng)) {}

void CrfParams::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + "transitions", transitions});
  out.push_back({prefix + "start", start_scores});
  out.push_back({prefix + "stop", stop_scores});
}

namespace {

void check_emissions(std::size_t cols, const CrfParams& p) {
  if (cols != p.num_labels()) {
    throw ShapeError("crf: emission width " + std::to_string(cols) + " != label count " +
                     std::to_string(p.num_labels()));
  }
}

}  // namespace

double crf_path_score(std::span<const double> emissions, std::size_t num_labels,
                      const CrfParams& p, std::span<const int> path) {
  const auto tr = p.transitions.values();
  double s = p.start_scores.values()[path[0]] + p.stop_scores.values()[path.back()];
  for (std::size_t t = 0; t < path.size(); ++t) {
    s += emissions[t * num_labels + path[t]];
    if (t > 0) s += tr[path[t - 1] * num_labels + path[t]];
  }
  return s;
}

Tensor crf_log_partition(Tape& tape, const Tensor& emissions, const CrfParams& p) {
  check_emissions(emissions.cols(), p);
  const std::size_t T = emissions.rows(), L = p.num_labels();
  // alpha is a {1 x L} row of log forward scores.
  Tensor alpha = add(tape, slice_rows(tape, emissions, 0, 1), p.start_scores);
  for (std::size_t t = 1; t < T; ++t) {
    // scores[i, j] = alpha[i] + trans[i, j]; reduce over the source label i.
    Tensor scores = add(tape, p.transitions, reshape(tape, alpha, {L, 1}));
    alpha = add(tape, logsumexp(tape, scores, Axis::kRows), slice_rows(tape, emissions, t, 1));
  }
  return logsumexp(tape, add(tape, alpha, p.stop_scores), Axis::kAll);
}

Tensor crf_nll(Tape& tape, const Tensor& emissions, std::span<const int> gold,
               const CrfParams& p) {
  check_emissions(emissions.cols(), p);
  const std::size_t T = emissions.rows(), L = p.num_labels();
  if (gold.size() != T) {
    throw ShapeError("crf_nll: gold length " + std::to_string(gold.size()) +
                     " != emission rows " + std::to_string(T));
  }
  for (int y : gold) {
    if (y < 0 || static_cast<std::size_t>(y) >= L) {
      throw DataError("crf_nll: label " + std::to_string(y) + " outside [0, " +
                      std::to_string(L) + ")");
    }
  }
  std::vector<std::size_t> emit_idx(T);
  for (std::size_t t = 0; t < T; ++t) emit_idx[t] = t * L + static_cast<std::size_t>(gold[t]);
  const std::size_t first = static_cast<std::size_t>(gold.front());
  const std::size_t last = static_cast<std::size_t>(gold.back());

  Tensor gold_score = sum(tape, gather(tape, emissions, emit_idx));
  gold_score = add(tape, gold_score, gather(tape, p.start_scores, std::span(&first, 1)));
  gold_score = add(tape, gold_score, gather(tape, p.stop_scores, std::span(&last, 1)));
  if (T > 1) {
    std::vector<std::size_t> trans_idx(T - 1);
    for (std::size_t t = 1; t < T; ++t) {
      trans_idx[t - 1] = static_cast<std::size_t>(gold[t - 1]) * L + static_cast<std::size_t>(gold[t]);
    }
    gold_score = add(tape, gold_score, sum(tape, gather(tape, p.transitions, trans_idx)));
  }
  return sub(tape, crf_log_partition(tape, emissions, p), gold_score);
}

std::vector<int> viterbi_decode(std::span<const double> emissions, std::size_t num_labels,
                                const CrfParams& p) {
  check_emissions(num_labels, p);
  const std::size_t L = num_labels;
  if (emissions.empty()) return {};
  const std::size_t T = emissions.size() / L;
  const auto tr = p.transitions.values();
  const auto st = p.start_scores.values();
  const auto sp = p.stop_scores.values();

  std::vector<double> score(L), next(L);
  std::vector<int> back((T > 0 ? T - 1 : 0) * L);
  for (std::size_t j = 0; j < L; ++j) score[j] = st[j] + emissions[j];
  for (std::size_t t = 1; t < T; ++t) {
    for (std::size_t j = 0; j < L; ++j) {
      // Strict '>' keeps the lowest index among equal candidates.
      std::size_t best_i = 0;
      double best = score[0] + tr[j];
      for (std::size_t i = 1; i < L; ++i) {
        const double s = score[i] + tr[i * L + j];
        if (s > best) {
          best = s;
          best_i = i;
        }
      }
      next[j] = best + emissions[t * L + j];
      back[(t - 1) * L + j] = static_cast<int>(best_i);
    }
    std::swap(score, next);
  }
  std::size_t best_last = 0;
  double best = score[0] + sp[0];
  for (std::size_t j = 1; j < L; ++j) {
    if (score[j] + sp[j] > best) {
      best = score[j] + sp[j];
      best_last = j;
    }
  }
  std::vector<int> path(T);
  path[T - 1] = static_cast<int>(best_last);
  for (std::size_t t = T - 1; t > 0; --t) {
    path[t - 1] = back[(t - 1) * L + static_cast<std::size_t>(path[t])];
  }
  return path;
}

}  // namespace punc
