#pragma once

// Independent reference computations used by the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <random>
#include <vector>

namespace oracle {

// Plain-array CRF parameters so the oracle never touches library code.
struct Crf {
  std::size_t L = 0;
  std::vector<double> trans, start, stop;
};

inline double path_score(const std::vector<double>& e, const Crf& c, const std::vector<int>& y) {
  double s = c.start[y[0]] + c.stop[y.back()];
  for (std::size_t t = 0; t < y.size(); ++t) {
    s += e[t * c.L + y[t]];
    if (t > 0) s += c.trans[y[t - 1] * c.L + y[t]];
  }
  return s;
}

// Calls fn(path) for all L^T label paths in lexicographic order.
template <typename Fn>
void for_each_path(std::size_t T, std::size_t L, Fn fn) {
  std::vector<int> y(T, 0);
  while (true) {
    fn(y);
    std::size_t t = T;
    while (t > 0) {
      --t;
      if (static_cast<std::size_t>(++y[t]) < L) break;
      y[t] = 0;
      if (t == 0) return;
    }
  }
}

inline double log_partition(const std::vector<double>& e, std::size_t T, const Crf& c) {
  std::vector<double> scores;
  for_each_path(T, c.L, [&](const std::vector<int>& y) { scores.push_back(path_score(e, c, y)); });
  const double m = *std::max_element(scores.begin(), scores.end());
  double z = 0.0;
  for (double s : scores) z += std::exp(s - m);
  return m + std::log(z);
}

// Best path; among exactly tied paths the one that is smallest when compared
// from the last position backwards (lowest label at each backtracking step).
inline std::vector<int> argmax_path(const std::vector<double>& e, std::size_t T, const Crf& c) {
  std::vector<int> best;
  double best_score = -std::numeric_limits<double>::infinity();
  auto rev_less = [](const std::vector<int>& a, const std::vector<int>& b) {
    return std::lexicographical_compare(a.rbegin(), a.rend(), b.rbegin(), b.rend());
  };
  for_each_path(T, c.L, [&](const std::vector<int>& y) {
    const double s = path_score(e, c, y);
    if (s > best_score || (s == best_score && rev_less(y, best))) {
      best_score = s;
      best = y;
    }
  });
  return best;
}

// Scaled dot-product attention for one head over row-major matrices.
// q, k: [T x dk], v: [T x dv]; returns [T x dv] and the weights [T x T].
inline std::vector<double> attention_head(const std::vector<double>& q, const std::vector<double>& k,
                                          const std::vector<double>& v, std::size_t T,
                                          std::size_t dk, std::size_t dv,
                                          const std::vector<bool>& mask,
                                          std::vector<double>* weights = nullptr) {
  std::vector<double> out(T * dv, 0.0), w(T * T, 0.0);
  for (std::size_t i = 0; i < T; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    std::vector<double> s(T, 0.0);
    for (std::size_t j = 0; j < T; ++j) {
      if (!mask[j]) continue;
      double dot = 0.0;
      for (std::size_t a = 0; a < dk; ++a) dot += q[i * dk + a] * k[j * dk + a];
      s[j] = dot / std::sqrt(static_cast<double>(dk));
      mx = std::max(mx, s[j]);
    }
    double z = 0.0;
    for (std::size_t j = 0; j < T; ++j) {
      if (mask[j]) z += std::exp(s[j] - mx);
    }
    for (std::size_t j = 0; j < T; ++j) {
      w[i * T + j] = mask[j] ? std::exp(s[j] - mx) / z : 0.0;
      for (std::size_t a = 0; a < dv; ++a) out[i * dv + a] += w[i * T + j] * v[j * dv + a];
    }
  }
  if (weights) *weights = w;
  return out;
}

// Row-major [m x k] times [k x n].
inline std::vector<double> matmul(const std::vector<double>& a, const std::vector<double>& b,
                                  std::size_t m, std::size_t k, std::size_t n) {
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t t = 0; t < k; ++t) c[i * n + j] += a[i * k + t] * b[t * n + j];
  return c;
}

inline std::vector<double> uniform(std::size_t n, double lo, double hi, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = d(rng);
  return v;
}

}  // namespace oracle
