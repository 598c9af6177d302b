#include "punc/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "punc/error.hpp"

namespace punc::ad {

namespace {

using NodePtr = std::shared_ptr<Node>;

NodePtr make_node(Tape& tape, Shape shape, std::initializer_list<const Tensor*> inputs) {
  auto n = std::make_shared<Node>();
  n->rows = shape.size() == 1 ? 1 : shape[0];
  n->cols = shape.back();
  n->shape = std::move(shape);
  n->value.assign(n->rows * n->cols, 0.0);
  bool any = false;
  for (const Tensor* t : inputs) any = any || t->requires_grad();
  n->requires_grad = any && tape.recording();
  if (n->requires_grad) {
    for (const Tensor* t : inputs) n->inputs.push_back(t->ptr());
  }
  return n;
}

NodePtr make_node(Tape& tape, Shape shape, std::span<const Tensor> inputs) {
  auto n = std::make_shared<Node>();
  n->rows = shape.size() == 1 ? 1 : shape[0];
  n->cols = shape.back();
  n->shape = std::move(shape);
  n->value.assign(n->rows * n->cols, 0.0);
  bool any = false;
  for (const Tensor& t : inputs) any = any || t.requires_grad();
  n->requires_grad = any && tape.recording();
  if (n->requires_grad) {
    for (const Tensor& t : inputs) n->inputs.push_back(t.ptr());
  }
  return n;
}

Tensor finish(Tape& tape, NodePtr n, const char* kind) {
  for (double v : n->value) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string("non-finite output in ") + kind);
    }
  }
  if (n->requires_grad) {
    tape.record(n);
  } else {
    n->backward = nullptr;
    n->inputs.clear();
  }
  return Tensor(std::move(n));
}

// The gradient buffer of input i, or null when that input needs none.
double* input_grad(Node& self, std::size_t i) {
  Node& in = *self.inputs[i];
  if (!in.requires_grad) return nullptr;
  return in.ensure_grad().data();
}

Shape matrix_shape(const Tensor& like, std::size_t rows, std::size_t cols) {
  if (like.rank() == 1 && rows == 1) return {cols};
  return {rows, cols};
}

enum class Broadcast { kSame, kScalar, kRow, kCol };

Broadcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() == b.rows() && a.cols() == b.cols()) return Broadcast::kSame;
  if (b.size() == 1) return Broadcast::kScalar;
  if (b.rows() == 1 && b.cols() == a.cols()) return Broadcast::kRow;
  if (b.cols() == 1 && b.rows() == a.rows()) return Broadcast::kCol;
  throw ShapeError(std::string(op) + ": operand b " + shape_string(b.shape()) +
                   " does not broadcast against operand a " + shape_string(a.shape()));
}

inline std::size_t bindex(Broadcast k, std::size_t r, std::size_t c, std::size_t cols) {
  switch (k) {
    case Broadcast::kSame: return r * cols + c;
    case Broadcast::kScalar: return 0;
    case Broadcast::kRow: return c;
    case Broadcast::kCol: return r;
  }
  return 0;
}

template <typename Fwd, typename GradA, typename GradB>
Tensor binary(Tape& tape, const Tensor& a, const Tensor& b, const char* kind, Fwd fwd,
              GradA ga_fn, GradB gb_fn) {
  const Broadcast k = broadcast_kind(a, b, kind);
  auto n = make_node(tape, a.shape(), {&a, &b});
  const std::size_t rows = a.rows(), cols = a.cols();
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      n->value[r * cols + c] = fwd(av[r * cols + c], bv[bindex(k, r, c, cols)]);
    }
  }
  if (n->requires_grad) {
    n->backward = [k, rows, cols, ga_fn, gb_fn](Node& self) {
      const auto& av = self.inputs[0]->value;
      const auto& bv = self.inputs[1]->value;
      double* ga = input_grad(self, 0);
      double* gb = input_grad(self, 1);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
          const std::size_t i = r * cols + c;
          const std::size_t j = bindex(k, r, c, cols);
          const double g = self.grad[i];
          if (ga) ga[i] += ga_fn(g, av[i], bv[j]);
          if (gb) gb[j] += gb_fn(g, av[i], bv[j]);
        }
      }
    };
  }
  return finish(tape, std::move(n), kind);
}

template <typename Fwd, typename Deriv>
Tensor unary(Tape& tape, const Tensor& a, const char* kind, Fwd fwd, Deriv deriv) {
  auto n = make_node(tape, a.shape(), {&a});
  const auto av = a.values();
  for (std::size_t i = 0; i < av.size(); ++i) n->value[i] = fwd(av[i]);
  if (n->requires_grad) {
    // deriv(x, y) with x the input and y the output value.
    n->backward = [deriv](Node& self) {
      double* ga = input_grad(self, 0);
      if (!ga) return;
      const auto& x = self.inputs[0]->value;
      for (std::size_t i = 0; i < x.size(); ++i) {
        ga[i] += self.grad[i] * deriv(x[i], self.value[i]);
      }
    };
  }
  return finish(tape, std::move(n), kind);
}

void check_mask(std::span<const bool> mask, std::size_t expected, const char* op) {
  if (!mask.empty() && mask.size() != expected) {
    throw ShapeError(std::string(op) + ": mask of length " + std::to_string(mask.size()) +
                     " does not match " + std::to_string(expected) + " positions");
  }
}

}  // namespace

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b, bool transpose_b) {
  const std::size_t m = a.rows(), k = a.cols();
  const std::size_t kb = transpose_b ? b.cols() : b.rows();
  const std::size_t n_cols = transpose_b ? b.rows() : b.cols();
  if (k != kb) {
    throw ShapeError("matmul: inner dimension of operand a " + shape_string(a.shape()) +
                     " does not match operand b " + shape_string(b.shape()) +
                     (transpose_b ? " (transposed)" : ""));
  }
  auto n = make_node(tape, matrix_shape(a, m, n_cols), {&a, &b});
  const double* A = a.values().data();
  const double* B = b.values().data();
  double* C = n->value.data();
  if (!transpose_b) {
    for (std::size_t i = 0; i < m; ++i) {
      double* crow = C + i * n_cols;
      for (std::size_t p = 0; p < k; ++p) {
        const double aip = A[i * k + p];
        const double* brow = B + p * n_cols;
        for (std::size_t j = 0; j < n_cols; ++j) crow[j] += aip * brow[j];
      }
    }
  } else {
    for (std::size_t i = 0; i < m; ++i) {
      const double* arow = A + i * k;
      for (std::size_t j = 0; j < n_cols; ++j) {
        const double* brow = B + j * k;
        double s = 0.0;
        for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
        C[i * n_cols + j] = s;
      }
    }
  }
  if (n->requires_grad) {
    n->backward = [m, k, n_cols, transpose_b](Node& self) {
      const double* A = self.inputs[0]->value.data();
      const double* B = self.inputs[1]->value.data();
      const double* G = self.grad.data();
      double* gA = input_grad(self, 0);
      double* gB = input_grad(self, 1);
      if (!transpose_b) {
        if (gA) {
          for (std::size_t i = 0; i < m; ++i) {
            const double* grow = G + i * n_cols;
            for (std::size_t p = 0; p < k; ++p) {
              const double* brow = B + p * n_cols;
              double s = 0.0;
              for (std::size_t j = 0; j < n_cols; ++j) s += grow[j] * brow[j];
              gA[i * k + p] += s;
            }
          }
        }
        if (gB) {
          for (std::size_t i = 0; i < m; ++i) {
            const double* grow = G + i * n_cols;
            for (std::size_t p = 0; p < k; ++p) {
              const double aip = A[i * k + p];
              double* gbrow = gB + p * n_cols;
              for (std::size_t j = 0; j < n_cols; ++j) gbrow[j] += aip * grow[j];
            }
          }
        }
      } else {
        for (std::size_t i = 0; i < m; ++i) {
          const double* grow = G + i * n_cols;
          const double* arow = A + i * k;
          for (std::size_t j = 0; j < n_cols; ++j) {
            const double g = grow[j];
            if (g == 0.0) continue;
            if (gA) {
              const double* brow = B + j * k;
              double* garow = gA + i * k;
              for (std::size_t p = 0; p < k; ++p) garow[p] += g * brow[p];
            }
            if (gB) {
              double* gbrow = gB + j * k;
              for (std::size_t p = 0; p < k; ++p) gbrow[p] += g * arow[p];
            }
          }
        }
      }
    };
  }
  return finish(tape, std::move(n), "matmul");
}

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  return binary(
      tape, a, b, "add", [](double x, double y) { return x + y; },
      [](double g, double, double) { return g; }, [](double g, double, double) { return g; });
}

Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
  return binary(
      tape, a, b, "sub", [](double x, double y) { return x - y; },
      [](double g, double, double) { return g; }, [](double g, double, double) { return -g; });
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  return binary(
      tape, a, b, "mul", [](double x, double y) { return x * y; },
      [](double g, double, double y) { return g * y; },
      [](double g, double x, double) { return g * x; });
}

Tensor scale(Tape& tape, const Tensor& a, double factor) {
  return unary(
      tape, a, "scale", [factor](double x) { return x * factor; },
      [factor](double, double) { return factor; });
}

Tensor concat_cols(Tape& tape, std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no operands");
  const std::size_t rows = parts[0].rows();
  std::size_t total = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (parts[i].rows() != rows) {
      throw ShapeError("concat_cols: operand " + std::to_string(i) + " " +
                       shape_string(parts[i].shape()) + " has mismatched row count");
    }
    total += parts[i].cols();
  }
  auto n = make_node(tape, matrix_shape(parts[0], rows, total), parts);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const Tensor& p : parts) {
    offsets.push_back(off);
    const auto pv = p.values();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(pv.data() + r * p.cols(), p.cols(), n->value.data() + r * total + off);
    }
    off += p.cols();
  }
  if (n->requires_grad) {
    n->backward = [rows, total, offsets](Node& self) {
      for (std::size_t i = 0; i < self.inputs.size(); ++i) {
        double* g = input_grad(self, i);
        if (!g) continue;
        const std::size_t pc = self.inputs[i]->cols;
        for (std::size_t r = 0; r < rows; ++r) {
          const double* src = self.grad.data() + r * total + offsets[i];
          for (std::size_t c = 0; c < pc; ++c) g[r * pc + c] += src[c];
        }
      }
    };
  }
  return finish(tape, std::move(n), "concat_cols");
}

Tensor concat_rows(Tape& tape, std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no operands");
  const std::size_t cols = parts[0].cols();
  std::size_t total = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (parts[i].cols() != cols) {
      throw ShapeError("concat_rows: operand " + std::to_string(i) + " " +
                       shape_string(parts[i].shape()) + " has mismatched column count");
    }
    total += parts[i].rows();
  }
  auto n = make_node(tape, {total, cols}, parts);
  std::size_t off = 0;
  for (const Tensor& p : parts) {
    std::copy(p.values().begin(), p.values().end(), n->value.begin() + off * cols);
    off += p.rows();
  }
  if (n->requires_grad) {
    n->backward = [cols](Node& self) {
      std::size_t off = 0;
      for (std::size_t i = 0; i < self.inputs.size(); ++i) {
        const std::size_t len = self.inputs[i]->value.size();
        double* g = input_grad(self, i);
        if (g) {
          const double* src = self.grad.data() + off * cols;
          for (std::size_t j = 0; j < len; ++j) g[j] += src[j];
        }
        off += self.inputs[i]->rows;
      }
    };
  }
  return finish(tape, std::move(n), "concat_rows");
}

Tensor slice_cols(Tape& tape, const Tensor& a, std::size_t begin, std::size_t count) {
  if (count == 0 || begin + count > a.cols()) {
    throw ShapeError("slice_cols: range [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") outside operand " +
                     shape_string(a.shape()));
  }
  const std::size_t rows = a.rows(), cols = a.cols();
  auto n = make_node(tape, matrix_shape(a, rows, count), {&a});
  const auto av = a.values();
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(av.data() + r * cols + begin, count, n->value.data() + r * count);
  }
  if (n->requires_grad) {
    n->backward = [rows, cols, begin, count](Node& self) {
      double* g = input_grad(self, 0);
      if (!g) return;
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < count; ++c) {
          g[r * cols + begin + c] += self.grad[r * count + c];
        }
      }
    };
  }
  return finish(tape, std::move(n), "slice_cols");
}

Tensor slice_rows(Tape& tape, const Tensor& a, std::size_t begin, std::size_t count) {
  if (count == 0 || begin + count > a.rows()) {
    throw ShapeError("slice_rows: range [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") outside operand " +
                     shape_string(a.shape()));
  }
  const std::size_t cols = a.cols();
  auto n = make_node(tape, {count, cols}, {&a});
  const auto av = a.values();
  std::copy_n(av.data() + begin * cols, count * cols, n->value.data());
  if (n->requires_grad) {
    n->backward = [begin, cols](Node& self) {
      double* g = input_grad(self, 0);
      if (!g) return;
      double* dst = g + begin * cols;
      for (std::size_t i = 0; i < self.grad.size(); ++i) dst[i] += self.grad[i];
    };
  }
  return finish(tape, std::move(n), "slice_rows");
}

Tensor reshape(Tape& tape, const Tensor& a, Shape shape) {
  std::size_t total = 1;
  for (std::size_t d : shape) total *= d;
  if (shape.empty() || shape.size() > 2 || total != a.size() || total == 0) {
    throw ShapeError("reshape: cannot view " + shape_string(a.shape()) + " as " +
                     shape_string(shape));
  }
  auto n = make_node(tape, std::move(shape), {&a});
  std::copy(a.values().begin(), a.values().end(), n->value.begin());
  if (n->requires_grad) {
    n->backward = [](Node& self) {
      double* g = input_grad(self, 0);
      if (!g) return;
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    };
  }
  return finish(tape, std::move(n), "reshape");
}

Tensor tanh(Tape& tape, const Tensor& a) {
  return unary(
      tape, a, "tanh", [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(Tape& tape, const Tensor& a) {
  return unary(
      tape, a, "sigmoid",
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(Tape& tape, const Tensor& a) {
  return unary(
      tape, a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor clip(Tape& tape, const Tensor& a, double lo, double hi) {
  if (!(lo <= hi)) throw ContractError("clip: empty interval");
  return unary(
      tape, a, "clip", [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

Tensor softmax(Tape& tape, const Tensor& a, std::span<const bool> key_mask) {
  const std::size_t rows = a.rows(), cols = a.cols();
  check_mask(key_mask, cols, "softmax");
  if (!key_mask.empty() && std::none_of(key_mask.begin(), key_mask.end(), [](bool b) { return b; })) {
    throw ShapeError("softmax: every key position is masked");
  }
  auto n = make_node(tape, a.shape(), {&a});
  const auto av = a.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = av.data() + r * cols;
    double* y = n->value.data() + r * cols;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < cols; ++c) {
      if (key_mask.empty() || key_mask[c]) mx = std::max(mx, x[c]);
    }
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      y[c] = (key_mask.empty() || key_mask[c]) ? std::exp(x[c] - mx) : 0.0;
      z += y[c];
    }
    for (std::size_t c = 0; c < cols; ++c) y[c] /= z;
  }
  if (n->requires_grad) {
    n->backward = [rows, cols](Node& self) {
      double* g = input_grad(self, 0);
      if (!g) return;
      for (std::size_t r = 0; r < rows; ++r) {
        const double* y = self.value.data() + r * cols;
        const double* dy = self.grad.data() + r * cols;
        double dot = 0.0;
        for (std::size_t c = 0; c < cols; ++c) dot += dy[c] * y[c];
        for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += y[c] * (dy[c] - dot);
      }
    };
  }
  return finish(tape, std::move(n), "softmax");
}

Tensor log_softmax(Tape& tape, const Tensor& a) {
  const std::size_t rows = a.rows(), cols = a.cols();
  auto n = make_node(tape, a.shape(), {&a});
  const auto av = a.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = av.data() + r * cols;
    double mx = *std::max_element(x, x + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += std::exp(x[c] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t c = 0; c < cols; ++c) n->value[r * cols + c] = x[c] - lse;
  }
  if (n->requires_grad) {
    n->backward = [rows, cols](Node& self) {
      double* g = input_grad(self, 0);
      if (!g) return;
      for (std::size_t r = 0; r < rows; ++r) {
        const double* y = self.value.data() + r * cols;
        const double* dy = self.grad.data() + r * cols;
        double total = 0.0;
        for (std::size_t c = 0; c < cols; ++c) total += dy[c];
        for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += dy[c] - std::exp(y[c]) * total;
      }
    };
  }
  return finish(tape, std::move(n), "log_softmax");
}

Tensor logsumexp(Tape& tape, const Tensor& a, Axis axis) {
  const std::size_t rows = a.rows(), cols = a.cols();
  Shape out_shape;
  switch (axis) {
    case Axis::kAll: out_shape = {1}; break;
    case Axis::kRows: out_shape = {1, cols}; break;
    case Axis::kCols: out_shape = {rows, 1}; break;
  }
  auto n = make_node(tape, out_shape, {&a});
  const auto av = a.values();
  // Output slot that element (r, c) reduces into.
  auto slot = [axis, cols](std::size_t r, std::size_t c) -> std::size_t {
    switch (axis) {
      case Axis::kAll: return 0;
      case Axis::kRows: return c;
      case Axis::kCols: return r;
    }
    return 0;
  };
  std::vector<double> mx(n->value.size(), -std::numeric_limits<double>::infinity());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      double& m = mx[slot(r, c)];
      m = std::max(m, av[r * cols + c]);
    }
  }
  std::vector<double> z(n->value.size(), 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const std::size_t s = slot(r, c);
      z[s] += std::exp(av[r * cols + c] - mx[s]);
    }
  }
  for (std::size_t s = 0; s < z.size(); ++s) n->value[s] = mx[s] + std::log(z[s]);
  if (n->requires_grad) {
    n->backward = [rows, cols, slot](Node& self) {
      double* g = input_grad(self, 0);
      if (!g) return;
      const auto& x = self.inputs[0]->value;
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
          const std::size_t s = slot(r, c);
          const std::size_t i = r * cols + c;
          g[i] += self.grad[s] * std::exp(x[i] - self.value[s]);
        }
      }
    };
  }
  return finish(tape, std::move(n), "logsumexp");
}

Tensor sum(Tape& tape, const Tensor& a) {
  auto n = make_node(tape, {1}, {&a});
  double s = 0.0;
  for (double v : a.values()) s += v;
  n->value[0] = s;
  if (n->requires_grad) {
    n->backward = [](Node& self) {
      double* g = input_grad(self, 0);
      if (!g) return;
      const std::size_t len = self.inputs[0]->value.size();
      for (std::size_t i = 0; i < len; ++i) g[i] += self.grad[0];
    };
  }
  return finish(tape, std::move(n), "sum");
}

Tensor mean(Tape& tape, const Tensor& a) {
  return scale(tape, sum(tape, a), 1.0 / static_cast<double>(a.size()));
}

Tensor max_over_time(Tape& tape, const Tensor& a, std::span<const bool> mask) {
  const std::size_t rows = a.rows(), cols = a.cols();
  check_mask(mask, rows, "max_over_time");
  std::vector<std::size_t> arg(cols, rows);
  const auto av = a.values();
  for (std::size_t r = 0; r < rows; ++r) {
    if (!mask.empty() && !mask[r]) continue;
    for (std::size_t c = 0; c < cols; ++c) {
      if (arg[c] == rows || av[r * cols + c] > av[arg[c] * cols + c]) arg[c] = r;
    }
  }
  if (arg[0] == rows) throw ShapeError("max_over_time: every position is masked");
  auto n = make_node(tape, {cols}, {&a});
  for (std::size_t c = 0; c < cols; ++c) n->value[c] = av[arg[c] * cols + c];
  if (n->requires_grad) {
    n->backward = [arg, cols](Node& self) {
      double* g = input_grad(self, 0);
      if (!g) return;
      for (std::size_t c = 0; c < cols; ++c) g[arg[c] * cols + c] += self.grad[c];
    };
  }
  return finish(tape, std::move(n), "max_over_time");
}

Tensor dropout(Tape& tape, const Tensor& a, double rate, bool train) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ContractError("dropout: rate must lie in [0, 1), got " + std::to_string(rate));
  }
  if (!train || rate == 0.0) return a;
  const double keep = 1.0 - rate;
  std::bernoulli_distribution survive(keep);
  std::vector<double> factor(a.size());
  for (double& f : factor) f = survive(tape.rng()) ? 1.0 / keep : 0.0;
  auto n = make_node(tape, a.shape(), {&a});
  const auto av = a.values();
  for (std::size_t i = 0; i < factor.size(); ++i) n->value[i] = av[i] * factor[i];
  if (n->requires_grad) {
    n->backward = [factor = std::move(factor)](Node& self) {
      double* g = input_grad(self, 0);
      if (!g) return;
      for (std::size_t i = 0; i < factor.size(); ++i) g[i] += self.grad[i] * factor[i];
    };
  }
  return finish(tape, std::move(n), "dropout");
}

Tensor layer_norm(Tape& tape, const Tensor& a, double eps) {
  const std::size_t rows = a.rows(), cols = a.cols();
  auto n = make_node(tape, a.shape(), {&a});
  std::vector<double> inv_std(rows);
  const auto av = a.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = av.data() + r * cols;
    double mu = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mu += x[c];
    mu /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) var += (x[c] - mu) * (x[c] - mu);
    var /= static_cast<double>(cols);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < cols; ++c) n->value[r * cols + c] = (x[c] - mu) * inv_std[r];
  }
  if (n->requires_grad) {
    n->backward = [rows, cols, inv_std = std::move(inv_std)](Node& self) {
      double* g = input_grad(self, 0);
      if (!g) return;
      const double inv_n = 1.0 / static_cast<double>(cols);
      for (std::size_t r = 0; r < rows; ++r) {
        const double* y = self.value.data() + r * cols;
        const double* dy = self.grad.data() + r * cols;
        double mean_dy = 0.0, mean_dy_y = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
          mean_dy += dy[c];
          mean_dy_y += dy[c] * y[c];
        }
        mean_dy *= inv_n;
        mean_dy_y *= inv_n;
        for (std::size_t c = 0; c < cols; ++c) {
          g[r * cols + c] += inv_std[r] * (dy[c] - mean_dy - y[c] * mean_dy_y);
        }
      }
    };
  }
  return finish(tape, std::move(n), "layer_norm");
}

Tensor embedding_lookup(Tape& tape, const Tensor& table, std::span<const std::size_t> ids) {
  if (ids.empty()) throw ShapeError("embedding_lookup: empty id list");
  const std::size_t cols = table.cols();
  for (std::size_t id : ids) {
    if (id >= table.rows()) {
      throw RangeError("embedding_lookup: id " + std::to_string(id) +
                       " outside table of " + std::to_string(table.rows()) + " rows");
    }
  }
  auto n = make_node(tape, {ids.size(), cols}, {&table});
  const auto tv = table.values();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::copy_n(tv.data() + ids[i] * cols, cols, n->value.data() + i * cols);
  }
  if (n->requires_grad) {
    n->backward = [idv = std::vector<std::size_t>(ids.begin(), ids.end()), cols](Node& self) {
      double* g = input_grad(self, 0);
      if (!g) return;
      for (std::size_t i = 0; i < idv.size(); ++i) {
        double* dst = g + idv[i] * cols;
        const double* src = self.grad.data() + i * cols;
        for (std::size_t c = 0; c < cols; ++c) dst[c] += src[c];
      }
    };
  }
  return finish(tape, std::move(n), "embedding_lookup");
}

Tensor gather(Tape& tape, const Tensor& a, std::span<const std::size_t> flat_indices) {
  if (flat_indices.empty()) throw ShapeError("gather: empty index list");
  for (std::size_t i : flat_indices) {
    if (i >= a.size()) {
      throw ShapeError("gather: index " + std::to_string(i) + " outside operand " +
                       shape_string(a.shape()));
    }
  }
  auto n = make_node(tape, {flat_indices.size()}, {&a});
  const auto av = a.values();
  for (std::size_t i = 0; i < flat_indices.size(); ++i) n->value[i] = av[flat_indices[i]];
  if (n->requires_grad) {
    n->backward = [idx = std::vector<std::size_t>(flat_indices.begin(), flat_indices.end())](
                      Node& self) {
      double* g = input_grad(self, 0);
      if (!g) return;
      for (std::size_t i = 0; i < idx.size(); ++i) g[idx[i]] += self.grad[i];
    };
  }
  return finish(tape, std::move(n), "gather");
}

Tensor scale_grad(Tape& tape, const Tensor& a, double factor) {
  auto n = make_node(tape, a.shape(), {&a});
  std::copy(a.values().begin(), a.values().end(), n->value.begin());
  if (n->requires_grad) {
    n->backward = [factor](Node& self) {
      double* g = input_grad(self, 0);
      if (!g) return;
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += factor * self.grad[i];
    };
  }
  return finish(tape, std::move(n), "scale_grad");
}

Tensor weighted_sum(Tape& tape, std::span<const Tensor> terms,
                    std::span<const double> value_weights,
                    std::span<const double> grad_weights) {
  if (terms.empty() || terms.size() != value_weights.size() ||
      terms.size() != grad_weights.size()) {
    throw ShapeError("weighted_sum: terms and weights disagree in length");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    if (terms[i].size() != 1) {
      throw ShapeError("weighted_sum: term " + std::to_string(i) + " is not a scalar");
    }
    total += value_weights[i] * terms[i].item();
  }
  auto n = make_node(tape, {1}, terms);
  n->value[0] = total;
  if (n->requires_grad) {
    n->backward = [w = std::vector<double>(grad_weights.begin(), grad_weights.end())](
                      Node& self) {
      for (std::size_t i = 0; i < w.size(); ++i) {
        double* g = input_grad(self, i);
        if (g) g[0] += w[i] * self.grad[0];
      }
    };
  }
  return finish(tape, std::move(n), "weighted_sum");
}

}  // namespace punc::ad
