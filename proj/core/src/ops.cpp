#include "paratune/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include <Eigen/Core>

namespace paratune::ops {
namespace {

Tensor* grad_of(Tape& tape, Var v) {
  return tape.requires_grad(v) ? &tape.grad_buffer(v.id) : nullptr;
}

Tape& tape_of(Var a, Var b, const char* op) {
  if (a.tape == nullptr || a.tape != b.tape) {
    throw std::invalid_argument(std::string(op) + ": operands recorded on different tapes");
  }
  return *a.tape;
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape != b.shape) throw DimensionError(op, a.shape, b.shape);
}

void require_matrix(const char* op, const Tensor& t) {
  if (t.rank() != 2) throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_string(t.shape));
}

Shape rows_by(const Tensor& like, std::size_t cols) {
  return like.rank() == 2 ? Shape{like.shape[0], cols} : Shape{cols};
}

}  // namespace

Var add(Var a, Var b) {
  Tape& tape = tape_of(a, b, "add");
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  require_same_shape("add", x, y);
  Tensor out(x.shape);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return tape.record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    if (Tensor* ga = grad_of(t, a)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
    }
    if (Tensor* gb = grad_of(t, b)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i];
    }
  });
}

Var sub(Var a, Var b) {
  Tape& tape = tape_of(a, b, "sub");
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  require_same_shape("sub", x, y);
  Tensor out(x.shape);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return tape.record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    if (Tensor* ga = grad_of(t, a)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
    }
    if (Tensor* gb = grad_of(t, b)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  Tape& tape = tape_of(a, b, "mul");
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  require_same_shape("mul", x, y);
  Tensor out(x.shape);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return tape.record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    const Tensor& x = t.value(a);
    const Tensor& y = t.value(b);
    if (Tensor* ga = grad_of(t, a)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * y[i];
    }
    if (Tensor* gb = grad_of(t, b)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * x[i];
    }
  });
}

Var abs(Var a) {
  const Tensor& x = a.value();
  Tensor out(x.shape);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::fabs(x[i]);
  return a.tape->record(std::move(out), {a}, [a](Tape& t, const Tensor& g) {
    const Tensor& x = t.value(a);
    Tensor& ga = t.grad_buffer(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double s = x[i] > 0.0 ? 1.0 : (x[i] < 0.0 ? -1.0 : 0.0);
      ga[i] += s * g[i];
    }
  });
}

Var scale(Var a, double factor) {
  const Tensor& x = a.value();
  Tensor out(x.shape);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * factor;
  return a.tape->record(std::move(out), {a}, [a, factor](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
  });
}

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixView = Eigen::Map<RowMatrix>;
using ConstMatrixView = Eigen::Map<const RowMatrix>;

ConstMatrixView view(const Tensor& t, std::size_t rows, std::size_t cols) {
  return ConstMatrixView(t.values.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

MatrixView view(Tensor& t, std::size_t rows, std::size_t cols) {
  return MatrixView(t.values.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& tape = tape_of(a, b, "matmul");
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (B.rank() != 2 || A.rank() < 1 || A.rank() > 2 || A.cols() != B.shape[0]) {
    throw DimensionError("matmul", A.shape, B.shape);
  }
  const std::size_t n = A.rows(), k = A.cols(), m = B.shape[1];
  Tensor C(rows_by(A, m));
  view(C, n, m).noalias() = view(A, n, k) * view(B, k, m);
  return tape.record(std::move(C), {a, b}, [a, b, n, k, m](Tape& t, const Tensor& g) {
    if (Tensor* ga = grad_of(t, a)) {
      view(*ga, n, k).noalias() += view(g, n, m) * view(t.value(b), k, m).transpose();
    }
    if (Tensor* gb = grad_of(t, b)) {
      view(*gb, k, m).noalias() += view(t.value(a), n, k).transpose() * view(g, n, m);
    }
  });
}

Var matmul_nt(Var a, Var b) {
  Tape& tape = tape_of(a, b, "matmul_nt");
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.rank() != 2 || B.rank() != 2 || A.cols() != B.cols()) {
    throw DimensionError("matmul_nt", A.shape, B.shape);
  }
  const std::size_t n = A.shape[0], k = A.cols(), m = B.shape[0];
  Tensor C({n, m});
  view(C, n, m).noalias() = view(A, n, k) * view(B, m, k).transpose();
  return tape.record(std::move(C), {a, b}, [a, b, n, k, m](Tape& t, const Tensor& g) {
    if (Tensor* ga = grad_of(t, a)) {
      view(*ga, n, k).noalias() += view(g, n, m) * view(t.value(b), m, k);
    }
    if (Tensor* gb = grad_of(t, b)) {
      view(*gb, m, k).noalias() += view(g, n, m).transpose() * view(t.value(a), n, k);
    }
  });
}

Var add_bias(Var x, Var bias) {
  Tape& tape = tape_of(x, bias, "add_bias");
  const Tensor& X = x.value();
  const Tensor& b = bias.value();
  if (b.rank() != 1 || X.cols() != b.size()) throw DimensionError("add_bias", X.shape, b.shape);
  const std::size_t n = X.rows(), m = X.cols();
  Tensor out(X.shape);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) out.values[i * m + j] = X.values[i * m + j] + b.values[j];
  }
  return tape.record(std::move(out), {x, bias}, [x, bias, n, m](Tape& t, const Tensor& g) {
    if (Tensor* gx = grad_of(t, x)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
    }
    if (Tensor* gb = grad_of(t, bias)) {
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) (*gb)[j] += g.values[i * m + j];
      }
    }
  });
}

Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat: no operands");
  Tape& tape = *parts[0].tape;
  const Tensor& first = parts[0].value();
  const std::size_t n = first.rows();
  std::size_t total = 0;
  std::vector<std::size_t> widths;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    if (p.tape != &tape) throw std::invalid_argument("concat: operands recorded on different tapes");
    if (v.rank() != first.rank() || v.rows() != n) throw DimensionError("concat", first.shape, v.shape);
    widths.push_back(v.cols());
    total += v.cols();
  }
  Tensor out(rows_by(first, total));
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& v = parts[k].value();
    for (std::size_t i = 0; i < n; ++i) {
      std::copy_n(&v.values[i * widths[k]], widths[k], &out.values[i * total + offset]);
    }
    offset += widths[k];
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return tape.record(std::move(out), inputs, [inputs, widths, n, total](Tape& t, const Tensor& g) {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
      if (Tensor* gp = grad_of(t, inputs[k])) {
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < widths[k]; ++j) {
            gp->values[i * widths[k] + j] += g.values[i * total + offset + j];
          }
        }
      }
      offset += widths[k];
    }
  });
}

Var concat(std::initializer_list<Var> parts) {
  return concat(std::span<const Var>(parts.begin(), parts.size()));
}

Var slice_cols(Var x, std::size_t start, std::size_t count) {
  const Tensor& X = x.value();
  const std::size_t n = X.rows(), m = X.cols();
  if (start + count > m) {
    throw DimensionError("slice_cols: columns [" + std::to_string(start) + ", " +
                         std::to_string(start + count) + ") exceed " + shape_string(X.shape));
  }
  Tensor out(rows_by(X, count));
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(&X.values[i * m + start], count, &out.values[i * count]);
  }
  return x.tape->record(std::move(out), {x}, [x, start, count, n, m](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad_buffer(x.id);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < count; ++j) gx.values[i * m + start + j] += g.values[i * count + j];
    }
  });
}

Var row(Var x, std::size_t index) {
  const Tensor& X = x.value();
  require_matrix("row", X);
  if (index >= X.shape[0]) {
    throw SpanError("row " + std::to_string(index) + " out of range for " + shape_string(X.shape));
  }
  const std::size_t m = X.cols();
  Tensor out({m}, std::vector<double>(X.values.begin() + static_cast<long>(index * m),
                                      X.values.begin() + static_cast<long>((index + 1) * m)));
  return x.tape->record(std::move(out), {x}, [x, index, m](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad_buffer(x.id);
    for (std::size_t j = 0; j < m; ++j) gx.values[index * m + j] += g.values[j];
  });
}

Var gather_rows(Var x, std::span<const std::size_t> rows) {
  const Tensor& X = x.value();
  require_matrix("gather_rows", X);
  const std::size_t m = X.cols();
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  Tensor out({idx.size(), m});
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= X.shape[0]) {
      throw SpanError("gather_rows: row " + std::to_string(idx[r]) + " out of range for " +
                      shape_string(X.shape));
    }
    std::copy_n(&X.values[idx[r] * m], m, &out.values[r * m]);
  }
  return x.tape->record(std::move(out), {x}, [x, idx, m](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad_buffer(x.id);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      for (std::size_t j = 0; j < m; ++j) gx.values[idx[r] * m + j] += g.values[r * m + j];
    }
  });
}

Var softmax(Var x) {
  const Tensor& X = x.value();
  const std::size_t n = X.rows(), m = X.cols();
  Tensor out(X.shape);
  for (std::size_t i = 0; i < n; ++i) {
    const double* in = &X.values[i * m];
    double* o = &out.values[i * m];
    const double mx = *std::max_element(in, in + m);
    double z = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      o[j] = std::exp(in[j] - mx);
      z += o[j];
    }
    for (std::size_t j = 0; j < m; ++j) o[j] /= z;
  }
  return x.tape->record(std::move(out), {x}, [x, n, m](Tape& t, const Tensor& g) {
    const Tensor& X = t.value(x);
    Tensor& gx = t.grad_buffer(x.id);
    std::vector<double> p(m);
    for (std::size_t i = 0; i < n; ++i) {
      const double* in = &X.values[i * m];
      const double mx = *std::max_element(in, in + m);
      double z = 0.0;
      for (std::size_t j = 0; j < m; ++j) {
        p[j] = std::exp(in[j] - mx);
        z += p[j];
      }
      double dot = 0.0;
      for (std::size_t j = 0; j < m; ++j) {
        p[j] /= z;
        dot += p[j] * g.values[i * m + j];
      }
      for (std::size_t j = 0; j < m; ++j) gx.values[i * m + j] += p[j] * (g.values[i * m + j] - dot);
    }
  });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  const Tensor& X = x.value();
  const Tensor& G = gamma.value();
  const Tensor& B = beta.value();
  const std::size_t n = X.rows(), m = X.cols();
  if (G.size() != m || B.size() != m) throw DimensionError("layer_norm", X.shape, G.shape);
  Tensor out(X.shape);
  std::vector<double> xhat(n * m), rstd(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* in = &X.values[i * m];
    double mu = 0.0;
    for (std::size_t j = 0; j < m; ++j) mu += in[j];
    mu /= static_cast<double>(m);
    double var = 0.0;
    for (std::size_t j = 0; j < m; ++j) var += (in[j] - mu) * (in[j] - mu);
    var /= static_cast<double>(m);
    rstd[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < m; ++j) {
      xhat[i * m + j] = (in[j] - mu) * rstd[i];
      out.values[i * m + j] = G.values[j] * xhat[i * m + j] + B.values[j];
    }
  }
  return x.tape->record(
      std::move(out), {x, gamma, beta},
      [x, gamma, beta, n, m, xhat = std::move(xhat), rstd = std::move(rstd)](Tape& t, const Tensor& g) {
        const Tensor& G = t.value(gamma);
        Tensor* gx = grad_of(t, x);
        Tensor* gg = grad_of(t, gamma);
        Tensor* gb = grad_of(t, beta);
        std::vector<double> dxhat(m);
        for (std::size_t i = 0; i < n; ++i) {
          double mean_d = 0.0, mean_dx = 0.0;
          for (std::size_t j = 0; j < m; ++j) {
            const double gij = g.values[i * m + j];
            const double xh = xhat[i * m + j];
            if (gg) gg->values[j] += gij * xh;
            if (gb) gb->values[j] += gij;
            dxhat[j] = gij * G.values[j];
            mean_d += dxhat[j];
            mean_dx += dxhat[j] * xh;
          }
          if (!gx) continue;
          mean_d /= static_cast<double>(m);
          mean_dx /= static_cast<double>(m);
          for (std::size_t j = 0; j < m; ++j) {
            gx->values[i * m + j] += rstd[i] * (dxhat[j] - mean_d - xhat[i * m + j] * mean_dx);
          }
        }
      });
}

Var gelu(Var x) {
  const Tensor& X = x.value();
  Tensor out(X.shape);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = X[i] * 0.5 * (1.0 + std::erf(X[i] * std::numbers::sqrt2 * 0.5));
  }
  return x.tape->record(std::move(out), {x}, [x](Tape& t, const Tensor& g) {
    const Tensor& X = t.value(x);
    Tensor& gx = t.grad_buffer(x.id);
    const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = X[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 * 0.5));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
      gx[i] += g[i] * (cdf + v * pdf);
    }
  });
}

Var dropout(Var x, double p, std::mt19937_64& rng) {
  if (!(p >= 0.0 && p < 1.0)) {
    throw std::invalid_argument("dropout probability must lie in [0,1), got " + std::to_string(p));
  }
  const Tensor& X = x.value();
  std::vector<double> mask(X.size(), 1.0);
  if (p > 0.0) {
    std::bernoulli_distribution keep(1.0 - p);
    const double s = 1.0 / (1.0 - p);
    for (auto& m : mask) m = keep(rng) ? s : 0.0;
  }
  Tensor out(X.shape);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = X[i] * mask[i];
  return x.tape->record(std::move(out), {x}, [x, mask = std::move(mask)](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad_buffer(x.id);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * mask[i];
  });
}

Var embedding(Var table, std::span<const int> ids) {
  const Tensor& T = table.value();
  require_matrix("embedding", T);
  const std::size_t vocab = T.shape[0], d = T.shape[1];
  std::vector<int> rows(ids.begin(), ids.end());
  Tensor out({rows.size(), d});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] < 0 || static_cast<std::size_t>(rows[r]) >= vocab) {
      throw std::out_of_range("embedding: id " + std::to_string(rows[r]) + " outside table of " +
                              std::to_string(vocab) + " rows");
    }
    std::copy_n(&T.values[static_cast<std::size_t>(rows[r]) * d], d, &out.values[r * d]);
  }
  return table.tape->record(std::move(out), {table}, [table, rows, d](Tape& t, const Tensor& g) {
    Tensor& gt = t.grad_buffer(table.id);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      double* dst = &gt.values[static_cast<std::size_t>(rows[r]) * d];
      for (std::size_t j = 0; j < d; ++j) dst[j] += g.values[r * d + j];
    }
  });
}

namespace {
void check_span(const char* op, const Tensor& h, std::size_t begin, std::size_t end) {
  if (h.rank() != 2) throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_string(h.shape));
  if (begin > end || end >= h.shape[0]) {
    throw SpanError(std::string(op) + ": span (" + std::to_string(begin) + ", " + std::to_string(end) +
                    ") out of range for " + std::to_string(h.shape[0]) + " rows");
  }
}
}  // namespace

Var max_pool_span(Var h, std::size_t begin, std::size_t end) {
  const Tensor& H = h.value();
  check_span("max_pool_span", H, begin, end);
  const std::size_t d = H.cols();
  Tensor out({d});
  std::vector<std::size_t> argmax(d, begin);
  for (std::size_t j = 0; j < d; ++j) {
    double best = H.values[begin * d + j];
    for (std::size_t r = begin + 1; r <= end; ++r) {
      if (H.values[r * d + j] > best) {
        best = H.values[r * d + j];
        argmax[j] = r;
      }
    }
    out.values[j] = best;
  }
  return h.tape->record(std::move(out), {h}, [h, d, argmax = std::move(argmax)](Tape& t, const Tensor& g) {
    Tensor& gh = t.grad_buffer(h.id);
    for (std::size_t j = 0; j < d; ++j) gh.values[argmax[j] * d + j] += g.values[j];
  });
}

Var mean_pool_span(Var h, std::size_t begin, std::size_t end) {
  const Tensor& H = h.value();
  check_span("mean_pool_span", H, begin, end);
  const std::size_t d = H.cols();
  const double inv = 1.0 / static_cast<double>(end - begin + 1);
  Tensor out({d});
  for (std::size_t r = begin; r <= end; ++r) {
    for (std::size_t j = 0; j < d; ++j) out.values[j] += H.values[r * d + j];
  }
  for (auto& v : out.values) v *= inv;
  return h.tape->record(std::move(out), {h}, [h, d, begin, end, inv](Tape& t, const Tensor& g) {
    Tensor& gh = t.grad_buffer(h.id);
    for (std::size_t r = begin; r <= end; ++r) {
      for (std::size_t j = 0; j < d; ++j) gh.values[r * d + j] += g.values[j] * inv;
    }
  });
}

Var softmax_cross_entropy(Var logits, std::size_t label) {
  const Tensor& X = logits.value();
  if (X.rows() != 1) throw DimensionError("softmax_cross_entropy: expected a vector, got " + shape_string(X.shape));
  const std::size_t c = X.cols();
  if (label >= c) {
    throw std::out_of_range("softmax_cross_entropy: label " + std::to_string(label) + " outside " +
                            std::to_string(c) + " classes");
  }
  const double mx = *std::max_element(X.values.begin(), X.values.end());
  double z = 0.0;
  for (double v : X.values) z += std::exp(v - mx);
  const double lse = mx + std::log(z);
  return logits.tape->record(Tensor::scalar(lse - X.values[label]), {logits},
                             [logits, label, c, mx, z](Tape& t, const Tensor& g) {
                               const Tensor& X = t.value(logits);
                               Tensor& gx = t.grad_buffer(logits.id);
                               for (std::size_t j = 0; j < c; ++j) {
                                 const double p = std::exp(X.values[j] - mx) / z;
                                 gx.values[j] += g.values[0] * (p - (j == label ? 1.0 : 0.0));
                               }
                             });
}

Var mse_loss(Var pred, double target) {
  const Tensor& P = pred.value();
  if (P.size() != 1) throw DimensionError("mse_loss: expected one prediction, got " + shape_string(P.shape));
  const double diff = P.values[0] - target;
  return pred.tape->record(Tensor::scalar(diff * diff), {pred}, [pred, diff](Tape& t, const Tensor& g) {
    t.grad_buffer(pred.id).values[0] += g.values[0] * 2.0 * diff;
  });
}

Var sum(std::span<const Var> scalars) {
  if (scalars.empty()) throw DimensionError("sum: no operands");
  double total = 0.0;
  for (const Var& s : scalars) {
    if (s.size() != 1) throw DimensionError("sum: expected scalars, got " + shape_string(s.shape()));
    total += s.value().values[0];
  }
  std::vector<Var> inputs(scalars.begin(), scalars.end());
  return scalars[0].tape->record(Tensor::scalar(total), inputs, [inputs](Tape& t, const Tensor& g) {
    for (const Var& v : inputs) {
      if (Tensor* gv = grad_of(t, v)) gv->values[0] += g.values[0];
    }
  });
}

Var mean(std::span<const Var> scalars) {
  return scale(sum(scalars), 1.0 / static_cast<double>(scalars.size()));
}

}  // namespace paratune::ops
