#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mldcn/tape.hpp"

namespace mldcn {

namespace detail {

inline void require_same_tape(Var a, Var b, const char* op) {
  if (a.tape != b.tape) fail(ErrorCode::contract, std::string(op) + ": operands on different tapes");
}

inline void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (!a.same_shape(b)) {
    fail(ErrorCode::shape, std::string(op) + ": shape mismatch " + a.shape() + " vs " + b.shape());
  }
}

inline void accumulate(Matrix& dst, const Matrix& src) {
  double* d = dst.data().data();
  const double* s = src.data().data();
  for (std::size_t k = 0, n = dst.size(); k < n; ++k) d[k] += s[k];
}

inline double stable_sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace detail

// C = A * B.
inline Var matmul(Var a, Var b) {
  detail::require_same_tape(a, b, "matmul");
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.rows()) {
    fail(ErrorCode::shape, "matmul: inner dimensions differ " + av.shape() + " * " + bv.shape());
  }
  Matrix c(av.rows(), bv.cols());
  kernels::gemm_nn(av, bv, c);
  Tape& t = *a.tape;
  const std::uint64_t flops = 2ull * av.rows() * av.cols() * bv.cols();
  return t.record(std::move(c), t.needs_grad(a.id) || t.needs_grad(b.id),
                  [ia = a.id, ib = b.id](Tape& tp, std::size_t self) {
                    const Matrix& g = tp.grad(self);
                    if (tp.needs_grad(ia)) kernels::gemm_nt(g, tp.value(ib), tp.grad(ia));
                    if (tp.needs_grad(ib)) kernels::gemm_tn(tp.value(ia), g, tp.grad(ib));
                  },
                  flops);
}

// C = A * B^T, for factors stored as (out x inner), e.g. U in X V U^T.
inline Var matmul_nt(Var a, Var b) {
  detail::require_same_tape(a, b, "matmul_nt");
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.cols()) {
    fail(ErrorCode::shape, "matmul_nt: inner dimensions differ " + av.shape() + " * " + bv.shape() + "^T");
  }
  Matrix c(av.rows(), bv.rows());
  kernels::gemm_nt(av, bv, c);
  Tape& t = *a.tape;
  const std::uint64_t flops = 2ull * av.rows() * av.cols() * bv.rows();
  return t.record(std::move(c), t.needs_grad(a.id) || t.needs_grad(b.id),
                  [ia = a.id, ib = b.id](Tape& tp, std::size_t self) {
                    const Matrix& g = tp.grad(self);
                    if (tp.needs_grad(ia)) kernels::gemm_nn(g, tp.value(ib), tp.grad(ia));
                    if (tp.needs_grad(ib)) kernels::gemm_tn(g, tp.value(ia), tp.grad(ib));
                  },
                  flops);
}

inline Var hadamard(Var a, Var b) {
  detail::require_same_tape(a, b, "hadamard");
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  detail::require_same_shape(av, bv, "hadamard");
  Matrix c(av.rows(), av.cols());
  for (std::size_t k = 0; k < c.size(); ++k) c[k] = av[k] * bv[k];
  Tape& t = *a.tape;
  return t.record(std::move(c), t.needs_grad(a.id) || t.needs_grad(b.id),
                  [ia = a.id, ib = b.id](Tape& tp, std::size_t self) {
                    const Matrix& g = tp.grad(self);
                    if (tp.needs_grad(ia)) {
                      Matrix& ga = tp.grad(ia);
                      const Matrix& bv = tp.value(ib);
                      for (std::size_t k = 0; k < g.size(); ++k) ga[k] += g[k] * bv[k];
                    }
                    if (tp.needs_grad(ib)) {
                      Matrix& gb = tp.grad(ib);
                      const Matrix& av = tp.value(ia);
                      for (std::size_t k = 0; k < g.size(); ++k) gb[k] += g[k] * av[k];
                    }
                  },
                  av.size());
}

inline Var add(Var a, Var b) {
  detail::require_same_tape(a, b, "add");
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  detail::require_same_shape(av, bv, "add");
  Matrix c(av.rows(), av.cols());
  for (std::size_t k = 0; k < c.size(); ++k) c[k] = av[k] + bv[k];
  Tape& t = *a.tape;
  return t.record(std::move(c), t.needs_grad(a.id) || t.needs_grad(b.id),
                  [ia = a.id, ib = b.id](Tape& tp, std::size_t self) {
                    const Matrix& g = tp.grad(self);
                    if (tp.needs_grad(ia)) detail::accumulate(tp.grad(ia), g);
                    if (tp.needs_grad(ib)) detail::accumulate(tp.grad(ib), g);
                  },
                  av.size());
}

// X + b with b a 1 x d row broadcast over every row of X. This is the only
// broadcasting op.
inline Var add_row_bias(Var x, Var b) {
  detail::require_same_tape(x, b, "add_row_bias");
  const Matrix& xv = x.value();
  const Matrix& bv = b.value();
  if (bv.rows() != 1 || bv.cols() != xv.cols()) {
    fail(ErrorCode::shape, "add_row_bias: bias " + bv.shape() + " does not fit " + xv.shape());
  }
  Matrix c = xv;
  for (std::size_t i = 0; i < c.rows(); ++i) {
    auto row = c.row(i);
    for (std::size_t j = 0; j < row.size(); ++j) row[j] += bv[j];
  }
  Tape& t = *x.tape;
  return t.record(std::move(c), t.needs_grad(x.id) || t.needs_grad(b.id),
                  [ix = x.id, ib = b.id](Tape& tp, std::size_t self) {
                    const Matrix& g = tp.grad(self);
                    if (tp.needs_grad(ix)) detail::accumulate(tp.grad(ix), g);
                    if (tp.needs_grad(ib)) {
                      Matrix& gb = tp.grad(ib);
                      for (std::size_t i = 0; i < g.rows(); ++i) {
                        auto row = g.row(i);
                        for (std::size_t j = 0; j < row.size(); ++j) gb[j] += row[j];
                      }
                    }
                  },
                  xv.size());
}

// Row i of X multiplied by the scalar s(i, 0); s is B x 1 (per-instance gate).
inline Var scale_rows(Var x, Var s) {
  detail::require_same_tape(x, s, "scale_rows");
  const Matrix& xv = x.value();
  const Matrix& sv = s.value();
  if (sv.cols() != 1 || sv.rows() != xv.rows()) {
    fail(ErrorCode::shape, "scale_rows: scale " + sv.shape() + " does not fit " + xv.shape());
  }
  Matrix c = xv;
  for (std::size_t i = 0; i < c.rows(); ++i)
    for (double& v : c.row(i)) v *= sv[i];
  Tape& t = *x.tape;
  return t.record(std::move(c), t.needs_grad(x.id) || t.needs_grad(s.id),
                  [ix = x.id, is = s.id](Tape& tp, std::size_t self) {
                    const Matrix& g = tp.grad(self);
                    const Matrix& xv = tp.value(ix);
                    const Matrix& sv = tp.value(is);
                    if (tp.needs_grad(ix)) {
                      Matrix& gx = tp.grad(ix);
                      for (std::size_t i = 0; i < g.rows(); ++i)
                        for (std::size_t j = 0; j < g.cols(); ++j) gx(i, j) += g(i, j) * sv[i];
                    }
                    if (tp.needs_grad(is)) {
                      Matrix& gs = tp.grad(is);
                      for (std::size_t i = 0; i < g.rows(); ++i) {
                        double acc = 0.0;
                        for (std::size_t j = 0; j < g.cols(); ++j) acc += g(i, j) * xv(i, j);
                        gs[i] += acc;
                      }
                    }
                  },
                  xv.size());
}

inline Var relu(Var x) {
  const Matrix& xv = x.value();
  Tape& t = *x.tape;
  if (t.tracking_kinks()) t.note_kink_signs(xv);
  Matrix c(xv.rows(), xv.cols());
  // NaN passes through so divergence is not masked.
  for (std::size_t k = 0; k < c.size(); ++k) c[k] = xv[k] < 0.0 ? 0.0 : xv[k];
  return t.record(std::move(c), t.needs_grad(x.id),
                  [ix = x.id](Tape& tp, std::size_t self) {
                    const Matrix& g = tp.grad(self);
                    const Matrix& xv = tp.value(ix);
                    Matrix& gx = tp.grad(ix);
                    // Subgradient 0 at exactly 0.
                    for (std::size_t k = 0; k < g.size(); ++k)
                      if (xv[k] > 0.0) gx[k] += g[k];
                  },
                  xv.size());
}

inline Var sigmoid(Var x) {
  const Matrix& xv = x.value();
  Matrix c(xv.rows(), xv.cols());
  for (std::size_t k = 0; k < c.size(); ++k) c[k] = detail::stable_sigmoid(xv[k]);
  Tape& t = *x.tape;
  return t.record(std::move(c), t.needs_grad(x.id),
                  [ix = x.id](Tape& tp, std::size_t self) {
                    const Matrix& g = tp.grad(self);
                    const Matrix& y = tp.value(self);
                    Matrix& gx = tp.grad(ix);
                    for (std::size_t k = 0; k < g.size(); ++k) gx[k] += g[k] * y[k] * (1.0 - y[k]);
                  },
                  xv.size());
}

inline Var softmax_rows(Var x) {
  const Matrix& xv = x.value();
  Matrix c(xv.rows(), xv.cols());
  for (std::size_t i = 0; i < xv.rows(); ++i) {
    auto in = xv.row(i);
    auto out = c.row(i);
    const double mx = *std::max_element(in.begin(), in.end());
    double sum = 0.0;
    for (std::size_t j = 0; j < in.size(); ++j) sum += out[j] = std::exp(in[j] - mx);
    for (double& v : out) v /= sum;
  }
  Tape& t = *x.tape;
  return t.record(std::move(c), t.needs_grad(x.id),
                  [ix = x.id](Tape& tp, std::size_t self) {
                    const Matrix& g = tp.grad(self);
                    const Matrix& y = tp.value(self);
                    Matrix& gx = tp.grad(ix);
                    for (std::size_t i = 0; i < g.rows(); ++i) {
                      double dot = 0.0;
                      for (std::size_t j = 0; j < g.cols(); ++j) dot += g(i, j) * y(i, j);
                      for (std::size_t j = 0; j < g.cols(); ++j) gx(i, j) += y(i, j) * (g(i, j) - dot);
                    }
                  },
                  5ull * xv.size());
}

inline constexpr double kLayerNormEps = 1e-5;

// Per-row LayerNorm with population variance, eps inside the square root,
// followed by the affine map gain * xhat + bias (gain and bias are 1 x d).
inline Var layernorm_rows(Var x, Var gain, Var bias, double eps = kLayerNormEps) {
  detail::require_same_tape(x, gain, "layernorm_rows");
  detail::require_same_tape(x, bias, "layernorm_rows");
  if (!(eps > 0.0)) fail(ErrorCode::contract, "layernorm_rows: eps must be positive");
  const Matrix& xv = x.value();
  const Matrix& gv = gain.value();
  const Matrix& bv = bias.value();
  const std::size_t rows = xv.rows(), d = xv.cols();
  if (d == 0) fail(ErrorCode::shape, "layernorm_rows: empty rows");
  if (gv.rows() != 1 || gv.cols() != d || !gv.same_shape(bv)) {
    fail(ErrorCode::shape, "layernorm_rows: gain " + gv.shape() + " / bias " + bv.shape() +
                               " do not fit " + xv.shape());
  }
  Matrix xhat(rows, d);
  std::vector<double> inv_std(rows);
  Matrix y(rows, d);
  for (std::size_t i = 0; i < rows; ++i) {
    auto in = xv.row(i);
    double mean = 0.0;
    for (double v : in) mean += v;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (double v : in) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std[i] = inv;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (in[j] - mean) * inv;
      xhat(i, j) = h;
      y(i, j) = gv[j] * h + bv[j];
    }
  }
  Tape& t = *x.tape;
  const bool ng = t.needs_grad(x.id) || t.needs_grad(gain.id) || t.needs_grad(bias.id);
  return t.record(
      std::move(y), ng,
      [ix = x.id, ig = gain.id, ib = bias.id, xhat = std::move(xhat),
       inv_std = std::move(inv_std)](Tape& tp, std::size_t self) {
        const Matrix& g = tp.grad(self);
        const Matrix& gv = tp.value(ig);
        const std::size_t d = g.cols();
        if (tp.needs_grad(ig)) {
          Matrix& gg = tp.grad(ig);
          for (std::size_t i = 0; i < g.rows(); ++i)
            for (std::size_t j = 0; j < d; ++j) gg[j] += g(i, j) * xhat(i, j);
        }
        if (tp.needs_grad(ib)) {
          Matrix& gb = tp.grad(ib);
          for (std::size_t i = 0; i < g.rows(); ++i)
            for (std::size_t j = 0; j < d; ++j) gb[j] += g(i, j);
        }
        if (tp.needs_grad(ix)) {
          Matrix& gx = tp.grad(ix);
          std::vector<double> dh(d);
          for (std::size_t i = 0; i < g.rows(); ++i) {
            double mean_dh = 0.0, mean_dh_h = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              dh[j] = g(i, j) * gv[j];
              mean_dh += dh[j];
              mean_dh_h += dh[j] * xhat(i, j);
            }
            mean_dh /= static_cast<double>(d);
            mean_dh_h /= static_cast<double>(d);
            for (std::size_t j = 0; j < d; ++j)
              gx(i, j) += inv_std[i] * (dh[j] - mean_dh - xhat(i, j) * mean_dh_h);
          }
        }
      },
      5ull * xv.size());
}

inline Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) fail(ErrorCode::shape, "concat_cols: no inputs");
  Tape& t = *parts.front().tape;
  const std::size_t rows = parts.front().rows();
  std::size_t cols = 0;
  bool ng = false;
  for (const Var& p : parts) {
    detail::require_same_tape(parts.front(), p, "concat_cols");
    if (p.rows() != rows) {
      fail(ErrorCode::shape, "concat_cols: row count mismatch " + parts.front().value().shape() +
                                 " vs " + p.value().shape());
    }
    cols += p.cols();
    ng = ng || t.needs_grad(p.id);
  }
  Matrix c(rows, cols);
  std::vector<std::size_t> ids;
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Matrix& pv = p.value();
    for (std::size_t i = 0; i < rows; ++i)
      std::copy(pv.row(i).begin(), pv.row(i).end(), c.row(i).begin() + static_cast<std::ptrdiff_t>(off));
    off += pv.cols();
    ids.push_back(p.id);
  }
  return t.record(std::move(c), ng,
                  [ids = std::move(ids)](Tape& tp, std::size_t self) {
                    const Matrix& g = tp.grad(self);
                    std::size_t off = 0;
                    for (std::size_t id : ids) {
                      const std::size_t w = tp.value(id).cols();
                      if (tp.needs_grad(id)) {
                        Matrix& gp = tp.grad(id);
                        for (std::size_t i = 0; i < g.rows(); ++i)
                          for (std::size_t j = 0; j < w; ++j) gp(i, j) += g(i, off + j);
                      }
                      off += w;
                    }
                  },
                  0);
}

inline Var concat_cols(std::initializer_list<Var> parts) {
  return concat_cols(std::span<const Var>(parts.begin(), parts.size()));
}

// Column j of X as a B x 1 matrix.
inline Var column(Var x, std::size_t j) {
  const Matrix& xv = x.value();
  if (j >= xv.cols()) {
    fail(ErrorCode::shape, "column: index " + std::to_string(j) + " out of range for " + xv.shape());
  }
  Matrix c(xv.rows(), 1);
  for (std::size_t i = 0; i < xv.rows(); ++i) c[i] = xv(i, j);
  Tape& t = *x.tape;
  return t.record(std::move(c), t.needs_grad(x.id),
                  [ix = x.id, j](Tape& tp, std::size_t self) {
                    const Matrix& g = tp.grad(self);
                    Matrix& gx = tp.grad(ix);
                    for (std::size_t i = 0; i < g.rows(); ++i) gx(i, j) += g[i];
                  },
                  0);
}

// Gathers rows of an embedding table; gradients scatter-add into the rows
// that were looked up.
inline Var embedding_lookup(Var table, std::span<const std::uint32_t> ids, const std::string& field) {
  const Matrix& tv = table.value();
  const std::size_t dim = tv.cols();
  Matrix c(ids.size(), dim);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= tv.rows()) {
      fail(ErrorCode::lookup, "field '" + field + "': id " + std::to_string(ids[i]) +
                                  " out of range for cardinality " + std::to_string(tv.rows()));
    }
    std::copy(tv.row(ids[i]).begin(), tv.row(ids[i]).end(), c.row(i).begin());
  }
  Tape& t = *table.tape;
  return t.record(std::move(c), t.needs_grad(table.id),
                  [it = table.id, ids = std::vector<std::uint32_t>(ids.begin(), ids.end())](
                      Tape& tp, std::size_t self) {
                    const Matrix& g = tp.grad(self);
                    Matrix& gt = tp.grad(it);
                    for (std::size_t i = 0; i < ids.size(); ++i) {
                      auto dst = gt.row(ids[i]);
                      auto src = g.row(i);
                      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
                    }
                  },
                  0);
}

// Sum of all entries as a 1 x 1 matrix.
inline Var sum_all(Var x) {
  const Matrix& xv = x.value();
  double s = 0.0;
  for (double v : xv.data()) s += v;
  Tape& t = *x.tape;
  return t.record(Matrix(1, 1, s), t.needs_grad(x.id),
                  [ix = x.id](Tape& tp, std::size_t self) {
                    const double g = tp.grad(self)[0];
                    Matrix& gx = tp.grad(ix);
                    for (std::size_t k = 0; k < gx.size(); ++k) gx[k] += g;
                  },
                  xv.size());
}

// Mean binary cross-entropy on logits (B x 1), softplus-stabilized:
// max(z, 0) - z y + log(1 + exp(-|z|)).
inline Var bce_with_logits(Var logits, std::span<const double> labels) {
  const Matrix& z = logits.value();
  if (z.cols() != 1 || z.rows() != labels.size()) {
    fail(ErrorCode::shape, "bce_with_logits: logits " + z.shape() + " vs " +
                               std::to_string(labels.size()) + " labels");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double y = labels[i];
    if (y != 0.0 && y != 1.0) {
      fail(ErrorCode::contract, "bce_with_logits: label " + std::to_string(y) + " at row " +
                                    std::to_string(i) + " is not binary");
    }
    total += std::max(z[i], 0.0) - z[i] * y + std::log1p(std::exp(-std::abs(z[i])));
  }
  const double n = static_cast<double>(labels.size());
  Tape& t = *logits.tape;
  return t.record(Matrix(1, 1, total / n), t.needs_grad(logits.id),
                  [iz = logits.id, labels = std::vector<double>(labels.begin(), labels.end())](
                      Tape& tp, std::size_t self) {
                    const double g = tp.grad(self)[0];
                    const Matrix& z = tp.value(iz);
                    Matrix& gz = tp.grad(iz);
                    const double n = static_cast<double>(labels.size());
                    for (std::size_t i = 0; i < labels.size(); ++i)
                      gz[i] += g * (detail::stable_sigmoid(z[i]) - labels[i]) / n;
                  },
                  0);
}

}  // namespace mldcn
