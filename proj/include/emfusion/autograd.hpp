#pragma once

#include "encoding.hpp"
#include "error.hpp"
#include "rng.hpp"
#include "tensor.hpp"

#include <cblas.h>

#include <cmath>
#include <functional>
#include <initializer_list>
#include <limits>
#include <memory>
#include <vector>

//! Minimal reverse-mode differentiation over the operator set the denoiser
//! needs. Operations execute eagerly and, while the tape is recording,
//! append a backward closure; `Tape::backward` replays them in reverse.
namespace emfusion::ag {

struct Var
{
  std::size_t id{ std::numeric_limits<std::size_t>::max() };
};

class Tape
{
public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  explicit Tape(bool recording = true)
    : recording_(recording)
  {}

  bool recording() const { return recording_; }
  std::size_t size() const { return nodes_.size(); }

  Var leaf(Tensor value, bool requires_grad = true)
  {
    return push(std::move(value), requires_grad && recording_, nullptr);
  }
  Var constant(Tensor value) { return push(std::move(value), false, nullptr); }

  Var push(Tensor value, bool requires_grad, BackwardFn fn)
  {
    nodes_.push_back({ std::move(value), {}, requires_grad, requires_grad ? std::move(fn) : nullptr });
    return { nodes_.size() - 1 };
  }

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

  bool any_grad(std::initializer_list<Var> vars) const
  {
    if (!recording_) {
      return false;
    }
    for (Var v : vars) {
      if (nodes_.at(v.id).requires_grad) {
        return true;
      }
    }
    return false;
  }

  //! Gradient accumulator of a node, zero-allocated on first use.
  Tensor& grad_ref(std::size_t id)
  {
    Node& n = nodes_[id];
    if (n.grad.data.empty()) {
      n.grad = Tensor(n.value.shape);
    }
    return n.grad;
  }

  //! Gradient of the last backward pass with respect to `v`.
  const Tensor& grad(Var v)
  {
    if (!nodes_.at(v.id).requires_grad) {
      throw UsageError("gradient requested for a detached tensor");
    }
    return grad_ref(v.id);
  }

  void backward(Var loss)
  {
    if (!recording_) {
      throw UsageError("backward on a non-recording tape");
    }
    if (value(loss).numel() != 1) {
      throw UsageError("backward needs a scalar loss");
    }
    for (auto& n : nodes_) {
      if (!n.grad.data.empty()) {
        std::fill(n.grad.data.begin(), n.grad.data.end(), 0.0);
      }
    }
    if (!nodes_[loss.id].requires_grad) {
      return;
    }
    grad_ref(loss.id).data[0] = 1.0;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.backward && !n.grad.data.empty()) {
        n.backward(*this, i);
      }
    }
  }

private:
  struct Node
  {
    Tensor value;
    Tensor grad;
    bool requires_grad{ false };
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
  bool recording_;
};

//! Pins BLAS to one thread so GEMM reductions run in a fixed order.
inline void
use_single_thread_blas()
{
  openblas_set_num_threads(1);
}

namespace detail {

// C[m x n] += A[m x k] * B[k x n]
inline void
gemm_nn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c)
{
  if (m == 0 || n == 0 || k == 0) return;
  cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, static_cast<int>(m), static_cast<int>(n),
              static_cast<int>(k), 1.0, a, static_cast<int>(k), b, static_cast<int>(n), 1.0, c,
              static_cast<int>(n));
}

// C[m x k] += A[m x n] * B[k x n]^T
inline void
gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c)
{
  if (m == 0 || n == 0 || k == 0) return;
  cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, static_cast<int>(m), static_cast<int>(k),
              static_cast<int>(n), 1.0, a, static_cast<int>(n), b, static_cast<int>(n), 1.0, c,
              static_cast<int>(k));
}

// C[k x n] += A[m x k]^T * B[m x n]
inline void
gemm_tn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c)
{
  if (m == 0 || n == 0 || k == 0) return;
  cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, static_cast<int>(k), static_cast<int>(n),
              static_cast<int>(m), 1.0, a, static_cast<int>(k), b, static_cast<int>(n), 1.0, c,
              static_cast<int>(n));
}

inline void
require(bool ok, const char* op, const std::string& what)
{
  if (!ok) {
    throw ConfigError(std::string(op) + ": " + what);
  }
}

struct ConvGeometry
{
  std::size_t ci, t, n, kt, kn, stride, pt, pn, to;
  std::size_t rows() const { return ci * kt * kn; }
  std::size_t cols() const { return to * n; }
};

inline void
im2col(const ConvGeometry& g, const double* x, double* col)
{
  for (std::size_t c = 0; c < g.ci; ++c) {
    for (std::size_t a = 0; a < g.kt; ++a) {
      for (std::size_t b = 0; b < g.kn; ++b) {
        double* row = col + ((c * g.kt + a) * g.kn + b) * g.cols();
        for (std::size_t to = 0; to < g.to; ++to) {
          const auto ti = static_cast<std::ptrdiff_t>(to * g.stride + a) -
                          static_cast<std::ptrdiff_t>(g.pt);
          for (std::size_t n = 0; n < g.n; ++n) {
            const auto ni = static_cast<std::ptrdiff_t>(n + b) - static_cast<std::ptrdiff_t>(g.pn);
            const bool inside = ti >= 0 && ti < static_cast<std::ptrdiff_t>(g.t) && ni >= 0 &&
                                ni < static_cast<std::ptrdiff_t>(g.n);
            row[to * g.n + n] = inside ? x[(c * g.t + static_cast<std::size_t>(ti)) * g.n +
                                           static_cast<std::size_t>(ni)]
                                       : 0.0;
          }
        }
      }
    }
  }
}

inline void
col2im(const ConvGeometry& g, const double* col, double* dx)
{
  for (std::size_t c = 0; c < g.ci; ++c) {
    for (std::size_t a = 0; a < g.kt; ++a) {
      for (std::size_t b = 0; b < g.kn; ++b) {
        const double* row = col + ((c * g.kt + a) * g.kn + b) * g.cols();
        for (std::size_t to = 0; to < g.to; ++to) {
          const auto ti = static_cast<std::ptrdiff_t>(to * g.stride + a) -
                          static_cast<std::ptrdiff_t>(g.pt);
          if (ti < 0 || ti >= static_cast<std::ptrdiff_t>(g.t)) {
            continue;
          }
          for (std::size_t n = 0; n < g.n; ++n) {
            const auto ni = static_cast<std::ptrdiff_t>(n + b) - static_cast<std::ptrdiff_t>(g.pn);
            if (ni >= 0 && ni < static_cast<std::ptrdiff_t>(g.n)) {
              dx[(c * g.t + static_cast<std::size_t>(ti)) * g.n + static_cast<std::size_t>(ni)] +=
                row[to * g.n + n];
            }
          }
        }
      }
    }
  }
}

} // namespace detail

// ---------------------------------------------------------------------------
// Generic algebra
// ---------------------------------------------------------------------------

//! (m x k) * (k x n)
inline Var
matmul(Tape& tape, Var a, Var b)
{
  const Tensor& av = tape.value(a);
  const Tensor& bv = tape.value(b);
  detail::require(av.rank() == 2 && bv.rank() == 2 && av.dim(1) == bv.dim(0),
                  "matmul",
                  "shape mismatch " + shape_string(av.shape) + " x " + shape_string(bv.shape));
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor out({ m, n });
  detail::gemm_nn(m, k, n, av.ptr(), bv.ptr(), out.ptr());
  return tape.push(std::move(out), tape.any_grad({ a, b }), [a, b, m, k, n](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_ref(self);
    if (t.requires_grad(a)) {
      detail::gemm_nt(m, n, k, g.ptr(), t.value(b).ptr(), t.grad_ref(a.id).ptr());
    }
    if (t.requires_grad(b)) {
      detail::gemm_tn(m, k, n, t.value(a).ptr(), g.ptr(), t.grad_ref(b.id).ptr());
    }
  });
}

inline Var
add(Tape& tape, Var a, Var b)
{
  const Tensor& av = tape.value(a);
  const Tensor& bv = tape.value(b);
  detail::require(av.shape == bv.shape, "add", "shape mismatch");
  Tensor out = av;
  for (std::size_t i = 0; i < out.numel(); ++i) {
    out.data[i] += bv.data[i];
  }
  return tape.push(std::move(out), tape.any_grad({ a, b }), [a, b](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_ref(self);
    for (Var v : { a, b }) {
      if (t.requires_grad(v)) {
        Tensor& d = t.grad_ref(v.id);
        for (std::size_t i = 0; i < g.numel(); ++i) {
          d.data[i] += g.data[i];
        }
      }
    }
  });
}

//! Sum of squared entries, as a scalar.
inline Var
sum_squares(Tape& tape, Var x)
{
  const Tensor& xv = tape.value(x);
  double s = 0.0;
  for (double v : xv.data) {
    s += v * v;
  }
  return tape.push(Tensor({ 1 }, s), tape.any_grad({ x }), [x](Tape& t, std::size_t self) {
    const double g = t.grad_ref(self).data[0];
    const Tensor& xv = t.value(x);
    Tensor& d = t.grad_ref(x.id);
    for (std::size_t i = 0; i < xv.numel(); ++i) {
      d.data[i] += 2.0 * xv.data[i] * g;
    }
  });
}

//! Squared-error loss summed over all but the leading (batch) axis and
//! averaged over the batch.
inline Var
batch_squared_error(Tape& tape, Var pred, const Tensor& target)
{
  const Tensor& pv = tape.value(pred);
  detail::require(pv.shape == target.shape, "batch_squared_error", "shape mismatch");
  const double batch = static_cast<double>(pv.dim(0));
  double s = 0.0;
  for (std::size_t i = 0; i < pv.numel(); ++i) {
    const double d = pv.data[i] - target.data[i];
    s += d * d;
  }
  return tape.push(Tensor({ 1 }, s / batch), tape.any_grad({ pred }),
                   [pred, target, batch](Tape& t, std::size_t self) {
                     const double g = t.grad_ref(self).data[0];
                     const Tensor& pv = t.value(pred);
                     Tensor& d = t.grad_ref(pred.id);
                     for (std::size_t i = 0; i < pv.numel(); ++i) {
                       d.data[i] += 2.0 * (pv.data[i] - target.data[i]) / batch * g;
                     }
                   });
}

// ---------------------------------------------------------------------------
// Feature-map operators; feature maps are (batch, channels, time, width)
// ---------------------------------------------------------------------------

//! 2-D convolution with kernel (Co, Ci, KT, KN), "same" padding, and a
//! stride along the time axis only.
inline Var
conv2d(Tape& tape, Var x, Var w, Var bias, std::size_t stride = 1)
{
  const Tensor& xv = tape.value(x);
  const Tensor& wv = tape.value(w);
  detail::require(xv.rank() == 4 && wv.rank() == 4 && wv.dim(1) == xv.dim(1),
                  "conv2d",
                  "input " + shape_string(xv.shape) + " vs kernel " + shape_string(wv.shape));
  detail::require(tape.value(bias).numel() == wv.dim(0), "conv2d", "bias size");
  const std::size_t batch = xv.dim(0), co = wv.dim(0);
  detail::ConvGeometry g{ xv.dim(1), xv.dim(2), xv.dim(3), wv.dim(2), wv.dim(3), stride,
                          wv.dim(2) / 2, wv.dim(3) / 2, 0 };
  g.to = (g.t + 2 * g.pt - g.kt) / stride + 1;
  Tensor out({ batch, co, g.to, g.n });
  std::vector<double> col(g.rows() * g.cols());
  const double* bptr = tape.value(bias).ptr();
  for (std::size_t b = 0; b < batch; ++b) {
    detail::im2col(g, xv.ptr() + b * g.ci * g.t * g.n, col.data());
    double* ob = out.ptr() + b * co * g.cols();
    for (std::size_t c = 0; c < co; ++c) {
      std::fill(ob + c * g.cols(), ob + (c + 1) * g.cols(), bptr[c]);
    }
    detail::gemm_nn(co, g.rows(), g.cols(), wv.ptr(), col.data(), ob);
  }
  return tape.push(std::move(out), tape.any_grad({ x, w, bias }),
                   [x, w, bias, g, batch, co](Tape& t, std::size_t self) {
                     const Tensor& gout = t.grad_ref(self);
                     const Tensor& xv = t.value(x);
                     const Tensor& wv = t.value(w);
                     std::vector<double> col(g.rows() * g.cols());
                     const bool need_x = t.requires_grad(x);
                     const bool need_w = t.requires_grad(w);
                     const bool need_b = t.requires_grad(bias);
                     for (std::size_t b = 0; b < batch; ++b) {
                       const double* gb = gout.ptr() + b * co * g.cols();
                       if (need_b) {
                         double* db = t.grad_ref(bias.id).ptr();
                         for (std::size_t c = 0; c < co; ++c) {
                           double s = 0.0;
                           for (std::size_t p = 0; p < g.cols(); ++p) {
                             s += gb[c * g.cols() + p];
                           }
                           db[c] += s;
                         }
                       }
                       if (need_w) {
                         detail::im2col(g, xv.ptr() + b * g.ci * g.t * g.n, col.data());
                         detail::gemm_nt(co, g.cols(), g.rows(), gb, col.data(), t.grad_ref(w.id).ptr());
                       }
                       if (need_x) {
                         std::fill(col.begin(), col.end(), 0.0);
                         detail::gemm_tn(co, g.rows(), g.cols(), wv.ptr(), gb, col.data());
                         detail::col2im(g, col.data(), t.grad_ref(x.id).ptr() + b * g.ci * g.t * g.n);
                       }
                     }
                   });
}

inline Var
group_norm(Tape& tape, Var x, Var gamma, Var beta, std::size_t groups, double eps = 1e-5)
{
  const Tensor& xv = tape.value(x);
  detail::require(xv.rank() == 4, "group_norm", "expects a 4-d feature map");
  const std::size_t batch = xv.dim(0), ch = xv.dim(1), spatial = xv.dim(2) * xv.dim(3);
  detail::require(groups > 0 && ch % groups == 0, "group_norm", "groups must divide channels");
  detail::require(tape.value(gamma).numel() == ch && tape.value(beta).numel() == ch,
                  "group_norm",
                  "affine size");
  const std::size_t cg = ch / groups, m = cg * spatial;
  auto xhat = std::make_shared<std::vector<double>>(xv.numel());
  auto inv_std = std::make_shared<std::vector<double>>(batch * groups);
  Tensor out(xv.shape);
  const double* gp = tape.value(gamma).ptr();
  const double* bp = tape.value(beta).ptr();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t g = 0; g < groups; ++g) {
      const std::size_t base = (b * ch + g * cg) * spatial;
      double mean = 0.0;
      for (std::size_t i = 0; i < m; ++i) {
        mean += xv.data[base + i];
      }
      mean /= static_cast<double>(m);
      double var = 0.0;
      for (std::size_t i = 0; i < m; ++i) {
        const double d = xv.data[base + i] - mean;
        var += d * d;
      }
      var /= static_cast<double>(m);
      const double is = 1.0 / std::sqrt(var + eps);
      (*inv_std)[b * groups + g] = is;
      for (std::size_t c = 0; c < cg; ++c) {
        const std::size_t cc = g * cg + c;
        for (std::size_t s = 0; s < spatial; ++s) {
          const std::size_t idx = base + c * spatial + s;
          const double h = (xv.data[idx] - mean) * is;
          (*xhat)[idx] = h;
          out.data[idx] = h * gp[cc] + bp[cc];
        }
      }
    }
  }
  return tape.push(
    std::move(out), tape.any_grad({ x, gamma, beta }),
    [x, gamma, beta, xhat, inv_std, batch, ch, spatial, groups, cg, m](Tape& t, std::size_t self) {
      const Tensor& g = t.grad_ref(self);
      const double* gp = t.value(gamma).ptr();
      if (t.requires_grad(gamma) || t.requires_grad(beta)) {
        double* dg = t.requires_grad(gamma) ? t.grad_ref(gamma.id).ptr() : nullptr;
        double* db = t.requires_grad(beta) ? t.grad_ref(beta.id).ptr() : nullptr;
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t c = 0; c < ch; ++c) {
            double sg = 0.0, sb = 0.0;
            const std::size_t base = (b * ch + c) * spatial;
            for (std::size_t s = 0; s < spatial; ++s) {
              sg += g.data[base + s] * (*xhat)[base + s];
              sb += g.data[base + s];
            }
            if (dg) dg[c] += sg;
            if (db) db[c] += sb;
          }
        }
      }
      if (!t.requires_grad(x)) {
        return;
      }
      Tensor& dx = t.grad_ref(x.id);
      std::vector<double> dh(m);
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t gi = 0; gi < groups; ++gi) {
          const std::size_t base = (b * ch + gi * cg) * spatial;
          double sum_dh = 0.0, sum_dh_h = 0.0;
          for (std::size_t c = 0; c < cg; ++c) {
            const double gam = gp[gi * cg + c];
            for (std::size_t s = 0; s < spatial; ++s) {
              const std::size_t i = c * spatial + s;
              dh[i] = g.data[base + i] * gam;
              sum_dh += dh[i];
              sum_dh_h += dh[i] * (*xhat)[base + i];
            }
          }
          const double is = (*inv_std)[b * groups + gi];
          const double inv_m = 1.0 / static_cast<double>(m);
          for (std::size_t i = 0; i < m; ++i) {
            dx.data[base + i] += is * (dh[i] - inv_m * sum_dh - (*xhat)[base + i] * inv_m * sum_dh_h);
          }
        }
      }
    });
}

inline double
sigmoid(double v)
{
  return 1.0 / (1.0 + std::exp(-v));
}

inline Var
silu(Tape& tape, Var x)
{
  Tensor out = tape.value(x);
  for (double& v : out.data) {
    v = v * sigmoid(v);
  }
  return tape.push(std::move(out), tape.any_grad({ x }), [x](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_ref(self);
    const Tensor& xv = t.value(x);
    Tensor& d = t.grad_ref(x.id);
    for (std::size_t i = 0; i < xv.numel(); ++i) {
      const double s = sigmoid(xv.data[i]);
      d.data[i] += g.data[i] * s * (1.0 + xv.data[i] * (1.0 - s));
    }
  });
}

//! (B, D) * (D, O) + (O)
inline Var
linear(Tape& tape, Var x, Var w, Var bias)
{
  const Tensor& xv = tape.value(x);
  const Tensor& wv = tape.value(w);
  detail::require(xv.rank() == 2 && wv.rank() == 2 && xv.dim(1) == wv.dim(0), "linear",
                  "shape mismatch " + shape_string(xv.shape) + " x " + shape_string(wv.shape));
  const std::size_t b = xv.dim(0), d = xv.dim(1), o = wv.dim(1);
  detail::require(tape.value(bias).numel() == o, "linear", "bias size");
  Tensor out({ b, o });
  for (std::size_t i = 0; i < b; ++i) {
    std::copy_n(tape.value(bias).ptr(), o, out.ptr() + i * o);
  }
  detail::gemm_nn(b, d, o, xv.ptr(), wv.ptr(), out.ptr());
  return tape.push(std::move(out), tape.any_grad({ x, w, bias }),
                   [x, w, bias, b, d, o](Tape& t, std::size_t self) {
                     const Tensor& g = t.grad_ref(self);
                     if (t.requires_grad(x)) {
                       detail::gemm_nt(b, o, d, g.ptr(), t.value(w).ptr(), t.grad_ref(x.id).ptr());
                     }
                     if (t.requires_grad(w)) {
                       detail::gemm_tn(b, d, o, t.value(x).ptr(), g.ptr(), t.grad_ref(w.id).ptr());
                     }
                     if (t.requires_grad(bias)) {
                       double* db = t.grad_ref(bias.id).ptr();
                       for (std::size_t i = 0; i < b; ++i) {
                         for (std::size_t j = 0; j < o; ++j) {
                           db[j] += g.data[i * o + j];
                         }
                       }
                     }
                   });
}

//! Adds a per-(batch, channel) vector broadcast over time and width.
inline Var
add_channel_vector(Tape& tape, Var x, Var v)
{
  const Tensor& xv = tape.value(x);
  const Tensor& vv = tape.value(v);
  detail::require(xv.rank() == 4 && vv.rank() == 2 && vv.dim(0) == xv.dim(0) &&
                    vv.dim(1) == xv.dim(1),
                  "add_channel_vector",
                  "shape mismatch");
  const std::size_t bc = xv.dim(0) * xv.dim(1), spatial = xv.dim(2) * xv.dim(3);
  Tensor out = xv;
  for (std::size_t i = 0; i < bc; ++i) {
    for (std::size_t s = 0; s < spatial; ++s) {
      out.data[i * spatial + s] += vv.data[i];
    }
  }
  return tape.push(std::move(out), tape.any_grad({ x, v }), [x, v, bc, spatial](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_ref(self);
    if (t.requires_grad(x)) {
      Tensor& dx = t.grad_ref(x.id);
      for (std::size_t i = 0; i < g.numel(); ++i) {
        dx.data[i] += g.data[i];
      }
    }
    if (t.requires_grad(v)) {
      Tensor& dv = t.grad_ref(v.id);
      for (std::size_t i = 0; i < bc; ++i) {
        double s = 0.0;
        for (std::size_t k = 0; k < spatial; ++k) {
          s += g.data[i * spatial + k];
        }
        dv.data[i] += s;
      }
    }
  });
}

//! Inverted dropout. Rate 0 is the identity; rate 1 zeroes the input.
inline Var
dropout(Tape& tape, Var x, double rate, CounterRng& rng)
{
  if (rate <= 0.0) {
    return x;
  }
  const Tensor& xv = tape.value(x);
  auto keep = std::make_shared<std::vector<double>>(xv.numel(), 0.0);
  if (rate < 1.0) {
    const double scale = 1.0 / (1.0 - rate);
    for (double& k : *keep) {
      k = rng.uniform() >= rate ? scale : 0.0;
    }
  }
  Tensor out = xv;
  for (std::size_t i = 0; i < out.numel(); ++i) {
    out.data[i] *= (*keep)[i];
  }
  return tape.push(std::move(out), tape.any_grad({ x }), [x, keep](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_ref(self);
    Tensor& d = t.grad_ref(x.id);
    for (std::size_t i = 0; i < g.numel(); ++i) {
      d.data[i] += g.data[i] * (*keep)[i];
    }
  });
}

//! Nearest-neighbour upsampling by two along time.
inline Var
upsample_time(Tape& tape, Var x)
{
  const Tensor& xv = tape.value(x);
  const std::size_t bc = xv.dim(0) * xv.dim(1), tl = xv.dim(2), n = xv.dim(3);
  Tensor out({ xv.dim(0), xv.dim(1), 2 * tl, n });
  for (std::size_t i = 0; i < bc; ++i) {
    for (std::size_t s = 0; s < tl; ++s) {
      for (std::size_t k = 0; k < n; ++k) {
        const double v = xv.data[(i * tl + s) * n + k];
        out.data[(i * 2 * tl + 2 * s) * n + k] = v;
        out.data[(i * 2 * tl + 2 * s + 1) * n + k] = v;
      }
    }
  }
  return tape.push(std::move(out), tape.any_grad({ x }), [x, bc, tl, n](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_ref(self);
    Tensor& d = t.grad_ref(x.id);
    for (std::size_t i = 0; i < bc; ++i) {
      for (std::size_t s = 0; s < tl; ++s) {
        for (std::size_t k = 0; k < n; ++k) {
          d.data[(i * tl + s) * n + k] +=
            g.data[(i * 2 * tl + 2 * s) * n + k] + g.data[(i * 2 * tl + 2 * s + 1) * n + k];
        }
      }
    }
  });
}

inline Var
concat_channels(Tape& tape, Var a, Var b)
{
  const Tensor& av = tape.value(a);
  const Tensor& bv = tape.value(b);
  detail::require(av.rank() == 4 && bv.rank() == 4 && av.dim(0) == bv.dim(0) &&
                    av.dim(2) == bv.dim(2) && av.dim(3) == bv.dim(3),
                  "concat_channels",
                  "shape mismatch " + shape_string(av.shape) + " vs " + shape_string(bv.shape));
  const std::size_t batch = av.dim(0), ca = av.dim(1), cb = bv.dim(1);
  const std::size_t spatial = av.dim(2) * av.dim(3);
  Tensor out({ batch, ca + cb, av.dim(2), av.dim(3) });
  for (std::size_t i = 0; i < batch; ++i) {
    std::copy_n(av.ptr() + i * ca * spatial, ca * spatial, out.ptr() + i * (ca + cb) * spatial);
    std::copy_n(bv.ptr() + i * cb * spatial, cb * spatial,
                out.ptr() + (i * (ca + cb) + ca) * spatial);
  }
  return tape.push(std::move(out), tape.any_grad({ a, b }),
                   [a, b, batch, ca, cb, spatial](Tape& t, std::size_t self) {
                     const Tensor& g = t.grad_ref(self);
                     for (std::size_t i = 0; i < batch; ++i) {
                       const double* gi = g.ptr() + i * (ca + cb) * spatial;
                       if (t.requires_grad(a)) {
                         double* d = t.grad_ref(a.id).ptr() + i * ca * spatial;
                         for (std::size_t k = 0; k < ca * spatial; ++k) d[k] += gi[k];
                       }
                       if (t.requires_grad(b)) {
                         double* d = t.grad_ref(b.id).ptr() + i * cb * spatial;
                         for (std::size_t k = 0; k < cb * spatial; ++k) d[k] += gi[ca * spatial + k];
                       }
                     }
                   });
}

//! Keeps the first `length` time steps.
inline Var
crop_time(Tape& tape, Var x, std::size_t length)
{
  const Tensor& xv = tape.value(x);
  detail::require(xv.rank() == 4 && length <= xv.dim(2), "crop_time", "bad length");
  if (length == xv.dim(2)) {
    return x;
  }
  const std::size_t bc = xv.dim(0) * xv.dim(1), tl = xv.dim(2), n = xv.dim(3);
  Tensor out({ xv.dim(0), xv.dim(1), length, n });
  for (std::size_t i = 0; i < bc; ++i) {
    std::copy_n(xv.ptr() + i * tl * n, length * n, out.ptr() + i * length * n);
  }
  return tape.push(std::move(out), tape.any_grad({ x }), [x, bc, tl, n, length](Tape& t, std::size_t self) {
    const Tensor& g = t.grad_ref(self);
    Tensor& d = t.grad_ref(x.id);
    for (std::size_t i = 0; i < bc; ++i) {
      for (std::size_t k = 0; k < length * n; ++k) {
        d.data[i * tl * n + k] += g.data[i * length * n + k];
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Cross-attention
// ---------------------------------------------------------------------------

//! Collects the attention matrices of every cross-attention call.
struct AttentionTrace
{
  //! One (queries x keys) row-major matrix per (call, batch item, head).
  std::vector<std::vector<double>> matrices;
  std::vector<std::size_t> keys;
};

//! Multi-head cross-attention from a feature map onto a condition sequence.
//!
//! Every (time, width) cell of `x` is a query token of dimension C and
//! receives the positional code of its time index; each condition row is a
//! key/value token of dimension d_f with its own positional code. Returns
//! the projected attention output in the layout of `x`; the caller adds it
//! to the residual path.
inline Var
cross_attention(Tape& tape,
                Var x,
                const Tensor& cond,
                Var wq,
                Var wk,
                Var wv,
                Var wo,
                Var bo,
                std::size_t heads,
                AttentionTrace* trace = nullptr)
{
  const Tensor& xv = tape.value(x);
  detail::require(xv.rank() == 4 && cond.rank() == 3 && cond.dim(0) == xv.dim(0), "cross_attention",
                  "feature map " + shape_string(xv.shape) + " vs condition " + shape_string(cond.shape));
  const std::size_t batch = xv.dim(0), ch = xv.dim(1), tl = xv.dim(2), nw = xv.dim(3);
  const std::size_t tokens = tl * nw, keys = cond.dim(1), df = cond.dim(2);
  detail::require(heads > 0 && ch % heads == 0, "cross_attention", "heads must divide width");
  detail::require(tape.value(wq).shape == Shape{ ch, ch } && tape.value(wk).shape == Shape{ df, ch } &&
                    tape.value(wv).shape == Shape{ df, ch } && tape.value(wo).shape == Shape{ ch, ch } &&
                    tape.value(bo).numel() == ch,
                  "cross_attention",
                  "projection shapes do not match width " + std::to_string(ch) +
                    " and condition width " + std::to_string(df));
  const std::size_t e = ch / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(e));
  const auto pe_h = positional_table(tl, ch);
  const auto pe_c = positional_table(keys, df);

  // per batch item: u = x + PE (tokens x C), cp = cond + PE (keys x d_f),
  // per-head q/k/v gathered as (heads, rows, e), attention (heads, tokens, keys)
  struct Cache
  {
    std::vector<double> u, cp, q, k, v, a, o;
  };
  auto gather = [&](const std::vector<double>& full, std::size_t rows, std::vector<double>& out) {
    out.resize(heads * rows * e);
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t r = 0; r < rows; ++r) {
        std::copy_n(full.data() + r * ch + h * e, e, out.data() + (h * rows + r) * e);
      }
    }
  };
  auto cache = std::make_shared<std::vector<Cache>>(batch);
  Tensor out(xv.shape);
  std::vector<double> full_q, full_k, full_v, kt, y(tokens * ch);
  for (std::size_t b = 0; b < batch; ++b) {
    Cache& cc = (*cache)[b];
    cc.u.resize(tokens * ch);
    for (std::size_t c = 0; c < ch; ++c) {
      for (std::size_t s = 0; s < tl; ++s) {
        for (std::size_t w = 0; w < nw; ++w) {
          const std::size_t p = s * nw + w;
          cc.u[p * ch + c] = xv.data[((b * ch + c) * tl + s) * nw + w] + pe_h[s * ch + c];
        }
      }
    }
    cc.cp.resize(keys * df);
    for (std::size_t r = 0; r < keys * df; ++r) {
      cc.cp[r] = cond.data[b * keys * df + r] + pe_c[r];
    }
    full_q.assign(tokens * ch, 0.0);
    full_k.assign(keys * ch, 0.0);
    full_v.assign(keys * ch, 0.0);
    detail::gemm_nn(tokens, ch, ch, cc.u.data(), tape.value(wq).ptr(), full_q.data());
    detail::gemm_nn(keys, df, ch, cc.cp.data(), tape.value(wk).ptr(), full_k.data());
    detail::gemm_nn(keys, df, ch, cc.cp.data(), tape.value(wv).ptr(), full_v.data());
    gather(full_q, tokens, cc.q);
    gather(full_k, keys, cc.k);
    gather(full_v, keys, cc.v);
    cc.a.assign(heads * tokens * keys, 0.0);
    cc.o.assign(tokens * ch, 0.0);
    std::vector<double> oh(tokens * e);
    for (std::size_t h = 0; h < heads; ++h) {
      double* a = cc.a.data() + h * tokens * keys;
      detail::gemm_nt(tokens, e, keys, cc.q.data() + h * tokens * e, cc.k.data() + h * keys * e, a);
      for (std::size_t p = 0; p < tokens; ++p) {
        double* ap = a + p * keys;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t r = 0; r < keys; ++r) {
          ap[r] *= scale;
          mx = std::max(mx, ap[r]);
        }
        double z = 0.0;
        for (std::size_t r = 0; r < keys; ++r) {
          ap[r] = std::exp(ap[r] - mx);
          z += ap[r];
        }
        const double iz = 1.0 / z;
        for (std::size_t r = 0; r < keys; ++r) {
          ap[r] *= iz;
        }
      }
      std::fill(oh.begin(), oh.end(), 0.0);
      detail::gemm_nn(tokens, keys, e, a, cc.v.data() + h * keys * e, oh.data());
      for (std::size_t p = 0; p < tokens; ++p) {
        std::copy_n(oh.data() + p * e, e, cc.o.data() + p * ch + h * e);
      }
      if (trace) {
        trace->matrices.emplace_back(a, a + tokens * keys);
        trace->keys.push_back(keys);
      }
    }
    for (std::size_t p = 0; p < tokens; ++p) {
      std::copy_n(tape.value(bo).ptr(), ch, y.data() + p * ch);
    }
    detail::gemm_nn(tokens, ch, ch, cc.o.data(), tape.value(wo).ptr(), y.data());
    for (std::size_t c = 0; c < ch; ++c) {
      for (std::size_t p = 0; p < tokens; ++p) {
        out.data[(b * ch + c) * tokens + p] = y[p * ch + c];
      }
    }
  }
  const bool needs = tape.any_grad({ x, wq, wk, wv, wo, bo });
  if (!needs) {
    cache.reset();
  }
  return tape.push(
    std::move(out), needs,
    [=](Tape& t, std::size_t self) {
      const Tensor& g = t.grad_ref(self);
      std::vector<double> dy(tokens * ch), dO(tokens * ch), dq(tokens * ch), dk(keys * ch),
        dv(keys * ch), du(tokens * ch), doh(tokens * e), ds(tokens * keys), dqh(tokens * e),
        dkh(keys * e), dvh(keys * e);
      for (std::size_t b = 0; b < batch; ++b) {
        const Cache& cc = (*cache)[b];
        for (std::size_t c = 0; c < ch; ++c) {
          for (std::size_t p = 0; p < tokens; ++p) {
            dy[p * ch + c] = g.data[(b * ch + c) * tokens + p];
          }
        }
        if (t.requires_grad(wo)) {
          detail::gemm_tn(tokens, ch, ch, cc.o.data(), dy.data(), t.grad_ref(wo.id).ptr());
        }
        if (t.requires_grad(bo)) {
          double* db = t.grad_ref(bo.id).ptr();
          for (std::size_t p = 0; p < tokens; ++p) {
            for (std::size_t c = 0; c < ch; ++c) {
              db[c] += dy[p * ch + c];
            }
          }
        }
        std::fill(dO.begin(), dO.end(), 0.0);
        detail::gemm_nt(tokens, ch, ch, dy.data(), t.value(wo).ptr(), dO.data());
        for (std::size_t h = 0; h < heads; ++h) {
          const double* a = cc.a.data() + h * tokens * keys;
          const double* qh = cc.q.data() + h * tokens * e;
          const double* kh = cc.k.data() + h * keys * e;
          const double* vh = cc.v.data() + h * keys * e;
          for (std::size_t p = 0; p < tokens; ++p) {
            std::copy_n(dO.data() + p * ch + h * e, e, doh.data() + p * e);
          }
          std::fill(ds.begin(), ds.end(), 0.0);
          detail::gemm_nt(tokens, e, keys, doh.data(), vh, ds.data());
          std::fill(dvh.begin(), dvh.end(), 0.0);
          detail::gemm_tn(tokens, keys, e, a, doh.data(), dvh.data());
          for (std::size_t p = 0; p < tokens; ++p) {
            const double* ap = a + p * keys;
            double* sp = ds.data() + p * keys;
            double dot = 0.0;
            for (std::size_t r = 0; r < keys; ++r) dot += sp[r] * ap[r];
            for (std::size_t r = 0; r < keys; ++r) sp[r] = ap[r] * (sp[r] - dot) * scale;
          }
          std::fill(dqh.begin(), dqh.end(), 0.0);
          detail::gemm_nn(tokens, keys, e, ds.data(), kh, dqh.data());
          std::fill(dkh.begin(), dkh.end(), 0.0);
          detail::gemm_tn(tokens, keys, e, ds.data(), qh, dkh.data());
          for (std::size_t p = 0; p < tokens; ++p) {
            std::copy_n(dqh.data() + p * e, e, dq.data() + p * ch + h * e);
          }
          for (std::size_t r = 0; r < keys; ++r) {
            std::copy_n(dkh.data() + r * e, e, dk.data() + r * ch + h * e);
            std::copy_n(dvh.data() + r * e, e, dv.data() + r * ch + h * e);
          }
        }
        if (t.requires_grad(wq)) {
          detail::gemm_tn(tokens, ch, ch, cc.u.data(), dq.data(), t.grad_ref(wq.id).ptr());
        }
        if (t.requires_grad(wk)) {
          detail::gemm_tn(keys, df, ch, cc.cp.data(), dk.data(), t.grad_ref(wk.id).ptr());
        }
        if (t.requires_grad(wv)) {
          detail::gemm_tn(keys, df, ch, cc.cp.data(), dv.data(), t.grad_ref(wv.id).ptr());
        }
        if (t.requires_grad(x)) {
          std::fill(du.begin(), du.end(), 0.0);
          detail::gemm_nt(tokens, ch, ch, dq.data(), t.value(wq).ptr(), du.data());
          double* dx = t.grad_ref(x.id).ptr();
          for (std::size_t c = 0; c < ch; ++c) {
            for (std::size_t p = 0; p < tokens; ++p) {
              dx[(b * ch + c) * tokens + p] += du[p * ch + c];
            }
          }
        }
      }
    });
}

} // namespace emfusion::ag
