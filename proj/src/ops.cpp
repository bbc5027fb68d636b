#include "fmla/ops.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "fmla/kernels.hpp"

namespace fmla {

namespace {

using kern::count_macs;

Tensor make_op(Dims dims, std::vector<double> data,
               std::vector<Tensor> parents, std::function<void(Node&)> bw,
               const char* opname) {
  auto n = std::make_shared<Node>();
  n->dims = std::move(dims);
  n->data = std::move(data);
  n->is_leaf = false;
#ifndef NDEBUG
  for (double v : n->data)
    if (!std::isfinite(v))
      throw NumericError(std::string(opname) + " produced a non-finite value");
#else
  (void)opname;
#endif
  bool rg = grad_enabled();
  if (rg) {
    bool any = false;
    for (const auto& p : parents)
      if (p.requires_grad()) any = true;
    rg = any;
  }
  n->requires_grad = rg;
  if (rg) {
    n->parents.reserve(parents.size());
    for (auto& p : parents) n->parents.push_back(p.node());
    n->backward = std::move(bw);
    Tape::current()->record(n);
  }
  return Tensor(std::move(n));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.dims() != b.dims())
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         dims_str(a.dims()) + " vs " + dims_str(b.dims()));
}

void require_rank2(const Tensor& x, const char* op) {
  if (x.rank() != 2)
    throw DimensionError(std::string(op) + ": expected rank-2 tensor, got " +
                         dims_str(x.dims()));
}

void require_vector(const Tensor& v, int len, const char* op) {
  if (v.rank() != 1 || v.dim(0) != len)
    throw DimensionError(std::string(op) + ": expected vector [" +
                         std::to_string(len) + "], got " + dims_str(v.dims()));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.raw().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.raw()[i] + b.raw()[i];
  return make_op(
      a.dims(), std::move(out), {a, b},
      [](Node& self) {
        for (int s = 0; s < 2; ++s) {
          Node* p = self.parents[s].get();
          if (!p->requires_grad) continue;
          p->ensure_grad();
          for (std::size_t i = 0; i < self.grad.size(); ++i)
            p->grad[i] += self.grad[i];
        }
      },
      "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.raw().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.raw()[i] - b.raw()[i];
  return make_op(
      a.dims(), std::move(out), {a, b},
      [](Node& self) {
        Node* pa = self.parents[0].get();
        Node* pb = self.parents[1].get();
        if (pa->requires_grad) {
          pa->ensure_grad();
          for (std::size_t i = 0; i < self.grad.size(); ++i)
            pa->grad[i] += self.grad[i];
        }
        if (pb->requires_grad) {
          pb->ensure_grad();
          for (std::size_t i = 0; i < self.grad.size(); ++i)
            pb->grad[i] -= self.grad[i];
        }
      },
      "sub");
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  count_macs(a.numel());
  std::vector<double> out(a.raw().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.raw()[i] * b.raw()[i];
  return make_op(
      a.dims(), std::move(out), {a, b},
      [](Node& self) {
        Node* pa = self.parents[0].get();
        Node* pb = self.parents[1].get();
        if (pa->requires_grad) {
          pa->ensure_grad();
          for (std::size_t i = 0; i < self.grad.size(); ++i)
            pa->grad[i] += self.grad[i] * pb->data[i];
        }
        if (pb->requires_grad) {
          pb->ensure_grad();
          for (std::size_t i = 0; i < self.grad.size(); ++i)
            pb->grad[i] += self.grad[i] * pa->data[i];
        }
      },
      "mul");
}

Tensor scale(const Tensor& x, double s) {
  count_macs(x.numel());
  std::vector<double> out(x.raw().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.raw()[i] * s;
  return make_op(
      x.dims(), std::move(out), {x},
      [s](Node& self) {
        Node* p = self.parents[0].get();
        if (!p->requires_grad) return;
        p->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
          p->grad[i] += self.grad[i] * s;
      },
      "scale");
}

Tensor scale_columns(const Tensor& x, const Tensor& v) {
  require_rank2(x, "scale_columns");
  require_vector(v, x.dim(1), "scale_columns");
  const int m = x.dim(0), k = x.dim(1);
  count_macs(x.numel());
  std::vector<double> out(x.raw().size());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < k; ++j)
      out[static_cast<std::size_t>(i) * k + j] =
          x(i, j) * v.raw()[static_cast<std::size_t>(j)];
  return make_op(
      x.dims(), std::move(out), {x, v},
      [m, k](Node& self) {
        Node* px = self.parents[0].get();
        Node* pv = self.parents[1].get();
        if (px->requires_grad) {
          px->ensure_grad();
          for (int i = 0; i < m; ++i)
            for (int j = 0; j < k; ++j) {
              const std::size_t idx = static_cast<std::size_t>(i) * k + j;
              px->grad[idx] += self.grad[idx] * pv->data[j];
            }
        }
        if (pv->requires_grad) {
          pv->ensure_grad();
          for (int i = 0; i < m; ++i)
            for (int j = 0; j < k; ++j) {
              const std::size_t idx = static_cast<std::size_t>(i) * k + j;
              pv->grad[j] += self.grad[idx] * px->data[idx];
            }
        }
      },
      "scale_columns");
}

Tensor shift_columns(const Tensor& x, const Tensor& v) {
  require_rank2(x, "shift_columns");
  require_vector(v, x.dim(1), "shift_columns");
  const int m = x.dim(0), k = x.dim(1);
  std::vector<double> out(x.raw().size());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < k; ++j)
      out[static_cast<std::size_t>(i) * k + j] = x(i, j) + v.raw()[j];
  return make_op(
      x.dims(), std::move(out), {x, v},
      [m, k](Node& self) {
        Node* px = self.parents[0].get();
        Node* pv = self.parents[1].get();
        if (px->requires_grad) {
          px->ensure_grad();
          for (std::size_t i = 0; i < self.grad.size(); ++i)
            px->grad[i] += self.grad[i];
        }
        if (pv->requires_grad) {
          pv->ensure_grad();
          for (int i = 0; i < m; ++i)
            for (int j = 0; j < k; ++j)
              pv->grad[j] += self.grad[static_cast<std::size_t>(i) * k + j];
        }
      },
      "shift_columns");
}

Tensor scale_rows(const Tensor& x, const Tensor& v) {
  require_rank2(x, "scale_rows");
  require_vector(v, x.dim(0), "scale_rows");
  const int m = x.dim(0), k = x.dim(1);
  count_macs(x.numel());
  std::vector<double> out(x.raw().size());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < k; ++j)
      out[static_cast<std::size_t>(i) * k + j] = x(i, j) * v.raw()[i];
  return make_op(
      x.dims(), std::move(out), {x, v},
      [m, k](Node& self) {
        Node* px = self.parents[0].get();
        Node* pv = self.parents[1].get();
        if (px->requires_grad) {
          px->ensure_grad();
          for (int i = 0; i < m; ++i)
            for (int j = 0; j < k; ++j) {
              const std::size_t idx = static_cast<std::size_t>(i) * k + j;
              px->grad[idx] += self.grad[idx] * pv->data[i];
            }
        }
        if (pv->requires_grad) {
          pv->ensure_grad();
          for (int i = 0; i < m; ++i) {
            double acc = 0.0;
            for (int j = 0; j < k; ++j) {
              const std::size_t idx = static_cast<std::size_t>(i) * k + j;
              acc += self.grad[idx] * px->data[idx];
            }
            pv->grad[i] += acc;
          }
        }
      },
      "scale_rows");
}

Tensor shift_rows(const Tensor& x, const Tensor& v) {
  require_rank2(x, "shift_rows");
  require_vector(v, x.dim(0), "shift_rows");
  const int m = x.dim(0), k = x.dim(1);
  std::vector<double> out(x.raw().size());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < k; ++j)
      out[static_cast<std::size_t>(i) * k + j] = x(i, j) + v.raw()[i];
  return make_op(
      x.dims(), std::move(out), {x, v},
      [m, k](Node& self) {
        Node* px = self.parents[0].get();
        Node* pv = self.parents[1].get();
        if (px->requires_grad) {
          px->ensure_grad();
          for (std::size_t i = 0; i < self.grad.size(); ++i)
            px->grad[i] += self.grad[i];
        }
        if (pv->requires_grad) {
          pv->ensure_grad();
          for (int i = 0; i < m; ++i) {
            double acc = 0.0;
            for (int j = 0; j < k; ++j)
              acc += self.grad[static_cast<std::size_t>(i) * k + j];
            pv->grad[i] += acc;
          }
        }
      },
      "shift_rows");
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  if (a.dim(1) != b.dim(0))
    throw DimensionError("matmul: inner extents differ, " + dims_str(a.dims()) +
                         " vs " + dims_str(b.dims()));
  const int m = a.dim(0), k = a.dim(1), p = b.dim(1);
  std::vector<double> out(static_cast<std::size_t>(m) * p);
  kern::matmul(a.raw().data(), b.raw().data(), out.data(), m, k, p);
  return make_op(
      {m, p}, std::move(out), {a, b},
      [m, k, p](Node& self) {
        Node* pa = self.parents[0].get();
        Node* pb = self.parents[1].get();
        if (pa->requires_grad) {
          pa->ensure_grad();
          kern::matmul_nt(self.grad.data(), pb->data.data(), pa->grad.data(), m,
                          p, k, /*accumulate=*/true);
        }
        if (pb->requires_grad) {
          pb->ensure_grad();
          kern::matmul_tn(pa->data.data(), self.grad.data(), pb->grad.data(), m,
                          k, p, /*accumulate=*/true);
        }
      },
      "matmul");
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul_nt");
  require_rank2(b, "matmul_nt");
  if (a.dim(1) != b.dim(1))
    throw DimensionError("matmul_nt: inner extents differ, " +
                         dims_str(a.dims()) + " vs " + dims_str(b.dims()));
  const int m = a.dim(0), k = a.dim(1), p = b.dim(0);
  std::vector<double> out(static_cast<std::size_t>(m) * p);
  kern::matmul_nt(a.raw().data(), b.raw().data(), out.data(), m, k, p);
  return make_op(
      {m, p}, std::move(out), {a, b},
      [m, k, p](Node& self) {
        Node* pa = self.parents[0].get();
        Node* pb = self.parents[1].get();
        if (pa->requires_grad) {
          pa->ensure_grad();
          kern::matmul(self.grad.data(), pb->data.data(), pa->grad.data(), m, p,
                       k, /*accumulate=*/true);
        }
        if (pb->requires_grad) {
          pb->ensure_grad();
          kern::matmul_tn(self.grad.data(), pa->data.data(), pb->grad.data(), m,
                          p, k, /*accumulate=*/true);
        }
      },
      "matmul_nt");
}

Tensor transpose(const Tensor& x) {
  require_rank2(x, "transpose");
  const int m = x.dim(0), k = x.dim(1);
  std::vector<double> out(x.raw().size());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < k; ++j)
      out[static_cast<std::size_t>(j) * m + i] = x(i, j);
  return make_op(
      {k, m}, std::move(out), {x},
      [m, k](Node& self) {
        Node* p = self.parents[0].get();
        if (!p->requires_grad) return;
        p->ensure_grad();
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < k; ++j)
            p->grad[static_cast<std::size_t>(i) * k + j] +=
                self.grad[static_cast<std::size_t>(j) * m + i];
      },
      "transpose");
}

namespace {
bool g_gradient_fault = false;
}  // namespace

void set_gradient_fault_injection(bool enabled) { g_gradient_fault = enabled; }

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.raw().size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = x.raw()[i] > 0.0 ? x.raw()[i] : 0.0;
  return make_op(
      x.dims(), std::move(out), {x},
      [](Node& self) {
        Node* p = self.parents[0].get();
        if (!p->requires_grad) return;
        p->ensure_grad();
        const double slope = g_gradient_fault ? 0.99 : 1.0;
        for (std::size_t i = 0; i < self.grad.size(); ++i)
          if (p->data[i] > 0.0) p->grad[i] += slope * self.grad[i];
      },
      "relu");
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

Tensor gelu(const Tensor& x) {
  count_macs(8ull * x.numel());
  std::vector<double> out(x.raw().size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = x.raw()[i];
    out[i] = 0.5 * v * (1.0 + std::tanh(kGeluC * (v + kGeluA * v * v * v)));
  }
  return make_op(
      x.dims(), std::move(out), {x},
      [](Node& self) {
        Node* p = self.parents[0].get();
        if (!p->requires_grad) return;
        p->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
          const double v = p->data[i];
          const double t = std::tanh(kGeluC * (v + kGeluA * v * v * v));
          const double d = 0.5 * (1.0 + t) +
                           0.5 * v * (1.0 - t * t) * kGeluC *
                               (1.0 + 3.0 * kGeluA * v * v);
          p->grad[i] += self.grad[i] * d;
        }
      },
      "gelu");
}

Tensor softmax_lastdim(const Tensor& x) {
  if (x.rank() != 1 && x.rank() != 2)
    throw DimensionError("softmax_lastdim: expected rank 1 or 2, got " +
                         dims_str(x.dims()));
  const int rows = x.rank() == 2 ? x.dim(0) : 1;
  const int cols = x.rank() == 2 ? x.dim(1) : x.dim(0);
  std::vector<double> out(x.raw().size());
  kern::softmax_rows(x.raw().data(), out.data(), rows, cols);
  return make_op(
      x.dims(), std::move(out), {x},
      [rows, cols](Node& self) {
        Node* p = self.parents[0].get();
        if (!p->requires_grad) return;
        p->ensure_grad();
        kern::softmax_rows_grad(self.data.data(), self.grad.data(),
                                p->grad.data(), rows, cols);
      },
      "softmax_lastdim");
}

Tensor conv1d_same(const Tensor& x, const Tensor& w, const Tensor& bias,
                   int groups) {
  require_rank2(x, "conv1d_same");
  if (w.rank() != 3)
    throw DimensionError("conv1d_same: weights must be rank 3, got " +
                         dims_str(w.dims()));
  const int c_in = x.dim(0), n = x.dim(1);
  const int c_out = w.dim(0), cig = w.dim(1), ksz = w.dim(2);
  if (groups < 1 || c_in % groups != 0 || c_out % groups != 0)
    throw ConfigError("conv1d_same: channels (" + std::to_string(c_in) + "," +
                      std::to_string(c_out) + ") not divisible by groups " +
                      std::to_string(groups));
  if (cig != c_in / groups)
    throw DimensionError("conv1d_same: weight shape " + dims_str(w.dims()) +
                         " does not match input " + dims_str(x.dims()) +
                         " with groups " + std::to_string(groups));
  if (ksz % 2 == 0) throw ConfigError("conv1d_same: kernel size must be odd");
  const bool has_bias = bias.defined();
  if (has_bias && (bias.rank() != 1 || bias.dim(0) != c_out))
    throw DimensionError("conv1d_same: bias must be [" + std::to_string(c_out) +
                         "], got " + dims_str(bias.dims()));

  std::vector<double> out(static_cast<std::size_t>(c_out) * n);
  kern::conv1d_same(x.raw().data(), w.raw().data(),
                    has_bias ? bias.raw().data() : nullptr, out.data(), c_in,
                    c_out, n, ksz, groups);
  std::vector<Tensor> parents = {x, w};
  if (has_bias) parents.push_back(bias);
  return make_op(
      {c_out, n}, std::move(out), std::move(parents),
      [c_in, c_out, n, ksz, groups, has_bias](Node& self) {
        Node* px = self.parents[0].get();
        Node* pw = self.parents[1].get();
        if (px->requires_grad) {
          px->ensure_grad();
          kern::conv1d_same_grad_x(self.grad.data(), pw->data.data(),
                                   px->grad.data(), c_in, c_out, n, ksz, groups);
        }
        if (pw->requires_grad) {
          pw->ensure_grad();
          kern::conv1d_same_grad_w(self.grad.data(), px->data.data(),
                                   pw->grad.data(), c_in, c_out, n, ksz, groups);
        }
        if (has_bias) {
          Node* pb = self.parents[2].get();
          if (pb->requires_grad) {
            pb->ensure_grad();
            kern::conv1d_same_grad_bias(self.grad.data(), pb->grad.data(), c_out,
                                        n);
          }
        }
      },
      "conv1d_same");
}

Tensor conv1d_same(const Tensor& x, const Tensor& w, int groups) {
  return conv1d_same(x, w, Tensor(), groups);
}

Tensor linear_interp_sample(const Tensor& x, const Tensor& pos) {
  require_rank2(x, "linear_interp_sample");
  if (pos.rank() != 1 && pos.rank() != 2)
    throw DimensionError("linear_interp_sample: positions must be rank 1 or 2, got " +
                         dims_str(pos.dims()));
  const int c = x.dim(0), n = x.dim(1);
  const int npos = static_cast<int>(pos.numel());
  Dims out_dims{c};
  for (int e : pos.dims()) out_dims.push_back(e);
  std::vector<double> out(static_cast<std::size_t>(c) * npos);
  kern::interp_sample(x.raw().data(), pos.raw().data(), out.data(), c, n, npos);
  return make_op(
      std::move(out_dims), std::move(out), {x, pos},
      [c, n, npos](Node& self) {
        Node* px = self.parents[0].get();
        Node* pp = self.parents[1].get();
        if (px->requires_grad) {
          px->ensure_grad();
          kern::interp_sample_grad_x(self.grad.data(), pp->data.data(),
                                     px->grad.data(), c, n, npos);
        }
        if (pp->requires_grad) {
          pp->ensure_grad();
          kern::interp_sample_grad_pos(self.grad.data(), px->data.data(),
                                       pp->data.data(), pp->grad.data(), c, n,
                                       npos, /*accumulate=*/true);
        }
      },
      "linear_interp_sample");
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps) {
  require_rank2(x, "layer_norm");
  const int rows = x.dim(0), cols = x.dim(1);
  require_vector(gain, cols, "layer_norm");
  require_vector(bias, cols, "layer_norm");
  std::vector<double> xhat(x.raw().size());
  std::vector<double> mean(rows), invstd(rows);
  kern::rownorm(x.raw().data(), xhat.data(), mean.data(), invstd.data(), rows,
                cols, eps);
  count_macs(x.numel());
  std::vector<double> out(x.raw().size());
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) {
      const std::size_t idx = static_cast<std::size_t>(i) * cols + j;
      out[idx] = xhat[idx] * gain.raw()[j] + bias.raw()[j];
    }
  return make_op(
      {rows, cols}, std::move(out), {x, gain, bias},
      [rows, cols, xhat = std::move(xhat), invstd = std::move(invstd)](
          Node& self) {
        Node* px = self.parents[0].get();
        Node* pg = self.parents[1].get();
        Node* pb = self.parents[2].get();
        if (pg->requires_grad) {
          pg->ensure_grad();
          for (int i = 0; i < rows; ++i)
            for (int j = 0; j < cols; ++j) {
              const std::size_t idx = static_cast<std::size_t>(i) * cols + j;
              pg->grad[j] += self.grad[idx] * xhat[idx];
            }
        }
        if (pb->requires_grad) {
          pb->ensure_grad();
          for (int i = 0; i < rows; ++i)
            for (int j = 0; j < cols; ++j)
              pb->grad[j] += self.grad[static_cast<std::size_t>(i) * cols + j];
        }
        if (px->requires_grad) {
          px->ensure_grad();
          std::vector<double> gxhat(self.grad.size());
          for (int i = 0; i < rows; ++i)
            for (int j = 0; j < cols; ++j) {
              const std::size_t idx = static_cast<std::size_t>(i) * cols + j;
              gxhat[idx] = self.grad[idx] * pg->data[j];
            }
          kern::rownorm_grad(xhat.data(), invstd.data(), gxhat.data(),
                             px->grad.data(), rows, cols);
        }
      },
      "layer_norm");
}

Tensor rownorm(const Tensor& x, double eps) {
  require_rank2(x, "rownorm");
  const int rows = x.dim(0), cols = x.dim(1);
  std::vector<double> out(x.raw().size());
  std::vector<double> mean(rows), invstd(rows);
  kern::rownorm(x.raw().data(), out.data(), mean.data(), invstd.data(), rows,
                cols, eps);
  return make_op(
      {rows, cols}, std::move(out), {x},
      [rows, cols, invstd = std::move(invstd)](Node& self) {
        Node* p = self.parents[0].get();
        if (!p->requires_grad) return;
        p->ensure_grad();
        kern::rownorm_grad(self.data.data(), invstd.data(), self.grad.data(),
                           p->grad.data(), rows, cols);
      },
      "rownorm");
}

Tensor reshape(const Tensor& x, Dims d) {
  if (dims_numel(d) != x.numel())
    throw DimensionError("reshape: cannot view " + dims_str(x.dims()) + " as " +
                         dims_str(d));
  std::vector<double> out = x.raw();
  return make_op(
      std::move(d), std::move(out), {x},
      [](Node& self) {
        Node* p = self.parents[0].get();
        if (!p->requires_grad) return;
        p->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
          p->grad[i] += self.grad[i];
      },
      "reshape");
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const int m = parts[0].dim(0);
  int total = 0;
  for (const Tensor& t : parts) {
    require_rank2(t, "concat_cols");
    if (t.dim(0) != m)
      throw DimensionError("concat_cols: row mismatch " + dims_str(t.dims()));
    total += t.dim(1);
  }
  std::vector<double> out(static_cast<std::size_t>(m) * total);
  std::vector<int> widths;
  int off = 0;
  for (const Tensor& t : parts) {
    const int k = t.dim(1);
    for (int i = 0; i < m; ++i)
      std::copy_n(t.raw().begin() + static_cast<std::size_t>(i) * k, k,
                  out.begin() + static_cast<std::size_t>(i) * total + off);
    widths.push_back(k);
    off += k;
  }
  std::vector<Tensor> parents(parts.begin(), parts.end());
  return make_op(
      {m, total}, std::move(out), std::move(parents),
      [m, total, widths = std::move(widths)](Node& self) {
        int off2 = 0;
        for (std::size_t s = 0; s < self.parents.size(); ++s) {
          Node* p = self.parents[s].get();
          const int k = widths[s];
          if (p->requires_grad) {
            p->ensure_grad();
            for (int i = 0; i < m; ++i)
              for (int j = 0; j < k; ++j)
                p->grad[static_cast<std::size_t>(i) * k + j] +=
                    self.grad[static_cast<std::size_t>(i) * total + off2 + j];
          }
          off2 += k;
        }
      },
      "concat_cols");
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const int k = parts[0].dim(1);
  int total = 0;
  for (const Tensor& t : parts) {
    require_rank2(t, "concat_rows");
    if (t.dim(1) != k)
      throw DimensionError("concat_rows: column mismatch " + dims_str(t.dims()));
    total += t.dim(0);
  }
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(total) * k);
  std::vector<int> heights;
  for (const Tensor& t : parts) {
    out.insert(out.end(), t.raw().begin(), t.raw().end());
    heights.push_back(t.dim(0));
  }
  std::vector<Tensor> parents(parts.begin(), parts.end());
  return make_op(
      {total, k}, std::move(out), std::move(parents),
      [k, heights = std::move(heights)](Node& self) {
        std::size_t off = 0;
        for (std::size_t s = 0; s < self.parents.size(); ++s) {
          Node* p = self.parents[s].get();
          const std::size_t len = static_cast<std::size_t>(heights[s]) * k;
          if (p->requires_grad) {
            p->ensure_grad();
            for (std::size_t i = 0; i < len; ++i)
              p->grad[i] += self.grad[off + i];
          }
          off += len;
        }
      },
      "concat_rows");
}

Tensor slice_rows(const Tensor& x, int i0, int i1) {
  require_rank2(x, "slice_rows");
  const int m = x.dim(0), k = x.dim(1);
  if (i0 < 0 || i1 > m || i0 >= i1)
    throw DimensionError("slice_rows: bad range [" + std::to_string(i0) + "," +
                         std::to_string(i1) + ") for " + dims_str(x.dims()));
  std::vector<double> out(x.raw().begin() + static_cast<std::size_t>(i0) * k,
                          x.raw().begin() + static_cast<std::size_t>(i1) * k);
  return make_op(
      {i1 - i0, k}, std::move(out), {x},
      [i0, k](Node& self) {
        Node* p = self.parents[0].get();
        if (!p->requires_grad) return;
        p->ensure_grad();
        const std::size_t off = static_cast<std::size_t>(i0) * k;
        for (std::size_t i = 0; i < self.grad.size(); ++i)
          p->grad[off + i] += self.grad[i];
      },
      "slice_rows");
}

Tensor slice_cols(const Tensor& x, int j0, int j1) {
  require_rank2(x, "slice_cols");
  const int m = x.dim(0), k = x.dim(1);
  if (j0 < 0 || j1 > k || j0 >= j1)
    throw DimensionError("slice_cols: bad range [" + std::to_string(j0) + "," +
                         std::to_string(j1) + ") for " + dims_str(x.dims()));
  const int w = j1 - j0;
  std::vector<double> out(static_cast<std::size_t>(m) * w);
  for (int i = 0; i < m; ++i)
    std::copy_n(x.raw().begin() + static_cast<std::size_t>(i) * k + j0, w,
                out.begin() + static_cast<std::size_t>(i) * w);
  return make_op(
      {m, w}, std::move(out), {x},
      [m, k, j0, w](Node& self) {
        Node* p = self.parents[0].get();
        if (!p->requires_grad) return;
        p->ensure_grad();
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < w; ++j)
            p->grad[static_cast<std::size_t>(i) * k + j0 + j] +=
                self.grad[static_cast<std::size_t>(i) * w + j];
      },
      "slice_cols");
}

Tensor mean_rows(const Tensor& x) {
  require_rank2(x, "mean_rows");
  const int m = x.dim(0), k = x.dim(1);
  count_macs(x.numel());
  std::vector<double> out(static_cast<std::size_t>(k), 0.0);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < k; ++j) out[j] += x(i, j);
  for (int j = 0; j < k; ++j) out[j] /= m;
  return make_op(
      {1, k}, std::move(out), {x},
      [m, k](Node& self) {
        Node* p = self.parents[0].get();
        if (!p->requires_grad) return;
        p->ensure_grad();
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < k; ++j)
            p->grad[static_cast<std::size_t>(i) * k + j] += self.grad[j] / m;
      },
      "mean_rows");
}

Tensor mean_cols(const Tensor& x) {
  require_rank2(x, "mean_cols");
  const int m = x.dim(0), k = x.dim(1);
  count_macs(x.numel());
  std::vector<double> out(static_cast<std::size_t>(m), 0.0);
  for (int i = 0; i < m; ++i) {
    double acc = 0.0;
    for (int j = 0; j < k; ++j) acc += x(i, j);
    out[i] = acc / k;
  }
  return make_op(
      {m, 1}, std::move(out), {x},
      [m, k](Node& self) {
        Node* p = self.parents[0].get();
        if (!p->requires_grad) return;
        p->ensure_grad();
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < k; ++j)
            p->grad[static_cast<std::size_t>(i) * k + j] += self.grad[i] / k;
      },
      "mean_cols");
}

Tensor sum_all(const Tensor& x) {
  count_macs(x.numel());
  double acc = 0.0;
  for (double v : x.raw()) acc += v;
  return make_op(
      {1}, {acc}, {x},
      [](Node& self) {
        Node* p = self.parents[0].get();
        if (!p->requires_grad) return;
        p->ensure_grad();
        for (std::size_t i = 0; i < p->grad.size(); ++i)
          p->grad[i] += self.grad[0];
      },
      "sum_all");
}

Tensor avg_pool_rows(const Tensor& x, int window) {
  require_rank2(x, "avg_pool_rows");
  if (window < 1 || window % 2 == 0)
    throw ConfigError("avg_pool_rows: window must be odd and positive");
  const int n = x.dim(0), d = x.dim(1);
  const int h = window / 2;
  count_macs(static_cast<std::uint64_t>(window) * x.numel());
  std::vector<double> out(x.raw().size(), 0.0);
  for (int t = 0; t < n; ++t) {
    const int u0 = std::max(0, t - h), u1 = std::min(n - 1, t + h);
    const double inv = 1.0 / (u1 - u0 + 1);
    for (int u = u0; u <= u1; ++u)
      for (int j = 0; j < d; ++j)
        out[static_cast<std::size_t>(t) * d + j] +=
            x(u, j) * inv;
  }
  return make_op(
      x.dims(), std::move(out), {x},
      [n, d, h](Node& self) {
        Node* p = self.parents[0].get();
        if (!p->requires_grad) return;
        p->ensure_grad();
        for (int t = 0; t < n; ++t) {
          const int u0 = std::max(0, t - h), u1 = std::min(n - 1, t + h);
          const double inv = 1.0 / (u1 - u0 + 1);
          for (int u = u0; u <= u1; ++u)
            for (int j = 0; j < d; ++j)
              p->grad[static_cast<std::size_t>(u) * d + j] +=
                  self.grad[static_cast<std::size_t>(t) * d + j] * inv;
        }
      },
      "avg_pool_rows");
}

Tensor mask_rows(const Tensor& x, const std::vector<std::uint8_t>& masked) {
  require_rank2(x, "mask_rows");
  const int n = x.dim(0), d = x.dim(1);
  if (static_cast<int>(masked.size()) != n)
    throw DimensionError("mask_rows: mask length " +
                         std::to_string(masked.size()) + " vs rows " +
                         std::to_string(n));
  count_macs(x.numel());
  std::vector<double> out(x.raw().size());
  for (int t = 0; t < n; ++t) {
    const bool keep = masked[static_cast<std::size_t>(t)] == 0;
    for (int j = 0; j < d; ++j)
      out[static_cast<std::size_t>(t) * d + j] = keep ? x(t, j) : 0.0;
  }
  return make_op(
      x.dims(), std::move(out), {x},
      [n, d, masked](Node& self) {
        Node* p = self.parents[0].get();
        if (!p->requires_grad) return;
        p->ensure_grad();
        for (int t = 0; t < n; ++t) {
          if (masked[static_cast<std::size_t>(t)]) continue;
          for (int j = 0; j < d; ++j) {
            const std::size_t idx = static_cast<std::size_t>(t) * d + j;
            p->grad[idx] += self.grad[idx];
          }
        }
      },
      "mask_rows");
}

namespace {
constexpr double kKlClamp = 1e-9;

void validate_distribution_rows(const Tensor& t, const char* which) {
  const int rows = t.rank() == 2 ? t.dim(0) : 1;
  const int cols = t.rank() == 2 ? t.dim(1) : t.dim(0);
  for (int r = 0; r < rows; ++r) {
    double sum = 0.0;
    for (int j = 0; j < cols; ++j)
      sum += t.raw()[static_cast<std::size_t>(r) * cols + j];
    if (std::abs(sum - 1.0) > 1e-6)
      throw ValidationError(std::string("kl_divergence: ") + which + " row " +
                            std::to_string(r) + " sums to " +
                            std::to_string(sum) + ", not 1");
  }
}
}  // namespace

Tensor kl_divergence(const Tensor& p, const Tensor& q) {
  require_same_shape(p, q, "kl_divergence");
  if (p.rank() != 1 && p.rank() != 2)
    throw DimensionError("kl_divergence: expected rank 1 or 2, got " +
                         dims_str(p.dims()));
  validate_distribution_rows(p, "p");
  validate_distribution_rows(q, "q");
  const int rows = p.rank() == 2 ? p.dim(0) : 1;
  const int cols = p.rank() == 2 ? p.dim(1) : p.dim(0);
  count_macs(3ull * p.numel());
  double total = 0.0;
  for (std::size_t i = 0; i < p.raw().size(); ++i) {
    const double pv = p.raw()[i];
    if (pv <= 0.0) continue;  // 0 ln 0 := 0
    const double qc = std::max(q.raw()[i], kKlClamp);
    total += pv * std::log(pv / qc);
  }
  total /= rows;
  // Teacher side: p enters as data only, never as a parent, so no gradient
  // can flow into it.
  std::vector<double> pdata = p.raw();
  return make_op(
      {1}, {total}, {q},
      [rows, cols, pdata = std::move(pdata)](Node& self) {
        Node* pq = self.parents[0].get();
        if (!pq->requires_grad) return;
        pq->ensure_grad();
        const double g = self.grad[0] / rows;
        (void)cols;
        for (std::size_t i = 0; i < pdata.size(); ++i) {
          const double pv = pdata[i];
          if (pv <= 0.0) continue;
          const double qc = std::max(pq->data[i], kKlClamp);
          pq->grad[i] += g * (-pv / qc);
        }
      },
      "kl_divergence");
}

Tensor cross_entropy_with_logits(const Tensor& logits,
                                 const std::vector<int>& labels) {
  require_rank2(logits, "cross_entropy_with_logits");
  const int b = logits.dim(0), k = logits.dim(1);
  if (static_cast<int>(labels.size()) != b)
    throw DimensionError("cross_entropy_with_logits: " +
                         std::to_string(labels.size()) + " labels for batch " +
                         std::to_string(b));
  for (int i = 0; i < b; ++i)
    if (labels[static_cast<std::size_t>(i)] < 0 ||
        labels[static_cast<std::size_t>(i)] >= k)
      throw DataError("label " + std::to_string(labels[i]) +
                      " out of range [0," + std::to_string(k) + ") at sample " +
                      std::to_string(i));
  std::vector<double> probs(logits.raw().size());
  kern::softmax_rows(logits.raw().data(), probs.data(), b, k);
  count_macs(2ull * logits.numel());
  double total = 0.0;
  for (int i = 0; i < b; ++i) {
    const double* row = logits.raw().data() + static_cast<std::size_t>(i) * k;
    double mx = row[0];
    for (int j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    double lse = 0.0;
    for (int j = 0; j < k; ++j) lse += std::exp(row[j] - mx);
    total += mx + std::log(lse) - row[labels[static_cast<std::size_t>(i)]];
  }
  total /= b;
  return make_op(
      {1}, {total}, {logits},
      [b, k, labels, probs = std::move(probs)](Node& self) {
        Node* p = self.parents[0].get();
        if (!p->requires_grad) return;
        p->ensure_grad();
        const double g = self.grad[0] / b;
        for (int i = 0; i < b; ++i)
          for (int j = 0; j < k; ++j) {
            const std::size_t idx = static_cast<std::size_t>(i) * k + j;
            const double onehot =
                j == labels[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
            p->grad[idx] += g * (probs[idx] - onehot);
          }
      },
      "cross_entropy_with_logits");
}

GradCheckResult gradient_check(const std::function<Tensor()>& f,
                               std::span<const Tensor> params, double step) {
  if (step < 1e-6 || step > 1e-4)
    throw ConfigError("gradient_check: step must lie in [1e-6, 1e-4]");

  // Analytic pass.
  std::vector<std::vector<double>> analytic;
  {
    Tape::Scope scope;
    for (const Tensor& p : params) {
      p.node()->ensure_grad();
      std::fill(p.node()->grad.begin(), p.node()->grad.end(), 0.0);
    }
    Tensor out = f();
    if (!std::isfinite(out.scalar()))
      throw NumericError("gradient_check: objective is non-finite");
    backward(out);
    for (const Tensor& p : params) {
      p.node()->ensure_grad();
      analytic.push_back(p.node()->grad);
    }
  }

  // Numeric pass, central differences.
  GradCheckResult result;
  NoGradGuard ng;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    const Tensor& p = params[pi];
    std::string pname = p.name().empty()
                            ? "param" + std::to_string(pi)
                            : p.name();
    double worst = 0.0;
    auto& values = const_cast<std::vector<double>&>(p.raw());
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + step;
      const double fp = f().scalar();
      values[i] = saved - step;
      const double fm = f().scalar();
      values[i] = saved;
      if (!std::isfinite(fp) || !std::isfinite(fm))
        throw NumericError("gradient_check: objective is non-finite near " +
                           pname);
      const double numeric = (fp - fm) / (2.0 * step);
      const double a = analytic[pi][i];
      const double rel = std::abs(a - numeric) /
                         std::max({1.0, std::abs(a), std::abs(numeric)});
      worst = std::max(worst, rel);
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_param = pname + "[" + std::to_string(i) + "]";
      }
    }
    result.per_param.emplace_back(std::move(pname), worst);
  }
  return result;
}

}  // namespace fmla
