#include "lionxa/tensor.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_set>

#include "lionxa/error.hpp"

namespace lionxa::ad {

namespace {

thread_local bool g_grad_enabled = true;
std::atomic<fault::Kind> g_fault{fault::Kind::kNone};

[[noreturn]] void shape_error(const std::string& msg) { throw Error(ErrorCode::kShapeError, msg); }

using NodePtr = std::shared_ptr<Node>;

// Wires a freshly computed value into the graph. Parents and the backward
// closure are dropped when no parent needs a gradient or grad mode is off.
Tensor make_result(Shape shape, std::vector<double> value, const char* op,
                   std::vector<NodePtr> parents, std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  bool needs = false;
  if (g_grad_enabled) {
    for (const auto& p : parents) needs = needs || p->requires_grad;
  }
  if (needs) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

std::vector<double>& grad_of(Node& parent) {
  parent.ensure_grad();
  return parent.grad;
}

bool is_scalar(const Tensor& t) { return t.size() == 1; }

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    shape_error(std::string(op) + ": " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& x, const char* op, Fwd fwd, Deriv deriv) {
  std::vector<double> out(x.size());
  const auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xv[i]);
  return make_result(x.shape(), std::move(out), op, {x.node()}, [deriv](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = grad_of(p);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * deriv(p.value[i], self.value[i]);
  });
}

}  // namespace

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor Tensor::constant(Shape shape, std::vector<double> values) {
  if (numel(shape) != values.size()) {
    shape_error("constant: shape " + shape_str(shape) + " holds " + std::to_string(numel(shape)) +
                " values, got " + std::to_string(values.size()));
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  return Tensor(std::move(node));
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double v) {
  const auto n = numel(shape);
  return constant(std::move(shape), std::vector<double>(n, v));
}

Tensor Tensor::scalar(double v) { return constant({1}, {v}); }

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
  Tensor t = constant(std::move(shape), std::move(values));
  t.node_->requires_grad = true;
  t.node_->is_parameter = true;
  t.node_->op = "parameter";
  t.node_->grad.assign(t.node_->value.size(), 0.0);
  return t;
}

double Tensor::item() const {
  if (size() != 1) shape_error("item() on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

// ---------------------------------------------------------------------------
// elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  if (is_scalar(b) && !is_scalar(a)) {
    std::vector<double> out(a.values().begin(), a.values().end());
    const double s = b.item();
    for (auto& v : out) v += s;
    return make_result(a.shape(), std::move(out), "add_scalar_tensor", {a.node(), b.node()},
                       [](Node& self) {
                         Node& pa = *self.parents[0];
                         Node& pb = *self.parents[1];
                         if (pa.requires_grad) {
                           auto& g = grad_of(pa);
                           for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                         }
                         if (pb.requires_grad) {
                           double acc = 0.0;
                           for (double v : self.grad) acc += v;
                           grad_of(pb)[0] += acc;
                         }
                       });
  }
  require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return make_result(a.shape(), std::move(out), "add", {a.node(), b.node()}, [](Node& self) {
    for (int k = 0; k < 2; ++k) {
      Node& p = *self.parents[k];
      if (!p.requires_grad) continue;
      auto& g = grad_of(p);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, scale(b, -1.0)); }

Tensor mul(const Tensor& a, const Tensor& b) {
  if (is_scalar(b) && !is_scalar(a)) {
    const double s = b.item();
    std::vector<double> out(a.values().begin(), a.values().end());
    for (auto& v : out) v *= s;
    return make_result(a.shape(), std::move(out), "mul_scalar_tensor", {a.node(), b.node()},
                       [](Node& self) {
                         Node& pa = *self.parents[0];
                         Node& pb = *self.parents[1];
                         const double s = pb.value[0];
                         if (pa.requires_grad) {
                           auto& g = grad_of(pa);
                           for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * s;
                         }
                         if (pb.requires_grad) {
                           double acc = 0.0;
                           for (std::size_t i = 0; i < self.grad.size(); ++i) {
                             acc += self.grad[i] * pa.value[i];
                           }
                           grad_of(pb)[0] += acc;
                         }
                       });
  }
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return make_result(a.shape(), std::move(out), "mul", {a.node(), b.node()}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto& g = grad_of(pa);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      auto& g = grad_of(pb);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.value[i];
    }
  });
}

Tensor scale(const Tensor& a, double s) {
  return unary(
      a, "scale", [s](double v) { return v * s; }, [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary(
      a, "add_scalar", [s](double v) { return v + s; }, [](double, double) { return 1.0; });
}

Tensor relu(const Tensor& x) {
  const double sign = fault::active() == fault::Kind::kReluBackwardSign ? -1.0 : 1.0;
  return unary(
      x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
      [sign](double in, double) { return in > 0.0 ? sign : 0.0; });
}

Tensor leaky_relu(const Tensor& x, double slope) {
  return unary(
      x, "leaky_relu", [slope](double v) { return v > 0.0 ? v : slope * v; },
      [slope](double in, double) { return in > 0.0 ? 1.0 : slope; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x, "sigmoid",
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double out) { return out * (1.0 - out); });
}

Tensor log(const Tensor& x) {
  return unary(
      x, "log", [](double v) { return std::log(v); }, [](double in, double) { return 1.0 / in; });
}

Tensor exp(const Tensor& x) {
  return unary(
      x, "exp", [](double v) { return std::exp(v); }, [](double, double out) { return out; });
}

Tensor clamp_min(const Tensor& x, double floor) {
  return unary(
      x, "clamp_min", [floor](double v) { return v < floor ? floor : v; },
      [floor](double in, double) { return in < floor ? 0.0 : 1.0; });
}

// ---------------------------------------------------------------------------
// reductions

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  return make_result({1}, {acc}, "sum", {x.node()}, [](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = grad_of(p);
    const double d = self.grad[0];
    for (auto& v : g) v += d;
  });
}

Tensor mean(const Tensor& x) {
  if (x.size() == 0) shape_error("mean of empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

// ---------------------------------------------------------------------------
// linear algebra

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const RowMat>;
using MMap = Eigen::Map<RowMat>;

// out[m,n] += a[m,k] * b[k,n]
void gemm_nn(const double* a, const double* b, double* out, std::size_t m, std::size_t k,
             std::size_t n) {
  MMap(out, m, n).noalias() += CMap(a, m, k) * CMap(b, k, n);
}

// out[m,k] += a[m,n] * b[k,n]^T
void gemm_nt(const double* a, const double* b, double* out, std::size_t m, std::size_t n,
             std::size_t k) {
  MMap(out, m, k).noalias() += CMap(a, m, n) * CMap(b, k, n).transpose();
}

// out[k,n] += a[m,k]^T * b[m,n]
void gemm_tn(const double* a, const double* b, double* out, std::size_t m, std::size_t k,
             std::size_t n) {
  MMap(out, k, n).noalias() += CMap(a, m, k).transpose() * CMap(b, m, n);
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    shape_error("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n, 0.0);
  gemm_nn(a.values().data(), b.values().data(), out.data(), m, k, n);
  const double sign = fault::active() == fault::Kind::kMatmulBackwardSign ? -1.0 : 1.0;
  return make_result({m, n}, std::move(out), "matmul", {a.node(), b.node()},
                     [m, k, n, sign](Node& self) {
                       Node& pa = *self.parents[0];
                       Node& pb = *self.parents[1];
                       std::vector<double> dy = self.grad;
                       if (sign < 0) {
                         for (auto& v : dy) v = -v;
                       }
                       if (pa.requires_grad) {
                         gemm_nt(dy.data(), pb.value.data(), grad_of(pa).data(), m, n, k);
                       }
                       if (pb.requires_grad) {
                         gemm_tn(pa.value.data(), dy.data(), grad_of(pb).data(), m, k, n);
                       }
                     });
}

Tensor add_row_bias(const Tensor& x, const Tensor& bias) {
  if (x.rank() != 2 || bias.size() != x.dim(1)) {
    shape_error("add_row_bias: " + shape_str(x.shape()) + " + " + shape_str(bias.shape()));
  }
  const std::size_t m = x.dim(0), n = x.dim(1);
  std::vector<double> out(x.values().begin(), x.values().end());
  const auto bv = bias.values();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bv[j];
  }
  return make_result(x.shape(), std::move(out), "add_row_bias", {x.node(), bias.node()},
                     [m, n](Node& self) {
                       Node& px = *self.parents[0];
                       Node& pb = *self.parents[1];
                       if (px.requires_grad) {
                         auto& g = grad_of(px);
                         for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                       }
                       if (pb.requires_grad) {
                         auto& g = grad_of(pb);
                         for (std::size_t i = 0; i < m; ++i) {
                           for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[i * n + j];
                         }
                       }
                     });
}

Tensor transpose(const Tensor& x) {
  if (x.rank() != 2) shape_error("transpose expects rank 2, got " + shape_str(x.shape()));
  const std::size_t m = x.dim(0), n = x.dim(1);
  std::vector<double> out(m * n);
  const auto xv = x.values();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = xv[i * n + j];
  }
  return make_result({n, m}, std::move(out), "transpose", {x.node()}, [m, n](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = grad_of(p);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[j * m + i];
    }
  });
}

// ---------------------------------------------------------------------------
// image ops

namespace {

struct ConvGeom {
  std::size_t cin, cout, h, w, k, pad;
  std::size_t hw() const { return h * w; }
  std::size_t kdim() const { return cin * k * k; }
};

void im2col(const double* x, const ConvGeom& g, double* col) {
  const std::size_t hw = g.hw();
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        double* dst = col + ((c * g.k + ky) * g.k + kx) * hw;
        const long dy = static_cast<long>(ky) - static_cast<long>(g.pad);
        const long dx = static_cast<long>(kx) - static_cast<long>(g.pad);
        for (std::size_t y = 0; y < g.h; ++y) {
          const long sy = static_cast<long>(y) + dy;
          double* drow = dst + y * g.w;
          if (sy < 0 || sy >= static_cast<long>(g.h)) {
            std::fill(drow, drow + g.w, 0.0);
            continue;
          }
          const double* srow = x + (c * g.h + static_cast<std::size_t>(sy)) * g.w;
          for (std::size_t xx = 0; xx < g.w; ++xx) {
            const long sx = static_cast<long>(xx) + dx;
            drow[xx] = (sx < 0 || sx >= static_cast<long>(g.w)) ? 0.0 : srow[sx];
          }
        }
      }
    }
  }
}

void col2im_add(const double* col, const ConvGeom& g, double* x) {
  const std::size_t hw = g.hw();
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const double* src = col + ((c * g.k + ky) * g.k + kx) * hw;
        const long dy = static_cast<long>(ky) - static_cast<long>(g.pad);
        const long dx = static_cast<long>(kx) - static_cast<long>(g.pad);
        for (std::size_t y = 0; y < g.h; ++y) {
          const long sy = static_cast<long>(y) + dy;
          if (sy < 0 || sy >= static_cast<long>(g.h)) continue;
          double* xrow = x + (c * g.h + static_cast<std::size_t>(sy)) * g.w;
          const double* crow = src + y * g.w;
          for (std::size_t xx = 0; xx < g.w; ++xx) {
            const long sx = static_cast<long>(xx) + dx;
            if (sx >= 0 && sx < static_cast<long>(g.w)) xrow[sx] += crow[xx];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.rank() != 3 || weight.rank() != 4 || weight.dim(1) != x.dim(0) ||
      weight.dim(2) != weight.dim(3) || weight.dim(2) % 2 == 0 || bias.size() != weight.dim(0)) {
    shape_error("conv2d: input " + shape_str(x.shape()) + ", weight " + shape_str(weight.shape()) +
                ", bias " + shape_str(bias.shape()));
  }
  ConvGeom g{x.dim(0), weight.dim(0), x.dim(1), x.dim(2), weight.dim(2), weight.dim(2) / 2};
  const std::size_t hw = g.hw();
  const std::size_t kd = g.kdim();

  // 1x1 kernels read the input directly as the column matrix.
  std::shared_ptr<std::vector<double>> col;
  const double* colp = x.values().data();
  if (g.k > 1) {
    col = std::make_shared<std::vector<double>>(kd * hw);
    im2col(x.values().data(), g, col->data());
    colp = col->data();
  }

  std::vector<double> out(g.cout * hw);
  const auto bv = bias.values();
  for (std::size_t co = 0; co < g.cout; ++co) {
    std::fill(out.begin() + static_cast<long>(co * hw), out.begin() + static_cast<long>((co + 1) * hw),
              bv[co]);
  }
  gemm_nn(weight.values().data(), colp, out.data(), g.cout, kd, hw);

  if (!grad_enabled()) col.reset();
  return make_result({g.cout, g.h, g.w}, std::move(out), "conv2d",
                     {x.node(), weight.node(), bias.node()}, [g, col](Node& self) {
                       Node& px = *self.parents[0];
                       Node& pw = *self.parents[1];
                       Node& pb = *self.parents[2];
                       const std::size_t hw = g.hw();
                       const std::size_t kd = g.kdim();
                       const double* dy = self.grad.data();
                       if (pb.requires_grad) {
                         auto& gb = grad_of(pb);
                         for (std::size_t co = 0; co < g.cout; ++co) {
                           double acc = 0.0;
                           for (std::size_t p = 0; p < hw; ++p) acc += dy[co * hw + p];
                           gb[co] += acc;
                         }
                       }
                       const double* colp = col ? col->data() : px.value.data();
                       if (pw.requires_grad) {
                         gemm_nt(dy, colp, grad_of(pw).data(), g.cout, hw, kd);
                       }
                       if (px.requires_grad) {
                         if (g.k == 1) {
                           gemm_tn(pw.value.data(), dy, grad_of(px).data(), g.cout, kd, hw);
                         } else {
                           std::vector<double> dcol(kd * hw, 0.0);
                           gemm_tn(pw.value.data(), dy, dcol.data(), g.cout, kd, hw);
                           col2im_add(dcol.data(), g, grad_of(px).data());
                         }
                       }
                     });
}

Tensor max_pool2d(const Tensor& x) {
  if (x.rank() != 3 || x.dim(1) % 2 != 0 || x.dim(2) % 2 != 0) {
    shape_error("max_pool2d needs [C,H,W] with even H, W; got " + shape_str(x.shape()));
  }
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t oh = h / 2, ow = w / 2;
  std::vector<double> out(c * oh * ow);
  std::vector<std::uint32_t> arg(out.size());
  const auto xv = x.values();
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t xx = 0; xx < ow; ++xx) {
        const std::size_t base = (ch * h + 2 * y) * w + 2 * xx;
        std::size_t best = base;
        for (std::size_t cand : {base + 1, base + w, base + w + 1}) {
          if (xv[cand] > xv[best]) best = cand;
        }
        const std::size_t o = (ch * oh + y) * ow + xx;
        out[o] = xv[best];
        arg[o] = static_cast<std::uint32_t>(best);
      }
    }
  }
  return make_result({c, oh, ow}, std::move(out), "max_pool2d", {x.node()},
                     [arg = std::move(arg)](Node& self) {
                       Node& p = *self.parents[0];
                       if (!p.requires_grad) return;
                       auto& g = grad_of(p);
                       for (std::size_t o = 0; o < arg.size(); ++o) g[arg[o]] += self.grad[o];
                     });
}

Tensor upsample_nearest2d(const Tensor& x) {
  if (x.rank() != 3) shape_error("upsample_nearest2d needs [C,H,W], got " + shape_str(x.shape()));
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t oh = 2 * h, ow = 2 * w;
  std::vector<double> out(c * oh * ow);
  const auto xv = x.values();
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < oh; ++y) {
      const double* src = xv.data() + (ch * h + y / 2) * w;
      double* dst = out.data() + (ch * oh + y) * ow;
      for (std::size_t xx = 0; xx < ow; ++xx) dst[xx] = src[xx / 2];
    }
  }
  return make_result({c, oh, ow}, std::move(out), "upsample_nearest2d", {x.node()},
                     [c, h, w](Node& self) {
                       Node& p = *self.parents[0];
                       if (!p.requires_grad) return;
                       auto& g = grad_of(p);
                       const std::size_t oh = 2 * h, ow = 2 * w;
                       for (std::size_t ch = 0; ch < c; ++ch) {
                         for (std::size_t y = 0; y < oh; ++y) {
                           const double* src = self.grad.data() + (ch * oh + y) * ow;
                           double* dst = g.data() + (ch * h + y / 2) * w;
                           for (std::size_t xx = 0; xx < ow; ++xx) dst[xx / 2] += src[xx];
                         }
                       }
                     });
}

Tensor instance_norm_2d(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  if (x.rank() != 3 || gamma.size() != x.dim(0) || beta.size() != x.dim(0)) {
    shape_error("instance_norm_2d: input " + shape_str(x.shape()) + ", gamma " +
                shape_str(gamma.shape()) + ", beta " + shape_str(beta.shape()));
  }
  const std::size_t c = x.dim(0), plane = x.dim(1) * x.dim(2);
  std::vector<double> out(x.size());
  std::vector<double> xhat(x.size());
  std::vector<double> inv_std(c);
  const auto xv = x.values();
  const auto gv = gamma.values();
  const auto bv = beta.values();
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* src = xv.data() + ch * plane;
    double mu = 0.0;
    for (std::size_t i = 0; i < plane; ++i) mu += src[i];
    mu /= static_cast<double>(plane);
    double var = 0.0;
    for (std::size_t i = 0; i < plane; ++i) var += (src[i] - mu) * (src[i] - mu);
    var /= static_cast<double>(plane);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[ch] = is;
    for (std::size_t i = 0; i < plane; ++i) {
      const double xh = (src[i] - mu) * is;
      xhat[ch * plane + i] = xh;
      out[ch * plane + i] = gv[ch] * xh + bv[ch];
    }
  }
  return make_result(
      x.shape(), std::move(out), "instance_norm_2d", {x.node(), gamma.node(), beta.node()},
      [c, plane, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
        Node& px = *self.parents[0];
        Node& pg = *self.parents[1];
        Node& pb = *self.parents[2];
        const double n = static_cast<double>(plane);
        for (std::size_t ch = 0; ch < c; ++ch) {
          const double* dy = self.grad.data() + ch * plane;
          const double* xh = xhat.data() + ch * plane;
          double sum_dy = 0.0, sum_dy_xh = 0.0;
          for (std::size_t i = 0; i < plane; ++i) {
            sum_dy += dy[i];
            sum_dy_xh += dy[i] * xh[i];
          }
          if (pg.requires_grad) grad_of(pg)[ch] += sum_dy_xh;
          if (pb.requires_grad) grad_of(pb)[ch] += sum_dy;
          if (px.requires_grad) {
            const double gm = pg.value[ch];
            double* dx = grad_of(px).data() + ch * plane;
            const double k = gm * inv_std[ch] / n;
            for (std::size_t i = 0; i < plane; ++i) {
              dx[i] += k * (n * dy[i] - sum_dy - xh[i] * sum_dy_xh);
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// row ops

Tensor softmax(const Tensor& x) {
  if (x.rank() == 0 || x.size() == 0) shape_error("softmax of empty tensor");
  const std::size_t cols = x.shape().back();
  const std::size_t rows = x.size() / cols;
  std::vector<double> out(x.size());
  const auto xv = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* src = xv.data() + r * cols;
    double* dst = out.data() + r * cols;
    const double mx = *std::max_element(src, src + cols);
    double z = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      dst[j] = std::exp(src[j] - mx);
      z += dst[j];
    }
    for (std::size_t j = 0; j < cols; ++j) dst[j] /= z;
  }
  return make_result(x.shape(), std::move(out), "softmax", {x.node()}, [rows, cols](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = grad_of(p);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * cols;
      const double* dy = self.grad.data() + r * cols;
      double dot = 0.0;
      for (std::size_t j = 0; j < cols; ++j) dot += dy[j] * y[j];
      for (std::size_t j = 0; j < cols; ++j) g[r * cols + j] += y[j] * (dy[j] - dot);
    }
  });
}

Tensor gather_rows(const Tensor& x, std::span<const std::int64_t> index) {
  if (x.rank() != 2) shape_error("gather_rows expects [N,F], got " + shape_str(x.shape()));
  const std::size_t n = x.dim(0), f = x.dim(1);
  std::vector<std::int64_t> idx(index.begin(), index.end());
  std::vector<double> out(idx.size() * f, 0.0);
  const auto xv = x.values();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0) continue;
    if (static_cast<std::size_t>(idx[i]) >= n) {
      shape_error("gather_rows index " + std::to_string(idx[i]) + " out of range " +
                  std::to_string(n));
    }
    std::copy_n(xv.data() + static_cast<std::size_t>(idx[i]) * f, f, out.data() + i * f);
  }
  const std::size_t m = idx.size();
  return make_result({m, f}, std::move(out), "gather_rows", {x.node()},
                     [f, idx = std::move(idx)](Node& self) {
                       Node& p = *self.parents[0];
                       if (!p.requires_grad) return;
                       auto& g = grad_of(p);
                       for (std::size_t i = 0; i < idx.size(); ++i) {
                         if (idx[i] < 0) continue;
                         double* dst = g.data() + static_cast<std::size_t>(idx[i]) * f;
                         const double* src = self.grad.data() + i * f;
                         for (std::size_t j = 0; j < f; ++j) dst[j] += src[j];
                       }
                     });
}

Tensor scatter_rows(const Tensor& x, std::span<const std::int64_t> index, std::size_t rows) {
  if (x.rank() != 2 || index.size() != x.dim(0)) {
    shape_error("scatter_rows: input " + shape_str(x.shape()) + " with " +
                std::to_string(index.size()) + " indices");
  }
  const std::size_t f = x.dim(1);
  std::vector<std::int64_t> idx(index.begin(), index.end());
  std::vector<double> out(rows * f, 0.0);
  const auto xv = x.values();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0) continue;
    if (static_cast<std::size_t>(idx[i]) >= rows) {
      shape_error("scatter_rows index " + std::to_string(idx[i]) + " out of range " +
                  std::to_string(rows));
    }
    double* dst = out.data() + static_cast<std::size_t>(idx[i]) * f;
    for (std::size_t j = 0; j < f; ++j) dst[j] += xv[i * f + j];
  }
  return make_result({rows, f}, std::move(out), "scatter_rows", {x.node()},
                     [f, idx = std::move(idx)](Node& self) {
                       Node& p = *self.parents[0];
                       if (!p.requires_grad) return;
                       auto& g = grad_of(p);
                       for (std::size_t i = 0; i < idx.size(); ++i) {
                         if (idx[i] < 0) continue;
                         const double* src = self.grad.data() + static_cast<std::size_t>(idx[i]) * f;
                         for (std::size_t j = 0; j < f; ++j) g[i * f + j] += src[j];
                       }
                     });
}

namespace {

struct AxisSplit {
  std::size_t outer, axis, inner;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit r{1, s.at(axis), 1};
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

}  // namespace

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) shape_error("concat of zero tensors");
  Shape shape = parts[0].shape();
  if (axis >= shape.size()) shape_error("concat axis out of range");
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != shape.size()) shape_error("concat rank mismatch");
    for (std::size_t d = 0; d < shape.size(); ++d) {
      if (d != axis && p.dim(d) != shape[d]) {
        shape_error("concat: " + shape_str(p.shape()) + " vs " + shape_str(shape));
      }
    }
    total += p.dim(axis);
  }
  shape[axis] = total;
  const AxisSplit s = split_at(shape, axis);
  std::vector<double> out(numel(shape));
  std::vector<std::size_t> widths;
  std::vector<NodePtr> nodes;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t width = p.dim(axis) * s.inner;
    const auto pv = p.values();
    for (std::size_t o = 0; o < s.outer; ++o) {
      std::copy_n(pv.data() + o * width, width, out.data() + o * s.axis * s.inner + offset);
    }
    offset += width;
    widths.push_back(width);
    nodes.push_back(p.node());
  }
  return make_result(std::move(shape), std::move(out), "concat", std::move(nodes),
                     [s, widths = std::move(widths)](Node& self) {
                       std::size_t offset = 0;
                       for (std::size_t k = 0; k < widths.size(); ++k) {
                         Node& p = *self.parents[k];
                         const std::size_t width = widths[k];
                         if (p.requires_grad) {
                           auto& g = grad_of(p);
                           for (std::size_t o = 0; o < s.outer; ++o) {
                             const double* src = self.grad.data() + o * s.axis * s.inner + offset;
                             double* dst = g.data() + o * width;
                             for (std::size_t j = 0; j < width; ++j) dst[j] += src[j];
                           }
                         }
                         offset += width;
                       }
                     });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  if (axis >= x.rank() || start + length > x.dim(axis)) {
    shape_error("slice [" + std::to_string(start) + ", +" + std::to_string(length) + ") on axis " +
                std::to_string(axis) + " of " + shape_str(x.shape()));
  }
  const AxisSplit s = split_at(x.shape(), axis);
  Shape shape = x.shape();
  shape[axis] = length;
  const std::size_t width = length * s.inner;
  const std::size_t offset = start * s.inner;
  std::vector<double> out(s.outer * width);
  const auto xv = x.values();
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(xv.data() + o * s.axis * s.inner + offset, width, out.data() + o * width);
  }
  return make_result(std::move(shape), std::move(out), "slice", {x.node()},
                     [s, width, offset](Node& self) {
                       Node& p = *self.parents[0];
                       if (!p.requires_grad) return;
                       auto& g = grad_of(p);
                       for (std::size_t o = 0; o < s.outer; ++o) {
                         double* dst = g.data() + o * s.axis * s.inner + offset;
                         const double* src = self.grad.data() + o * width;
                         for (std::size_t j = 0; j < width; ++j) dst[j] += src[j];
                       }
                     });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.size()) {
    shape_error("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  std::vector<double> out(x.values().begin(), x.values().end());
  return make_result(std::move(shape), std::move(out), "reshape", {x.node()}, [](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = grad_of(p);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor detach(const Tensor& x) {
  return Tensor::constant(x.shape(), std::vector<double>(x.values().begin(), x.values().end()));
}

// ---------------------------------------------------------------------------
// backward

std::vector<Node*> topological_order(const Tensor& root) {
  // Iterative post-order DFS; parents precede consumers in the result.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  Node* r = root.node().get();
  if (!r->requires_grad) return order;
  stack.emplace_back(r, 0);
  seen.insert(r);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  std::reverse(order.begin(), order.end());
  return order;
}

void backward(const Tensor& loss) {
  if (loss.size() != 1) shape_error("backward needs a scalar loss, got " + shape_str(loss.shape()));
  const auto order = topological_order(loss);
  if (order.empty()) return;
  for (Node* n : order) {
    if (!n->is_parameter) n->grad.assign(n->value.size(), 0.0);
  }
  order.front()->ensure_grad();
  order.front()->grad[0] += 1.0;
  for (Node* n : order) {
    if (n->backward_fn) n->backward_fn(*n);
  }
  for (Node* n : order) {
    if (!n->is_parameter) {
      n->grad.clear();
      n->grad.shrink_to_fit();
    }
  }
}

double grad_check(const std::function<double(std::span<const double>)>& f,
                  const std::function<std::vector<double>(std::span<const double>)>& gradient,
                  std::span<const double> point, double h) {
  std::vector<double> x(point.begin(), point.end());
  const std::vector<double> analytic = gradient(x);
  if (analytic.size() != x.size()) shape_error("grad_check: gradient size mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + h;
    const double fp = f(x);
    x[i] = orig - h;
    const double fm = f(x);
    x[i] = orig;
    const double numeric = (fp - fm) / (2.0 * h);
    worst = std::max(worst, std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric)));
  }
  return worst;
}

double grad_check(const std::function<Tensor()>& loss_fn, std::span<Tensor> params, double h,
                  std::span<const GradCoord> coords) {
  for (auto& p : params) p.zero_grad();
  backward(loss_fn());
  std::vector<GradCoord> todo(coords.begin(), coords.end());
  if (todo.empty()) {
    for (std::size_t k = 0; k < params.size(); ++k) {
      for (std::size_t i = 0; i < params[k].size(); ++i) todo.push_back({k, i});
    }
  }
  double worst = 0.0;
  NoGradGuard no_grad;
  for (const auto& c : todo) {
    auto values = params[c.param].mutable_values();
    const double orig = values[c.index];
    values[c.index] = orig + h;
    const double fp = loss_fn().item();
    values[c.index] = orig - h;
    const double fm = loss_fn().item();
    values[c.index] = orig;
    const double numeric = (fp - fm) / (2.0 * h);
    const double analytic = params[c.param].grad()[c.index];
    worst = std::max(worst, std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric)));
  }
  return worst;
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, std::span<const double> point,
                  double h) {
  Tensor x = Tensor::parameter({point.size()}, std::vector<double>(point.begin(), point.end()));
  std::vector<Tensor> params{x};
  return grad_check([&] { return f(x); }, params, h);
}

namespace fault {
void inject(Kind kind) { g_fault.store(kind); }
Kind active() { return g_fault.load(); }
}  // namespace fault

}  // namespace lionxa::ad
