#include "corrnet/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

namespace corrnet::ops {
namespace {

template <typename R>
using MatR = Eigen::Matrix<R, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename R>
using MapR = Eigen::Map<MatR<R>>;
template <typename R>
using CMapR = Eigen::Map<const MatR<R>>;

template <typename R>
Var<R> output(Tape<R>& tape, Tensor<R> value, std::initializer_list<const Var<R>*> inputs) {
  return Var<R>(std::move(value), tape.wants(inputs));
}

template <typename R>
void require_rank(const Var<R>& v, std::size_t rank, const char* op, const char* what) {
  if (v.value().rank() != rank) {
    throw ShapeError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) +
                     ", got " + shape_str(v.shape()));
  }
}

template <typename R>
void accumulate(const Var<R>& target, const Tensor<R>& delta) {
  if (!target.requires_grad()) return;
  auto& g = target.grad_buffer();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += delta[i];
}

template <typename R, typename Fwd, typename Dx>
Var<R> unary(Tape<R>& tape, const Var<R>& a, const char* name, Fwd fwd, Dx dx) {
  Tensor<R> y(a.shape());
  const auto& av = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = fwd(av[i]);
  auto out = output(tape, std::move(y), {&a});
  if (out.requires_grad()) {
    tape.record(name, [a, out, dx] {
      if (!a.requires_grad() || !out.has_grad()) return;
      auto& ga = a.grad_buffer();
      const auto& gy = out.grad();
      const auto& av = a.value();
      const auto& yv = out.value();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gy[i] * dx(av[i], yv[i]);
    });
  }
  return out;
}

template <typename R>
R stable_sigmoid(R x) {
  if (x >= R(0)) {
    R z = std::exp(-x);
    return R(1) / (R(1) + z);
  }
  R z = std::exp(x);
  return z / (R(1) + z);
}

}  // namespace

// ---- elementwise ---------------------------------------------------------

template <typename R>
Var<R> add(Tape<R>& tape, const Var<R>& a, const Var<R>& b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor<R> y(a.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.value()[i] + b.value()[i];
  auto out = output(tape, std::move(y), {&a, &b});
  if (out.requires_grad()) {
    tape.record("add", [a, b, out] {
      if (!out.has_grad()) return;
      accumulate(a, out.grad());
      accumulate(b, out.grad());
    });
  }
  return out;
}

template <typename R>
Var<R> sub(Tape<R>& tape, const Var<R>& a, const Var<R>& b) {
  require_same_shape(a.value(), b.value(), "sub");
  Tensor<R> y(a.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.value()[i] - b.value()[i];
  auto out = output(tape, std::move(y), {&a, &b});
  if (out.requires_grad()) {
    tape.record("sub", [a, b, out] {
      if (!out.has_grad()) return;
      accumulate(a, out.grad());
      if (b.requires_grad()) {
        auto& gb = b.grad_buffer();
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= out.grad()[i];
      }
    });
  }
  return out;
}

template <typename R>
Var<R> mul(Tape<R>& tape, const Var<R>& a, const Var<R>& b) {
  require_same_shape(a.value(), b.value(), "mul");
  Tensor<R> y(a.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.value()[i] * b.value()[i];
  auto out = output(tape, std::move(y), {&a, &b});
  if (out.requires_grad()) {
    tape.record("mul", [a, b, out] {
      if (!out.has_grad()) return;
      const auto& gy = out.grad();
      if (a.requires_grad()) {
        auto& ga = a.grad_buffer();
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gy[i] * b.value()[i];
      }
      if (b.requires_grad()) {
        auto& gb = b.grad_buffer();
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += gy[i] * a.value()[i];
      }
    });
  }
  return out;
}

template <typename R>
Var<R> scale(Tape<R>& tape, const Var<R>& a, R factor) {
  return unary(
      tape, a, "scale", [factor](R x) { return factor * x; }, [factor](R, R) { return factor; });
}

template <typename R>
Var<R> sub_const(Tape<R>& tape, const Var<R>& a, R c) {
  return unary(
      tape, a, "sub_const", [c](R x) { return x - c; }, [](R, R) { return R(1); });
}

template <typename R>
Var<R> sigmoid(Tape<R>& tape, const Var<R>& a) {
  return unary(
      tape, a, "sigmoid", [](R x) { return stable_sigmoid(x); },
      [](R, R y) { return y * (R(1) - y); });
}

template <typename R>
Var<R> tanh(Tape<R>& tape, const Var<R>& a) {
  return unary(
      tape, a, "tanh", [](R x) { return std::tanh(x); }, [](R, R y) { return R(1) - y * y; });
}

template <typename R>
Var<R> relu(Tape<R>& tape, const Var<R>& a) {
  return unary(
      tape, a, "relu", [](R x) { return x > R(0) ? x : R(0); },
      [](R x, R) { return x > R(0) ? R(1) : R(0); });
}

template <typename R>
Var<R> scale_by(Tape<R>& tape, const Var<R>& s, const Var<R>& a) {
  if (s.value().size() != 1) throw ShapeError("scale_by: factor must hold one value, got " + shape_str(s.shape()));
  const R sv = s.value()[0];
  Tensor<R> y(a.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = sv * a.value()[i];
  auto out = output(tape, std::move(y), {&s, &a});
  if (out.requires_grad()) {
    tape.record("scale_by", [s, a, out] {
      if (!out.has_grad()) return;
      const auto& gy = out.grad();
      if (s.requires_grad()) {
        R acc = 0;
        for (std::size_t i = 0; i < gy.size(); ++i) acc += gy[i] * a.value()[i];
        s.grad_buffer()[0] += acc;
      }
      if (a.requires_grad()) {
        const R sv = s.value()[0];
        auto& ga = a.grad_buffer();
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += sv * gy[i];
      }
    });
  }
  return out;
}

template <typename R>
Var<R> weighted_sum(Tape<R>& tape, std::span<const Var<R>> xs, const Var<R>& w) {
  if (xs.empty()) throw ShapeError("weighted_sum: no operands");
  if (w.value().size() != xs.size()) {
    throw ShapeError("weighted_sum: " + std::to_string(xs.size()) + " operands but weights " +
                     shape_str(w.shape()));
  }
  Tensor<R> y(xs[0].shape());
  bool any_grad = tape.wants({&w});
  for (std::size_t k = 0; k < xs.size(); ++k) {
    require_same_shape(xs[0].value(), xs[k].value(), "weighted_sum");
    const R wk = w.value()[k];
    const auto& xv = xs[k].value();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += wk * xv[i];
    any_grad = any_grad || tape.wants({&xs[k]});
  }
  Var<R> out(std::move(y), any_grad);
  if (out.requires_grad()) {
    std::vector<Var<R>> inputs(xs.begin(), xs.end());
    tape.record("weighted_sum", [inputs, w, out] {
      if (!out.has_grad()) return;
      const auto& gy = out.grad();
      for (std::size_t k = 0; k < inputs.size(); ++k) {
        const auto& xk = inputs[k];
        if (w.requires_grad()) {
          R acc = 0;
          for (std::size_t i = 0; i < gy.size(); ++i) acc += gy[i] * xk.value()[i];
          w.grad_buffer()[k] += acc;
        }
        if (xk.requires_grad()) {
          const R wk = w.value()[k];
          auto& gx = xk.grad_buffer();
          for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += wk * gy[i];
        }
      }
    });
  }
  return out;
}

// ---- reductions ----------------------------------------------------------

template <typename R>
Var<R> sum(Tape<R>& tape, const Var<R>& a) {
  R acc = 0;
  for (auto v : a.value().data()) acc += v;
  auto out = output(tape, Tensor<R>::scalar(acc), {&a});
  if (out.requires_grad()) {
    tape.record("sum", [a, out] {
      if (!out.has_grad() || !a.requires_grad()) return;
      const R g = out.grad()[0];
      for (auto& v : a.grad_buffer().data()) v += g;
    });
  }
  return out;
}

template <typename R>
Var<R> mean(Tape<R>& tape, const Var<R>& a) {
  return scale(tape, sum(tape, a), R(1) / static_cast<R>(a.value().size()));
}

template <typename R>
Var<R> dot_const(Tape<R>& tape, const Var<R>& a, const Tensor<R>& weights) {
  require_same_shape(a.value(), weights, "dot_const");
  R acc = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) acc += a.value()[i] * weights[i];
  auto out = output(tape, Tensor<R>::scalar(acc), {&a});
  if (out.requires_grad()) {
    tape.record("dot_const", [a, weights, out] {
      if (!out.has_grad() || !a.requires_grad()) return;
      const R g = out.grad()[0];
      auto& ga = a.grad_buffer();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g * weights[i];
    });
  }
  return out;
}

// ---- convolution and pooling --------------------------------------------

namespace {

struct ConvGeometry {
  std::size_t T, C, H, W;
  std::size_t Co, Cg, Cog, groups;
  std::size_t kt, kh, kw;
  std::size_t dt, dh, dw;
  std::size_t pt, ph, pw;
  std::size_t kvol() const { return kt * kh * kw; }
  std::size_t rows() const { return Cg * kvol(); }
  std::size_t cols() const { return T * H * W; }
};

template <typename R>
ConvGeometry conv_geometry(const Var<R>& x, const Var<R>& w, const Conv3dOptions& o) {
  require_rank(x, 4, "conv3d", "input");
  require_rank(w, 5, "conv3d", "weights");
  ConvGeometry g{};
  g.T = x.shape()[0];
  g.C = x.shape()[1];
  g.H = x.shape()[2];
  g.W = x.shape()[3];
  g.Co = w.shape()[0];
  g.groups = o.groups;
  if (g.groups == 0 || g.C % g.groups != 0 || g.Co % g.groups != 0) {
    throw ShapeError("conv3d: channels " + std::to_string(g.C) + "->" + std::to_string(g.Co) +
                     " not divisible by groups " + std::to_string(g.groups));
  }
  g.Cg = g.C / g.groups;
  g.Cog = g.Co / g.groups;
  if (w.shape()[1] != g.Cg) {
    throw ShapeError("conv3d: weights " + shape_str(w.shape()) + " expect " + std::to_string(g.Cg) +
                     " input channels per group");
  }
  g.kt = w.shape()[2];
  g.kh = w.shape()[3];
  g.kw = w.shape()[4];
  if (g.kt % 2 == 0 || g.kh % 2 == 0 || g.kw % 2 == 0) {
    throw ShapeError("conv3d: kernel extents must be odd, got " + shape_str(w.shape()));
  }
  g.dt = o.dilation[0];
  g.dh = o.dilation[1];
  g.dw = o.dilation[2];
  g.pt = o.padding[0];
  g.ph = o.padding[1];
  g.pw = o.padding[2];
  if (g.dt == 0 || g.dh == 0 || g.dw == 0) throw ShapeError("conv3d: dilation must be positive");
  if (2 * g.pt != g.dt * (g.kt - 1) || 2 * g.ph != g.dh * (g.kh - 1) || 2 * g.pw != g.dw * (g.kw - 1)) {
    throw ShapeError("conv3d: padding must preserve the input extents");
  }
  return g;
}

// col[(c, a, b, e), (t, h, w)] for one group.
template <typename R>
void im2col(const Tensor<R>& x, const ConvGeometry& g, std::size_t group, MatR<R>& col) {
  col.setZero(g.rows(), g.cols());
  const R* xp = x.ptr();
  const std::size_t HW = g.H * g.W;
  for (std::size_t c = 0; c < g.Cg; ++c) {
    const std::size_t ch = group * g.Cg + c;
    for (std::size_t a = 0; a < g.kt; ++a) {
      for (std::size_t b = 0; b < g.kh; ++b) {
        for (std::size_t e = 0; e < g.kw; ++e) {
          const std::size_t row = ((c * g.kt + a) * g.kh + b) * g.kw + e;
          R* dst = col.data() + row * g.cols();
          const long ot = long(a * g.dt) - long(g.pt);
          const long oh = long(b * g.dh) - long(g.ph);
          const long ow = long(e * g.dw) - long(g.pw);
          for (std::size_t t = 0; t < g.T; ++t) {
            const long st = long(t) + ot;
            if (st < 0 || st >= long(g.T)) continue;
            const R* src = xp + (std::size_t(st) * g.C + ch) * HW;
            for (std::size_t h = 0; h < g.H; ++h) {
              const long sh = long(h) + oh;
              if (sh < 0 || sh >= long(g.H)) continue;
              const std::size_t base = (t * g.H + h) * g.W;
              const std::size_t w0 = ow < 0 ? std::size_t(-ow) : 0;
              const std::size_t w1 = ow > 0 ? g.W - std::min<std::size_t>(g.W, std::size_t(ow)) : g.W;
              for (std::size_t w = w0; w < w1; ++w) {
                dst[base + w] = src[std::size_t(sh) * g.W + std::size_t(long(w) + ow)];
              }
            }
          }
        }
      }
    }
  }
}

template <typename R>
void col2im_add(const MatR<R>& col, const ConvGeometry& g, std::size_t group, Tensor<R>& dx) {
  R* xp = dx.ptr();
  const std::size_t HW = g.H * g.W;
  for (std::size_t c = 0; c < g.Cg; ++c) {
    const std::size_t ch = group * g.Cg + c;
    for (std::size_t a = 0; a < g.kt; ++a) {
      for (std::size_t b = 0; b < g.kh; ++b) {
        for (std::size_t e = 0; e < g.kw; ++e) {
          const std::size_t row = ((c * g.kt + a) * g.kh + b) * g.kw + e;
          const R* src = col.data() + row * g.cols();
          const long ot = long(a * g.dt) - long(g.pt);
          const long oh = long(b * g.dh) - long(g.ph);
          const long ow = long(e * g.dw) - long(g.pw);
          for (std::size_t t = 0; t < g.T; ++t) {
            const long st = long(t) + ot;
            if (st < 0 || st >= long(g.T)) continue;
            R* dst = xp + (std::size_t(st) * g.C + ch) * HW;
            for (std::size_t h = 0; h < g.H; ++h) {
              const long sh = long(h) + oh;
              if (sh < 0 || sh >= long(g.H)) continue;
              const std::size_t base = (t * g.H + h) * g.W;
              const std::size_t w0 = ow < 0 ? std::size_t(-ow) : 0;
              const std::size_t w1 = ow > 0 ? g.W - std::min<std::size_t>(g.W, std::size_t(ow)) : g.W;
              for (std::size_t w = w0; w < w1; ++w) {
                dst[std::size_t(sh) * g.W + std::size_t(long(w) + ow)] += src[base + w];
              }
            }
          }
        }
      }
    }
  }
}

template <typename R>
void check_bias(const Var<R>& bias, std::size_t channels, const char* op) {
  if (bias.defined() && (bias.value().rank() != 1 || bias.shape()[0] != channels)) {
    throw ShapeError(std::string(op) + ": bias " + shape_str(bias.shape()) + " expected [" +
                     std::to_string(channels) + "]");
  }
}

}  // namespace

template <typename R>
Var<R> conv3d(Tape<R>& tape, const Var<R>& x, const Var<R>& weights, const Var<R>& bias,
              const Conv3dOptions& opts) {
  const ConvGeometry g = conv_geometry(x, weights, opts);
  check_bias(bias, g.Co, "conv3d");
  const std::size_t HW = g.H * g.W;
  Tensor<R> y({g.T, g.Co, g.H, g.W});
  std::vector<MatR<R>> cols(g.groups);
  MatR<R> yg;
  for (std::size_t gi = 0; gi < g.groups; ++gi) {
    im2col(x.value(), g, gi, cols[gi]);
    CMapR<R> wg(weights.value().ptr() + gi * g.Cog * g.rows(), g.Cog, g.rows());
    yg.noalias() = wg * cols[gi];
    for (std::size_t o = 0; o < g.Cog; ++o) {
      const std::size_t co = gi * g.Cog + o;
      const R b = bias.defined() ? bias.value()[co] : R(0);
      for (std::size_t t = 0; t < g.T; ++t) {
        R* dst = y.ptr() + (t * g.Co + co) * HW;
        const R* src = yg.data() + o * g.cols() + t * HW;
        for (std::size_t i = 0; i < HW; ++i) dst[i] = src[i] + b;
      }
    }
  }
  auto out = output(tape, std::move(y), {&x, &weights, &bias});
  if (out.requires_grad()) {
    tape.record("conv3d", [x, weights, bias, out, g, cols = std::move(cols)] {
      if (!out.has_grad()) return;
      const std::size_t HW = g.H * g.W;
      const auto& gy = out.grad();
      MatR<R> dyg(g.Cog, g.cols());
      MatR<R> dcol;
      for (std::size_t gi = 0; gi < g.groups; ++gi) {
        for (std::size_t o = 0; o < g.Cog; ++o) {
          const std::size_t co = gi * g.Cog + o;
          for (std::size_t t = 0; t < g.T; ++t) {
            const R* src = gy.ptr() + (t * g.Co + co) * HW;
            std::copy(src, src + HW, dyg.data() + o * g.cols() + t * HW);
          }
        }
        if (weights.requires_grad()) {
          MapR<R> dw(weights.grad_buffer().ptr() + gi * g.Cog * g.rows(), g.Cog, g.rows());
          dw.noalias() += dyg * cols[gi].transpose();
        }
        if (bias.requires_grad()) {
          auto& db = bias.grad_buffer();
          for (std::size_t o = 0; o < g.Cog; ++o) db[gi * g.Cog + o] += dyg.row(o).sum();
        }
        if (x.requires_grad()) {
          CMapR<R> wg(weights.value().ptr() + gi * g.Cog * g.rows(), g.Cog, g.rows());
          dcol.noalias() = wg.transpose() * dyg;
          col2im_add(dcol, g, gi, x.grad_buffer());
        }
      }
    });
  }
  return out;
}

template <typename R>
Var<R> conv1x1x1(Tape<R>& tape, const Var<R>& x, const Var<R>& weights, const Var<R>& bias) {
  require_rank(x, 4, "conv1x1x1", "input");
  require_rank(weights, 2, "conv1x1x1", "weights");
  const std::size_t T = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  const std::size_t Co = weights.shape()[0];
  if (weights.shape()[1] != C) {
    throw ShapeError("conv1x1x1: weights " + shape_str(weights.shape()) + " do not match " +
                     std::to_string(C) + " input channels");
  }
  check_bias(bias, Co, "conv1x1x1");
  const std::size_t HW = H * W;
  Tensor<R> y({T, Co, H, W});
  CMapR<R> wm(weights.value().ptr(), Co, C);
  for (std::size_t t = 0; t < T; ++t) {
    CMapR<R> xt(x.value().ptr() + t * C * HW, C, HW);
    MapR<R> yt(y.ptr() + t * Co * HW, Co, HW);
    yt.noalias() = wm * xt;
    if (bias.defined()) {
      for (std::size_t o = 0; o < Co; ++o) yt.row(o).array() += bias.value()[o];
    }
  }
  auto out = output(tape, std::move(y), {&x, &weights, &bias});
  if (out.requires_grad()) {
    tape.record("conv1x1x1", [x, weights, bias, out, T, C, Co, HW] {
      if (!out.has_grad()) return;
      CMapR<R> wm(weights.value().ptr(), Co, C);
      for (std::size_t t = 0; t < T; ++t) {
        CMapR<R> dyt(out.grad().ptr() + t * Co * HW, Co, HW);
        if (weights.requires_grad()) {
          CMapR<R> xt(x.value().ptr() + t * C * HW, C, HW);
          MapR<R> dw(weights.grad_buffer().ptr(), Co, C);
          dw.noalias() += dyt * xt.transpose();
        }
        if (bias.requires_grad()) {
          auto& db = bias.grad_buffer();
          for (std::size_t o = 0; o < Co; ++o) db[o] += dyt.row(o).sum();
        }
        if (x.requires_grad()) {
          MapR<R> dxt(x.grad_buffer().ptr() + t * C * HW, C, HW);
          dxt.noalias() += wm.transpose() * dyt;
        }
      }
    });
  }
  return out;
}

template <typename R>
Var<R> conv1d(Tape<R>& tape, const Var<R>& x, const Var<R>& weights, const Var<R>& bias,
              std::size_t padding) {
  require_rank(x, 2, "conv1d", "input");
  require_rank(weights, 3, "conv1d", "weights");
  const std::size_t T = x.shape()[0], C = x.shape()[1];
  const std::size_t Co = weights.shape()[0], K = weights.shape()[2];
  if (weights.shape()[1] != C) {
    throw ShapeError("conv1d: weights " + shape_str(weights.shape()) + " do not match " +
                     std::to_string(C) + " input channels");
  }
  check_bias(bias, Co, "conv1d");
  if (T + 2 * padding < K) throw ShapeError("conv1d: sequence of length " + std::to_string(T) + " too short");
  const std::size_t To = T + 2 * padding - K + 1;
  // col[t, (c, k)] = x[t + k - p, c]
  MatR<R> col = MatR<R>::Zero(To, C * K);
  for (std::size_t t = 0; t < To; ++t) {
    for (std::size_t k = 0; k < K; ++k) {
      const long s = long(t + k) - long(padding);
      if (s < 0 || s >= long(T)) continue;
      for (std::size_t c = 0; c < C; ++c) col(t, c * K + k) = x.value()[std::size_t(s) * C + c];
    }
  }
  CMapR<R> wm(weights.value().ptr(), Co, C * K);
  Tensor<R> y({To, Co});
  MapR<R> ym(y.ptr(), To, Co);
  ym.noalias() = col * wm.transpose();
  if (bias.defined()) {
    for (std::size_t t = 0; t < To; ++t)
      for (std::size_t o = 0; o < Co; ++o) ym(t, o) += bias.value()[o];
  }
  auto out = output(tape, std::move(y), {&x, &weights, &bias});
  if (out.requires_grad()) {
    tape.record("conv1d", [x, weights, bias, out, col = std::move(col), T, C, Co, K, To, padding] {
      if (!out.has_grad()) return;
      CMapR<R> dy(out.grad().ptr(), To, Co);
      if (weights.requires_grad()) {
        MapR<R> dw(weights.grad_buffer().ptr(), Co, C * K);
        dw.noalias() += dy.transpose() * col;
      }
      if (bias.requires_grad()) {
        auto& db = bias.grad_buffer();
        for (std::size_t o = 0; o < Co; ++o) db[o] += dy.col(o).sum();
      }
      if (x.requires_grad()) {
        CMapR<R> wm(weights.value().ptr(), Co, C * K);
        MatR<R> dcol = dy * wm;
        auto& dx = x.grad_buffer();
        for (std::size_t t = 0; t < To; ++t) {
          for (std::size_t k = 0; k < K; ++k) {
            const long s = long(t + k) - long(padding);
            if (s < 0 || s >= long(T)) continue;
            for (std::size_t c = 0; c < C; ++c) dx[std::size_t(s) * C + c] += dcol(t, c * K + k);
          }
        }
      }
    });
  }
  return out;
}

template <typename R>
Var<R> max_pool1d(Tape<R>& tape, const Var<R>& x, std::size_t kernel) {
  require_rank(x, 2, "max_pool1d", "input");
  const std::size_t T = x.shape()[0], C = x.shape()[1];
  if (kernel == 0 || T < kernel) {
    throw ShapeError("max_pool1d: sequence length " + std::to_string(T) + " shorter than kernel " +
                     std::to_string(kernel));
  }
  const std::size_t To = T / kernel;
  Tensor<R> y({To, C});
  std::vector<std::size_t> argmax(To * C);
  for (std::size_t t = 0; t < To; ++t) {
    for (std::size_t c = 0; c < C; ++c) {
      std::size_t best = t * kernel * C + c;
      for (std::size_t k = 1; k < kernel; ++k) {
        const std::size_t idx = (t * kernel + k) * C + c;
        if (x.value()[idx] > x.value()[best]) best = idx;
      }
      y[t * C + c] = x.value()[best];
      argmax[t * C + c] = best;
    }
  }
  auto out = output(tape, std::move(y), {&x});
  if (out.requires_grad()) {
    tape.record("max_pool1d", [x, out, argmax = std::move(argmax)] {
      if (!out.has_grad() || !x.requires_grad()) return;
      auto& dx = x.grad_buffer();
      for (std::size_t i = 0; i < argmax.size(); ++i) dx[argmax[i]] += out.grad()[i];
    });
  }
  return out;
}

template <typename R>
Var<R> max_pool2d(Tape<R>& tape, const Var<R>& x, std::size_t kernel) {
  require_rank(x, 4, "max_pool2d", "input");
  const std::size_t T = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  if (kernel == 0 || H < kernel || W < kernel) {
    throw ShapeError("max_pool2d: frame " + std::to_string(H) + "x" + std::to_string(W) +
                     " smaller than kernel " + std::to_string(kernel));
  }
  const std::size_t Ho = H / kernel, Wo = W / kernel;
  Tensor<R> y({T, C, Ho, Wo});
  std::vector<std::size_t> argmax(y.size());
  std::size_t n = 0;
  for (std::size_t tc = 0; tc < T * C; ++tc) {
    const std::size_t base = tc * H * W;
    for (std::size_t i = 0; i < Ho; ++i) {
      for (std::size_t j = 0; j < Wo; ++j, ++n) {
        std::size_t best = base + (i * kernel) * W + j * kernel;
        for (std::size_t a = 0; a < kernel; ++a)
          for (std::size_t b = 0; b < kernel; ++b) {
            const std::size_t idx = base + (i * kernel + a) * W + j * kernel + b;
            if (x.value()[idx] > x.value()[best]) best = idx;
          }
        y[n] = x.value()[best];
        argmax[n] = best;
      }
    }
  }
  auto out = output(tape, std::move(y), {&x});
  if (out.requires_grad()) {
    tape.record("max_pool2d", [x, out, argmax = std::move(argmax)] {
      if (!out.has_grad() || !x.requires_grad()) return;
      auto& dx = x.grad_buffer();
      for (std::size_t i = 0; i < argmax.size(); ++i) dx[argmax[i]] += out.grad()[i];
    });
  }
  return out;
}

template <typename R>
Var<R> spatial_mean(Tape<R>& tape, const Var<R>& x) {
  require_rank(x, 4, "spatial_mean", "input");
  const std::size_t T = x.shape()[0], C = x.shape()[1], HW = x.shape()[2] * x.shape()[3];
  Tensor<R> y({T, C});
  const R inv = R(1) / static_cast<R>(HW);
  for (std::size_t tc = 0; tc < T * C; ++tc) {
    R acc = 0;
    for (std::size_t i = 0; i < HW; ++i) acc += x.value()[tc * HW + i];
    y[tc] = acc * inv;
  }
  auto out = output(tape, std::move(y), {&x});
  if (out.requires_grad()) {
    tape.record("spatial_mean", [x, out, T, C, HW, inv] {
      if (!out.has_grad() || !x.requires_grad()) return;
      auto& dx = x.grad_buffer();
      for (std::size_t tc = 0; tc < T * C; ++tc) {
        const R g = out.grad()[tc] * inv;
        for (std::size_t i = 0; i < HW; ++i) dx[tc * HW + i] += g;
      }
    });
  }
  return out;
}

// ---- dense / sequence ----------------------------------------------------

template <typename R>
Var<R> linear(Tape<R>& tape, const Var<R>& x, const Var<R>& weights, const Var<R>& bias) {
  require_rank(x, 2, "linear", "input");
  require_rank(weights, 2, "linear", "weights");
  const std::size_t T = x.shape()[0], D = x.shape()[1], O = weights.shape()[0];
  if (weights.shape()[1] != D) {
    throw ShapeError("linear: weights " + shape_str(weights.shape()) + " do not match input " +
                     shape_str(x.shape()));
  }
  check_bias(bias, O, "linear");
  Tensor<R> y({T, O});
  CMapR<R> xm(x.value().ptr(), T, D);
  CMapR<R> wm(weights.value().ptr(), O, D);
  MapR<R> ym(y.ptr(), T, O);
  ym.noalias() = xm * wm.transpose();
  if (bias.defined()) {
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t o = 0; o < O; ++o) ym(t, o) += bias.value()[o];
  }
  auto out = output(tape, std::move(y), {&x, &weights, &bias});
  if (out.requires_grad()) {
    tape.record("linear", [x, weights, bias, out, T, D, O] {
      if (!out.has_grad()) return;
      CMapR<R> dy(out.grad().ptr(), T, O);
      if (weights.requires_grad()) {
        CMapR<R> xm(x.value().ptr(), T, D);
        MapR<R> dw(weights.grad_buffer().ptr(), O, D);
        dw.noalias() += dy.transpose() * xm;
      }
      if (bias.requires_grad()) {
        auto& db = bias.grad_buffer();
        for (std::size_t o = 0; o < O; ++o) db[o] += dy.col(o).sum();
      }
      if (x.requires_grad()) {
        CMapR<R> wm(weights.value().ptr(), O, D);
        MapR<R> dx(x.grad_buffer().ptr(), T, D);
        dx.noalias() += dy * wm;
      }
    });
  }
  return out;
}

template <typename R>
Var<R> select_row(Tape<R>& tape, const Var<R>& x, std::size_t row) {
  require_rank(x, 2, "select_row", "input");
  const std::size_t T = x.shape()[0], D = x.shape()[1];
  if (row >= T) throw ShapeError("select_row: row " + std::to_string(row) + " out of range for " + shape_str(x.shape()));
  Tensor<R> y({1, D});
  std::copy_n(x.value().ptr() + row * D, D, y.ptr());
  auto out = output(tape, std::move(y), {&x});
  if (out.requires_grad()) {
    tape.record("select_row", [x, out, row, D] {
      if (!out.has_grad() || !x.requires_grad()) return;
      R* dx = x.grad_buffer().ptr() + row * D;
      for (std::size_t i = 0; i < D; ++i) dx[i] += out.grad()[i];
    });
  }
  return out;
}

template <typename R>
Var<R> concat_rows(Tape<R>& tape, std::span<const Var<R>> rows) {
  if (rows.empty()) throw ShapeError("concat_rows: no operands");
  const std::size_t D = rows[0].shape().back();
  std::size_t T = 0;
  bool any_grad = false;
  for (const auto& r : rows) {
    require_rank(r, 2, "concat_rows", "operand");
    if (r.shape()[1] != D) throw ShapeError("concat_rows: width mismatch " + shape_str(r.shape()));
    T += r.shape()[0];
    any_grad = any_grad || tape.wants({&r});
  }
  Tensor<R> y({T, D});
  std::size_t off = 0;
  for (const auto& r : rows) {
    std::copy(r.value().data().begin(), r.value().data().end(), y.ptr() + off);
    off += r.value().size();
  }
  Var<R> out(std::move(y), any_grad);
  if (out.requires_grad()) {
    std::vector<Var<R>> inputs(rows.begin(), rows.end());
    tape.record("concat_rows", [inputs, out] {
      if (!out.has_grad()) return;
      std::size_t off = 0;
      for (const auto& r : inputs) {
        if (r.requires_grad()) {
          auto& g = r.grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad()[off + i];
        }
        off += r.value().size();
      }
    });
  }
  return out;
}

template <typename R>
Var<R> concat_cols(Tape<R>& tape, const Var<R>& a, const Var<R>& b) {
  require_rank(a, 2, "concat_cols", "lhs");
  require_rank(b, 2, "concat_cols", "rhs");
  const std::size_t T = a.shape()[0], Da = a.shape()[1], Db = b.shape()[1];
  if (b.shape()[0] != T) throw ShapeError("concat_cols: row mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<R> y({T, Da + Db});
  for (std::size_t t = 0; t < T; ++t) {
    std::copy_n(a.value().ptr() + t * Da, Da, y.ptr() + t * (Da + Db));
    std::copy_n(b.value().ptr() + t * Db, Db, y.ptr() + t * (Da + Db) + Da);
  }
  auto out = output(tape, std::move(y), {&a, &b});
  if (out.requires_grad()) {
    tape.record("concat_cols", [a, b, out, T, Da, Db] {
      if (!out.has_grad()) return;
      const R* g = out.grad().ptr();
      if (a.requires_grad()) {
        R* ga = a.grad_buffer().ptr();
        for (std::size_t t = 0; t < T; ++t)
          for (std::size_t i = 0; i < Da; ++i) ga[t * Da + i] += g[t * (Da + Db) + i];
      }
      if (b.requires_grad()) {
        R* gb = b.grad_buffer().ptr();
        for (std::size_t t = 0; t < T; ++t)
          for (std::size_t i = 0; i < Db; ++i) gb[t * Db + i] += g[t * (Da + Db) + Da + i];
      }
    });
  }
  return out;
}

template <typename R>
Var<R> slice_cols(Tape<R>& tape, const Var<R>& x, std::size_t start, std::size_t count) {
  require_rank(x, 2, "slice_cols", "input");
  const std::size_t T = x.shape()[0], D = x.shape()[1];
  if (count == 0 || start + count > D) {
    throw ShapeError("slice_cols: columns [" + std::to_string(start) + ", " + std::to_string(start + count) +
                     ") out of range for " + shape_str(x.shape()));
  }
  Tensor<R> y({T, count});
  for (std::size_t t = 0; t < T; ++t) std::copy_n(x.value().ptr() + t * D + start, count, y.ptr() + t * count);
  auto out = output(tape, std::move(y), {&x});
  if (out.requires_grad()) {
    tape.record("slice_cols", [x, out, T, D, start, count] {
      if (!out.has_grad() || !x.requires_grad()) return;
      R* gx = x.grad_buffer().ptr();
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t i = 0; i < count; ++i) gx[t * D + start + i] += out.grad()[t * count + i];
    });
  }
  return out;
}

template <typename R>
Var<R> reverse_rows(Tape<R>& tape, const Var<R>& x) {
  require_rank(x, 2, "reverse_rows", "input");
  const std::size_t T = x.shape()[0], D = x.shape()[1];
  Tensor<R> y({T, D});
  for (std::size_t t = 0; t < T; ++t) std::copy_n(x.value().ptr() + (T - 1 - t) * D, D, y.ptr() + t * D);
  auto out = output(tape, std::move(y), {&x});
  if (out.requires_grad()) {
    tape.record("reverse_rows", [x, out, T, D] {
      if (!out.has_grad() || !x.requires_grad()) return;
      R* gx = x.grad_buffer().ptr();
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t i = 0; i < D; ++i) gx[(T - 1 - t) * D + i] += out.grad()[t * D + i];
    });
  }
  return out;
}

namespace {

template <typename R>
void log_softmax_row(const R* x, R* y, std::size_t n) {
  R m = *std::max_element(x, x + n);
  R acc = 0;
  for (std::size_t i = 0; i < n; ++i) acc += std::exp(x[i] - m);
  const R lse = m + std::log(acc);
  for (std::size_t i = 0; i < n; ++i) y[i] = x[i] - lse;
}

}  // namespace

template <typename R>
Var<R> log_softmax_rows(Tape<R>& tape, const Var<R>& x) {
  require_rank(x, 2, "log_softmax_rows", "input");
  const std::size_t T = x.shape()[0], V = x.shape()[1];
  Tensor<R> y({T, V});
  for (std::size_t t = 0; t < T; ++t) log_softmax_row(x.value().ptr() + t * V, y.ptr() + t * V, V);
  auto out = output(tape, std::move(y), {&x});
  if (out.requires_grad()) {
    tape.record("log_softmax_rows", [x, out, T, V] {
      if (!out.has_grad() || !x.requires_grad()) return;
      R* gx = x.grad_buffer().ptr();
      for (std::size_t t = 0; t < T; ++t) {
        const R* gy = out.grad().ptr() + t * V;
        const R* yv = out.value().ptr() + t * V;
        R s = 0;
        for (std::size_t i = 0; i < V; ++i) s += gy[i];
        for (std::size_t i = 0; i < V; ++i) gx[t * V + i] += gy[i] - std::exp(yv[i]) * s;
      }
    });
  }
  return out;
}

template <typename R>
Var<R> kl_rows(Tape<R>& tape, const Var<R>& p_logits, const Var<R>& q_logits) {
  require_rank(p_logits, 2, "kl_rows", "p");
  require_same_shape(p_logits.value(), q_logits.value(), "kl_rows");
  const std::size_t T = p_logits.shape()[0], V = p_logits.shape()[1];
  Tensor<R> logp({T, V}), logq({T, V});
  std::vector<R> row_kl(T);
  R total = 0;
  for (std::size_t t = 0; t < T; ++t) {
    log_softmax_row(p_logits.value().ptr() + t * V, logp.ptr() + t * V, V);
    log_softmax_row(q_logits.value().ptr() + t * V, logq.ptr() + t * V, V);
    R kl = 0;
    for (std::size_t i = 0; i < V; ++i) {
      const R lp = logp[t * V + i];
      kl += std::exp(lp) * (lp - logq[t * V + i]);
    }
    row_kl[t] = kl;
    total += kl;
  }
  auto out = output(tape, Tensor<R>::scalar(total / static_cast<R>(T)), {&p_logits, &q_logits});
  if (out.requires_grad()) {
    tape.record("kl_rows", [p_logits, q_logits, out, logp = std::move(logp), logq = std::move(logq),
                            row_kl = std::move(row_kl), T, V] {
      if (!out.has_grad()) return;
      const R g = out.grad()[0] / static_cast<R>(T);
      for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t i = 0; i < V; ++i) {
          const std::size_t k = t * V + i;
          const R p = std::exp(logp[k]);
          const R q = std::exp(logq[k]);
          if (p_logits.requires_grad()) p_logits.grad_buffer()[k] += g * p * (logp[k] - logq[k] - row_kl[t]);
          if (q_logits.requires_grad()) q_logits.grad_buffer()[k] += g * (q - p);
        }
      }
    });
  }
  return out;
}

#define CORRNET_INSTANTIATE_OPS(R)                                                                \
  template Var<R> add(Tape<R>&, const Var<R>&, const Var<R>&);                                     \
  template Var<R> sub(Tape<R>&, const Var<R>&, const Var<R>&);                                     \
  template Var<R> mul(Tape<R>&, const Var<R>&, const Var<R>&);                                     \
  template Var<R> scale(Tape<R>&, const Var<R>&, R);                                               \
  template Var<R> sub_const(Tape<R>&, const Var<R>&, R);                                           \
  template Var<R> sigmoid(Tape<R>&, const Var<R>&);                                                \
  template Var<R> tanh(Tape<R>&, const Var<R>&);                                                   \
  template Var<R> relu(Tape<R>&, const Var<R>&);                                                   \
  template Var<R> scale_by(Tape<R>&, const Var<R>&, const Var<R>&);                                \
  template Var<R> weighted_sum(Tape<R>&, std::span<const Var<R>>, const Var<R>&);                  \
  template Var<R> sum(Tape<R>&, const Var<R>&);                                                    \
  template Var<R> mean(Tape<R>&, const Var<R>&);                                                   \
  template Var<R> dot_const(Tape<R>&, const Var<R>&, const Tensor<R>&);                            \
  template Var<R> conv3d(Tape<R>&, const Var<R>&, const Var<R>&, const Var<R>&, const Conv3dOptions&); \
  template Var<R> conv1x1x1(Tape<R>&, const Var<R>&, const Var<R>&, const Var<R>&);                \
  template Var<R> conv1d(Tape<R>&, const Var<R>&, const Var<R>&, const Var<R>&, std::size_t);      \
  template Var<R> max_pool1d(Tape<R>&, const Var<R>&, std::size_t);                                \
  template Var<R> max_pool2d(Tape<R>&, const Var<R>&, std::size_t);                                \
  template Var<R> spatial_mean(Tape<R>&, const Var<R>&);                                           \
  template Var<R> linear(Tape<R>&, const Var<R>&, const Var<R>&, const Var<R>&);                   \
  template Var<R> select_row(Tape<R>&, const Var<R>&, std::size_t);                                \
  template Var<R> concat_rows(Tape<R>&, std::span<const Var<R>>);                                  \
  template Var<R> concat_cols(Tape<R>&, const Var<R>&, const Var<R>&);                             \
  template Var<R> slice_cols(Tape<R>&, const Var<R>&, std::size_t, std::size_t);                   \
  template Var<R> reverse_rows(Tape<R>&, const Var<R>&);                                           \
  template Var<R> log_softmax_rows(Tape<R>&, const Var<R>&);                                       \
  template Var<R> kl_rows(Tape<R>&, const Var<R>&, const Var<R>&);

CORRNET_INSTANTIATE_OPS(float)
CORRNET_INSTANTIATE_OPS(double)

}  // namespace corrnet::ops
