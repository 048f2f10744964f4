#include "corrnet/correlation.hpp"

#include <Eigen/Dense>

#include "corrnet/ops.hpp"

namespace corrnet::correlation {

void CorrelationConfig::validate(std::size_t H, std::size_t W) const {
  if (full()) return;
  if (neighborhood % 2 == 0) {
    throw std::invalid_argument("correlation neighborhood must be odd, got " + std::to_string(neighborhood));
  }
  if (neighborhood > 2 * std::max(H, W) - 1) {
    throw std::invalid_argument("correlation neighborhood " + std::to_string(neighborhood) +
                                " exceeds 2*max(H,W)-1 for a " + std::to_string(H) + "x" + std::to_string(W) +
                                " frame");
  }
}

std::pair<std::size_t, std::size_t> CorrelationConfig::window(std::size_t H, std::size_t W) const {
  if (full()) return {H, W};
  return {neighborhood, neighborhood};
}

template <typename R>
CorrelationParams<R> CorrelationParams<R>::create(ParameterSet<R>& params, const std::string& prefix) {
  CorrelationParams p;
  p.beta_next = params.add(prefix + ".beta_next", Tensor<R>::scalar(R(0.5)));
  p.beta_prev = params.add(prefix + ".beta_prev", Tensor<R>::scalar(R(0.5)));
  return p;
}

namespace {

template <typename R>
using MatR = Eigen::Matrix<R, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename R>
using MapR = Eigen::Map<MatR<R>>;
template <typename R>
using CMapR = Eigen::Map<const MatR<R>>;

struct Geometry {
  std::size_t C, H, W, Kh, Kw;
  bool full;
  std::size_t map_size() const { return H * W * Kh * Kw; }
  std::size_t frame_size() const { return C * H * W; }
  // Flat neighbour pixel index for entry (i, j, a, b), or -1 outside the frame.
  long neighbour(std::size_t i, std::size_t j, std::size_t a, std::size_t b) const {
    if (full) return long(a * W + b);
    const long ii = long(i + a) - long(Kh / 2);
    const long jj = long(j + b) - long(Kw / 2);
    if (ii < 0 || jj < 0 || ii >= long(H) || jj >= long(W)) return -1;
    return ii * long(W) + jj;
  }
};

Geometry make_geometry(std::size_t C, std::size_t H, std::size_t W, const CorrelationConfig& cfg) {
  cfg.validate(H, W);
  auto [Kh, Kw] = cfg.window(H, W);
  return {C, H, W, Kh, Kw, cfg.full()};
}

template <typename R>
void affinity_kernel(const R* xt, const R* xu, const Geometry& g, R* out) {
  const std::size_t HW = g.H * g.W;
  const R inv_c = R(1) / static_cast<R>(g.C);
  if (g.full) {
    CMapR<R> a(xt, g.C, HW), b(xu, g.C, HW);
    MapR<R> m(out, HW, HW);
    m.noalias() = a.transpose() * b;
    m *= inv_c;
    return;
  }
  std::size_t n = 0;
  for (std::size_t i = 0; i < g.H; ++i)
    for (std::size_t j = 0; j < g.W; ++j)
      for (std::size_t a = 0; a < g.Kh; ++a)
        for (std::size_t b = 0; b < g.Kw; ++b, ++n) {
          const long q = g.neighbour(i, j, a, b);
          R acc = 0;
          if (q >= 0) {
            for (std::size_t c = 0; c < g.C; ++c) acc += xt[c * HW + i * g.W + j] * xu[c * HW + std::size_t(q)];
          }
          out[n] = acc * inv_c;
        }
}

// Accumulates dL/dx_t and dL/dx_u given dL/dA; either target may be null.
template <typename R>
void affinity_adjoint(const R* xt, const R* xu, const R* dA, const Geometry& g, R* dxt, R* dxu) {
  const std::size_t HW = g.H * g.W;
  const R inv_c = R(1) / static_cast<R>(g.C);
  if (g.full) {
    CMapR<R> a(xt, g.C, HW), b(xu, g.C, HW), d(dA, HW, HW);
    if (dxt) MapR<R>(dxt, g.C, HW).noalias() += inv_c * (b * d.transpose());
    if (dxu) MapR<R>(dxu, g.C, HW).noalias() += inv_c * (a * d);
    return;
  }
  std::size_t n = 0;
  for (std::size_t i = 0; i < g.H; ++i)
    for (std::size_t j = 0; j < g.W; ++j)
      for (std::size_t a = 0; a < g.Kh; ++a)
        for (std::size_t b = 0; b < g.Kw; ++b, ++n) {
          const long q = g.neighbour(i, j, a, b);
          if (q < 0) continue;
          const R d = dA[n] * inv_c;
          for (std::size_t c = 0; c < g.C; ++c) {
            const std::size_t p = c * HW + i * g.W + j;
            const std::size_t u = c * HW + std::size_t(q);
            if (dxt) dxt[p] += d * xu[u];
            if (dxu) dxu[u] += d * xt[p];
          }
        }
}

template <typename R>
void aggregate_kernel(const R* gated, const R* xu, const Geometry& g, R* out) {
  const std::size_t HW = g.H * g.W;
  if (g.full) {
    CMapR<R> m(gated, HW, HW), b(xu, g.C, HW);
    MapR<R>(out, g.C, HW).noalias() = b * m.transpose();
    return;
  }
  std::fill(out, out + g.frame_size(), R(0));
  std::size_t n = 0;
  for (std::size_t i = 0; i < g.H; ++i)
    for (std::size_t j = 0; j < g.W; ++j)
      for (std::size_t a = 0; a < g.Kh; ++a)
        for (std::size_t b = 0; b < g.Kw; ++b, ++n) {
          const long q = g.neighbour(i, j, a, b);
          if (q < 0) continue;
          const R w = gated[n];
          for (std::size_t c = 0; c < g.C; ++c) out[c * HW + i * g.W + j] += w * xu[c * HW + std::size_t(q)];
        }
}

template <typename R>
void aggregate_adjoint(const R* gated, const R* xu, const R* dout, const Geometry& g, R* dgated, R* dxu) {
  const std::size_t HW = g.H * g.W;
  if (g.full) {
    CMapR<R> m(gated, HW, HW), b(xu, g.C, HW), d(dout, g.C, HW);
    if (dgated) MapR<R>(dgated, HW, HW).noalias() += d.transpose() * b;
    if (dxu) MapR<R>(dxu, g.C, HW).noalias() += d * m;
    return;
  }
  std::size_t n = 0;
  for (std::size_t i = 0; i < g.H; ++i)
    for (std::size_t j = 0; j < g.W; ++j)
      for (std::size_t a = 0; a < g.Kh; ++a)
        for (std::size_t b = 0; b < g.Kw; ++b, ++n) {
          const long q = g.neighbour(i, j, a, b);
          if (q < 0) continue;
          R acc = 0;
          for (std::size_t c = 0; c < g.C; ++c) {
            const R dv = dout[c * HW + i * g.W + j];
            acc += dv * xu[c * HW + std::size_t(q)];
            if (dxu) dxu[c * HW + std::size_t(q)] += gated[n] * dv;
          }
          if (dgated) dgated[n] += acc;
        }
}

template <typename R>
void require_frame(const Var<R>& x, const char* op) {
  if (x.value().rank() != 3) throw ShapeError(std::string(op) + ": frame must be [C,H,W], got " + shape_str(x.shape()));
}

template <typename R>
void require_video(const Var<R>& x, const char* op) {
  if (x.value().rank() != 4) throw ShapeError(std::string(op) + ": video must be [T,C,H,W], got " + shape_str(x.shape()));
}

template <typename R>
R* grad_ptr(const Var<R>& v) {
  return v.requires_grad() ? v.grad_buffer().ptr() : nullptr;
}

}  // namespace

template <typename R>
Var<R> affinity(Tape<R>& tape, const Var<R>& x_t, const Var<R>& x_u, const CorrelationConfig& cfg) {
  require_frame(x_t, "affinity");
  require_same_shape(x_t.value(), x_u.value(), "affinity");
  const auto g = make_geometry(x_t.shape()[0], x_t.shape()[1], x_t.shape()[2], cfg);
  Tensor<R> a({g.H, g.W, g.Kh, g.Kw});
  affinity_kernel(x_t.value().ptr(), x_u.value().ptr(), g, a.ptr());
  Var<R> out(std::move(a), tape.wants({&x_t, &x_u}));
  if (out.requires_grad()) {
    tape.record("affinity", [x_t, x_u, out, g] {
      if (!out.has_grad()) return;
      affinity_adjoint(x_t.value().ptr(), x_u.value().ptr(), out.grad().ptr(), g, grad_ptr(x_t), grad_ptr(x_u));
    });
  }
  return out;
}

template <typename R>
Var<R> gate(Tape<R>& tape, const Var<R>& raw) {
  return ops::sub_const(tape, ops::sigmoid(tape, raw), R(0.5));
}

template <typename R>
Var<R> aggregate(Tape<R>& tape, const Var<R>& gated, const Var<R>& x_u, const CorrelationConfig& cfg) {
  require_frame(x_u, "aggregate");
  const auto g = make_geometry(x_u.shape()[0], x_u.shape()[1], x_u.shape()[2], cfg);
  const Shape expect{g.H, g.W, g.Kh, g.Kw};
  if (gated.shape() != expect) {
    throw ShapeError("aggregate: maps " + shape_str(gated.shape()) + " inconsistent with frame, expected " +
                     shape_str(expect));
  }
  Tensor<R> y(x_u.shape());
  aggregate_kernel(gated.value().ptr(), x_u.value().ptr(), g, y.ptr());
  Var<R> out(std::move(y), tape.wants({&gated, &x_u}));
  if (out.requires_grad()) {
    tape.record("aggregate", [gated, x_u, out, g] {
      if (!out.has_grad()) return;
      aggregate_adjoint(gated.value().ptr(), x_u.value().ptr(), out.grad().ptr(), g, grad_ptr(gated),
                        grad_ptr(x_u));
    });
  }
  return out;
}

template <typename R>
Var<R> video_affinity(Tape<R>& tape, const Var<R>& x, int offset, const CorrelationConfig& cfg) {
  require_video(x, "video_affinity");
  const std::size_t T = x.shape()[0];
  const auto g = make_geometry(x.shape()[1], x.shape()[2], x.shape()[3], cfg);
  Tensor<R> a({T, g.H, g.W, g.Kh, g.Kw});
  const R* xp = x.value().ptr();
  for (std::size_t t = 0; t < T; ++t) {
    const long u = long(t) + offset;
    if (u < 0 || u >= long(T)) continue;
    affinity_kernel(xp + t * g.frame_size(), xp + std::size_t(u) * g.frame_size(), g, a.ptr() + t * g.map_size());
  }
  Var<R> out(std::move(a), tape.wants({&x}));
  if (out.requires_grad()) {
    tape.record("video_affinity", [x, out, g, T, offset] {
      if (!out.has_grad() || !x.requires_grad()) return;
      const R* xp = x.value().ptr();
      R* dx = x.grad_buffer().ptr();
      for (std::size_t t = 0; t < T; ++t) {
        const long u = long(t) + offset;
        if (u < 0 || u >= long(T)) continue;
        affinity_adjoint(xp + t * g.frame_size(), xp + std::size_t(u) * g.frame_size(),
                         out.grad().ptr() + t * g.map_size(), g, dx + t * g.frame_size(),
                         dx + std::size_t(u) * g.frame_size());
      }
    });
  }
  return out;
}

template <typename R>
Var<R> video_aggregate(Tape<R>& tape, const Var<R>& gated, const Var<R>& x, int offset,
                       const CorrelationConfig& cfg) {
  require_video(x, "video_aggregate");
  const std::size_t T = x.shape()[0];
  const auto g = make_geometry(x.shape()[1], x.shape()[2], x.shape()[3], cfg);
  const Shape expect{T, g.H, g.W, g.Kh, g.Kw};
  if (gated.shape() != expect) {
    throw ShapeError("video_aggregate: maps " + shape_str(gated.shape()) + " inconsistent with video, expected " +
                     shape_str(expect));
  }
  Tensor<R> y(x.shape());
  const R* xp = x.value().ptr();
  for (std::size_t t = 0; t < T; ++t) {
    const long u = long(t) + offset;
    if (u < 0 || u >= long(T)) continue;
    aggregate_kernel(gated.value().ptr() + t * g.map_size(), xp + std::size_t(u) * g.frame_size(), g,
                     y.ptr() + t * g.frame_size());
  }
  Var<R> out(std::move(y), tape.wants({&gated, &x}));
  if (out.requires_grad()) {
    tape.record("video_aggregate", [gated, x, out, g, T, offset] {
      if (!out.has_grad()) return;
      const R* xp = x.value().ptr();
      R* dg = grad_ptr(gated);
      R* dx = grad_ptr(x);
      for (std::size_t t = 0; t < T; ++t) {
        const long u = long(t) + offset;
        if (u < 0 || u >= long(T)) continue;
        aggregate_adjoint(gated.value().ptr() + t * g.map_size(), xp + std::size_t(u) * g.frame_size(),
                          out.grad().ptr() + t * g.frame_size(), g, dg ? dg + t * g.map_size() : nullptr,
                          dx ? dx + std::size_t(u) * g.frame_size() : nullptr);
      }
    });
  }
  return out;
}

template <typename R>
TrajectoryResult<R> bidirectional(Tape<R>& tape, const Var<R>& x, const CorrelationParams<R>& params,
                                  const CorrelationConfig& cfg) {
  require_video(x, "bidirectional");
  TrajectoryResult<R> r;
  r.gated_next = gate(tape, video_affinity(tape, x, +1, cfg));
  r.gated_prev = gate(tape, video_affinity(tape, x, -1, cfg));
  auto next = ops::scale_by(tape, params.beta_next, video_aggregate(tape, r.gated_next, x, +1, cfg));
  auto prev = ops::scale_by(tape, params.beta_prev, video_aggregate(tape, r.gated_prev, x, -1, cfg));
  r.trajectory = ops::add(tape, next, prev);
  return r;
}

#define CORRNET_INSTANTIATE_CORRELATION(R)                                                              \
  template struct CorrelationParams<R>;                                                                 \
  template Var<R> affinity(Tape<R>&, const Var<R>&, const Var<R>&, const CorrelationConfig&);           \
  template Var<R> gate(Tape<R>&, const Var<R>&);                                                        \
  template Var<R> aggregate(Tape<R>&, const Var<R>&, const Var<R>&, const CorrelationConfig&);          \
  template Var<R> video_affinity(Tape<R>&, const Var<R>&, int, const CorrelationConfig&);               \
  template Var<R> video_aggregate(Tape<R>&, const Var<R>&, const Var<R>&, int, const CorrelationConfig&); \
  template TrajectoryResult<R> bidirectional(Tape<R>&, const Var<R>&, const CorrelationParams<R>&,      \
                                             const CorrelationConfig&);

CORRNET_INSTANTIATE_CORRELATION(float)
CORRNET_INSTANTIATE_CORRELATION(double)

}  // namespace corrnet::correlation
