#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdlib>
#include <vector>

#include "corrnet/tensor.hpp"

// Slow, direct reference implementations used only by tests.
namespace corrnet::oracle {

/// Trajectory features of a [T,C,H,W] video: for every frame and pixel, sum
/// over neighbour pixels of the next and previous frames of
/// (sigmoid(mean_c x_t * x_u) - 0.5) * x_u, weighted by beta_next / beta_prev.
/// window == 0 means every pixel is a neighbour.
inline Tensor<double> trajectory(const Tensor<double>& x, double beta_next, double beta_prev, std::size_t window) {
  const std::size_t T = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  auto at = [&](std::size_t t, std::size_t c, std::size_t i, std::size_t j) { return x[((t * C + c) * H + i) * W + j]; };
  const long r = long(window / 2);
  Tensor<double> out(x.shape());
  for (std::size_t t = 0; t < T; ++t) {
    for (int dir = 0; dir < 2; ++dir) {
      const long u = dir == 0 ? long(t) + 1 : long(t) - 1;
      if (u < 0 || u >= long(T)) continue;
      const double beta = dir == 0 ? beta_next : beta_prev;
      for (std::size_t i = 0; i < H; ++i)
        for (std::size_t j = 0; j < W; ++j)
          for (std::size_t i2 = 0; i2 < H; ++i2)
            for (std::size_t j2 = 0; j2 < W; ++j2) {
              if (window != 0 && (std::labs(long(i2) - long(i)) > r || std::labs(long(j2) - long(j)) > r)) continue;
              double a = 0.0;
              for (std::size_t c = 0; c < C; ++c) a += at(t, c, i, j) * at(std::size_t(u), c, i2, j2);
              a /= double(C);
              const double gated = 1.0 / (1.0 + std::exp(-a)) - 0.5;
              for (std::size_t c = 0; c < C; ++c) {
                out[((t * C + c) * H + i) * W + j] += beta * gated * at(std::size_t(u), c, i2, j2);
              }
            }
    }
  }
  return out;
}

/// Zero-padded, stride-1 grouped convolution by direct summation.
inline Tensor<double> conv3d(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>* bias,
                             std::size_t groups, std::array<std::size_t, 3> dil, std::array<std::size_t, 3> pad) {
  const std::size_t T = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  const std::size_t Co = w.shape()[0], Cg = w.shape()[1], kt = w.shape()[2], kh = w.shape()[3], kw = w.shape()[4];
  const std::size_t cog = Co / groups;
  Tensor<double> y({T, Co, H, W});
  auto at = [&](long t, std::size_t ch, long h, long ww) -> double {
    if (t < 0 || h < 0 || ww < 0 || t >= long(T) || h >= long(H) || ww >= long(W)) return 0.0;
    return x[((std::size_t(t) * C + ch) * H + std::size_t(h)) * W + std::size_t(ww)];
  };
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t o = 0; o < Co; ++o)
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t ww = 0; ww < W; ++ww) {
          double acc = bias ? (*bias)[o] : 0.0;
          const std::size_t g = o / cog;
          for (std::size_t ci = 0; ci < Cg; ++ci)
            for (std::size_t a = 0; a < kt; ++a)
              for (std::size_t b = 0; b < kh; ++b)
                for (std::size_t d = 0; d < kw; ++d) {
                  const double wv = w[(((o * Cg + ci) * kt + a) * kh + b) * kw + d];
                  acc += wv * at(long(t + a * dil[0]) - long(pad[0]), g * Cg + ci, long(h + b * dil[1]) - long(pad[1]),
                                 long(ww + d * dil[2]) - long(pad[2]));
                }
          y[((t * Co + o) * H + h) * W + ww] = acc;
        }
  return y;
}

/// Unit-cost edit distance, cost matrix only (no backtrace).
inline std::size_t edit_distance(const std::vector<int>& a, const std::vector<int>& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0u : 1u)});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

}  // namespace corrnet::oracle
