#pragma once
#include <type_traits>

#include <cmath>
#include <vector>

#include "core/flow.hpp"
#include "core/tensor.hpp"

namespace groupflow {

// Images are [C, H, W] row-major.  Sampling reads the source at real-valued
// pixel positions with bilinear weights; anything outside the image is
// treated as zero.  A normalized grid point (gx, gy) lands at pixel
// x = (gx + 1) (W - 1) / 2, y = (gy + 1) (H - 1) / 2.

template <typename T>
void check_image(const Tensor<T>& img, const char* where) {
  if (img.ndim() != 3) throw std::invalid_argument(std::string(where) + ": image must be [C,H,W]");
}

template <typename T>
Tensor<T> sample(const Tensor<T>& src, const CoordGrid<T>& grid) {
  check_image(src, "sample");
  const int C = src.dim(0), H = src.dim(1), W = src.dim(2);
  Tensor<T> out({C, grid.height, grid.width});
  const T hx = T(0.5) * T(W - 1), hy = T(0.5) * T(H - 1);
  const int64_t n = grid.count();
  for (int64_t i = 0; i < n; ++i) {
    const T x = (grid.pts[2 * i] + T(1)) * hx;
    const T y = (grid.pts[2 * i + 1] + T(1)) * hy;
    const int x0 = int(std::floor(double(x))), y0 = int(std::floor(double(y)));
    const T fx = x - T(x0), fy = y - T(y0);
    // corner weights; out-of-range taps contribute zero
    const T w00 = (T(1) - fx) * (T(1) - fy);
    const T w10 = fx * (T(1) - fy);
    const T w01 = (T(1) - fx) * fy;
    const T w11 = fx * fy;
    const bool in_x0 = x0 >= 0 && x0 < W, in_x1 = x0 + 1 >= 0 && x0 + 1 < W;
    const bool in_y0 = y0 >= 0 && y0 < H, in_y1 = y0 + 1 >= 0 && y0 + 1 < H;
    for (int ch = 0; ch < C; ++ch) {
      const T* u = src.ptr() + size_t(ch) * H * W;
      T v = T(0);
      if (in_y0) {
        if (in_x0) v += w00 * u[size_t(y0) * W + x0];
        if (in_x1) v += w10 * u[size_t(y0) * W + x0 + 1];
      }
      if (in_y1) {
        if (in_x0) v += w01 * u[size_t(y0 + 1) * W + x0];
        if (in_x1) v += w11 * u[size_t(y0 + 1) * W + x0 + 1];
      }
      out.data[size_t(ch) * n + i] = v;
    }
  }
  return out;
}

// Analytic gradients of `sample`.  grad_src (if non-null) receives dL/dU
// accumulated (caller zero-fills); grad_xy (if non-null) receives dL/d(x, y)
// in *pixel* units, interleaved like a CoordGrid.  The derivative wrt a
// coordinate uses the subgradient convention sign(m - x) with ties (m == x)
// counted as +1, so at exactly integer positions dV/dx = sum_n wy(n) U[n, x].
template <typename T>
void sample_backward(const Tensor<T>& src, const CoordGrid<T>& grid, const Tensor<T>& upstream,
                     std::type_identity_t<Tensor<T>>* grad_src,
                     std::type_identity_t<std::vector<T>>* grad_xy) {
  check_image(src, "sample_backward");
  const int C = src.dim(0), H = src.dim(1), W = src.dim(2);
  const T hx = T(0.5) * T(W - 1), hy = T(0.5) * T(H - 1);
  const int64_t n = grid.count();
  if (upstream.numel() != int64_t(C) * n)
    throw std::invalid_argument("sample_backward: upstream shape mismatch");
  if (grad_xy) grad_xy->assign(size_t(2 * n), T(0));
  for (int64_t i = 0; i < n; ++i) {
    const T x = (grid.pts[2 * i] + T(1)) * hx;
    const T y = (grid.pts[2 * i + 1] + T(1)) * hy;
    const int x0 = int(std::floor(double(x))), y0 = int(std::floor(double(y)));
    T gx = T(0), gy = T(0);
    for (int ch = 0; ch < C; ++ch) {
      const T* u = src.ptr() + size_t(ch) * H * W;
      T* gu = grad_src ? grad_src->ptr() + size_t(ch) * H * W : nullptr;
      const T up = upstream.data[size_t(ch) * n + i];
      for (int dy = 0; dy <= 1; ++dy) {
        const int m_y = y0 + dy;
        if (m_y < 0 || m_y >= H) continue;
        const T ay = std::abs(y - T(m_y));
        if (ay >= T(1)) continue;
        const T wy = T(1) - ay;
        const T sy = T(m_y) >= y ? T(1) : T(-1);
        for (int dx = 0; dx <= 1; ++dx) {
          const int m_x = x0 + dx;
          if (m_x < 0 || m_x >= W) continue;
          const T ax = std::abs(x - T(m_x));
          if (ax >= T(1)) continue;
          const T wx = T(1) - ax;
          const T sx = T(m_x) >= x ? T(1) : T(-1);
          const T uv = u[size_t(m_y) * W + m_x];
          if (gu) gu[size_t(m_y) * W + m_x] += up * wx * wy;
          gx += up * uv * sx * wy;
          gy += up * uv * sy * wx;
        }
      }
    }
    if (grad_xy) {
      (*grad_xy)[size_t(2 * i)] = gx;
      (*grad_xy)[size_t(2 * i) + 1] = gy;
    }
  }
}

template <typename T>
struct FlowStep {
  OdeParams<T> ode;
  TransformParams<T> tp;
};

// Grid realizing the composite transformation.  steps[0] is the transform
// applied first in image space; by the backward-warp convention that means
// the base grid is integrated through the flows in reverse list order.
template <typename T>
CoordGrid<T> compose_grid(int height, int width, const std::vector<FlowStep<T>>& steps, T subdiv) {
  CoordGrid<T> g = base_grid<T>(height, width);
  for (auto it = steps.rbegin(); it != steps.rend(); ++it)
    g = integrate(g, it->ode, it->tp, subdiv);
  return g;
}

// Apply a chain of transformations with a single bilinear sample at the end
// (compositions never resample intermediate images).
template <typename T>
Tensor<T> compose_apply(const Tensor<T>& img, const std::vector<FlowStep<T>>& steps, T subdiv) {
  check_image(img, "compose_apply");
  return sample(img, compose_grid(img.dim(1), img.dim(2), steps, subdiv));
}

template <typename T>
Tensor<T> apply_transform(const Tensor<T>& img, const OdeParams<T>& ode,
                          const TransformParams<T>& tp, T subdiv) {
  return compose_apply(img, std::vector<FlowStep<T>>{{ode, tp}}, subdiv);
}

}  // namespace groupflow
