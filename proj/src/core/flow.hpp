#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "core/common.hpp"
#include "core/tensor.hpp"

namespace groupflow {

// One transformation family: dp/dt = A p + b + c.  A and b are shared across
// sequences; the offset c conditions the flow per sequence (e.g. it encodes
// the rotation center).  Coordinates are normalized to [-1, 1]^2.
template <typename T>
struct OdeParams {
  std::array<T, 4> A{};  // row-major [a00, a01, a10, a11]
  std::array<T, 2> b{};
};

// Per-sequence flow arguments: how far to run the flow and its offset.
template <typename T>
struct TransformParams {
  T lambda = T(0);
  std::array<T, 2> c{};
};

template <typename T>
struct StepPlan {
  int steps;
  T dt;
};

// Number of Euler steps grows with |lambda| so the local step length stays
// bounded by 1/K.  lambda = 0 degenerates to a single zero-length step, which
// reproduces the identity exactly.
template <typename T>
StepPlan<T> plan_steps(T lambda, T subdiv) {
  if (!std::isfinite(double(lambda))) throw std::invalid_argument("plan_steps: non-finite lambda");
  if (!(subdiv > T(0)) || !std::isfinite(double(subdiv)))
    throw std::invalid_argument("plan_steps: subdivision must be positive and finite");
  const int steps = int(std::floor(std::abs(double(lambda)) * double(subdiv))) + 1;
  return {steps, lambda / T(steps)};
}

template <typename T>
std::array<T, 2> velocity(const std::array<T, 2>& p, const OdeParams<T>& ode,
                          const std::array<T, 2>& c) {
  return {ode.A[0] * p[0] + ode.A[1] * p[1] + ode.b[0] + c[0],
          ode.A[2] * p[0] + ode.A[3] * p[1] + ode.b[1] + c[1]};
}

// Flat grid of 2-D points, x and y interleaved, row-major over (row, col).
template <typename T>
struct CoordGrid {
  int height = 0;
  int width = 0;
  std::vector<T> pts;  // size 2 * height * width, layout [y-major: (x, y), (x, y), ...]

  CoordGrid() = default;
  CoordGrid(int h, int w) : height(h), width(w), pts(size_t(2) * h * w) {}

  int64_t count() const { return int64_t(height) * width; }
  T x(int r, int c) const { return pts[2 * (size_t(r) * width + c)]; }
  T y(int r, int c) const { return pts[2 * (size_t(r) * width + c) + 1]; }
};

// Pixel (r, c) of an H x W image sits at normalized coordinates
// (-1 + 2c/(W-1), -1 + 2r/(H-1)): corners map to the corners of [-1, 1]^2
// and one pixel spans 2/(W-1).
template <typename T>
CoordGrid<T> base_grid(int height, int width) {
  if (height < 1 || width < 1) throw std::invalid_argument("base_grid: empty image");
  CoordGrid<T> g(height, width);
  const T sx = width > 1 ? T(2) / T(width - 1) : T(0);
  const T sy = height > 1 ? T(2) / T(height - 1) : T(0);
  size_t i = 0;
  for (int r = 0; r < height; ++r) {
    const T y = height > 1 ? T(-1) + sy * T(r) : T(0);
    for (int c = 0; c < width; ++c) {
      g.pts[i++] = width > 1 ? T(-1) + sx * T(c) : T(0);
      g.pts[i++] = y;
    }
  }
  return g;
}

template <typename T>
void check_diverged(T x, T y) {
  if (!(std::abs(double(x)) <= kDivergenceLimit) || !(std::abs(double(y)) <= kDivergenceLimit))
    throw FlowDivergedError("integrated coordinate diverged (|p| > 1e3 or non-finite)");
}

// Forward-Euler integration of every grid point through the flow.
template <typename T>
CoordGrid<T> integrate(const CoordGrid<T>& grid, const OdeParams<T>& ode,
                       const TransformParams<T>& tp, T subdiv) {
  const auto plan = plan_steps(tp.lambda, subdiv);
  CoordGrid<T> out(grid.height, grid.width);
  const T a00 = ode.A[0], a01 = ode.A[1], a10 = ode.A[2], a11 = ode.A[3];
  const T u0 = ode.b[0] + tp.c[0], u1 = ode.b[1] + tp.c[1];
  const T dt = plan.dt;
  const int64_t n = grid.count();
  for (int64_t i = 0; i < n; ++i) {
    T px = grid.pts[2 * i], py = grid.pts[2 * i + 1];
    for (int s = 0; s < plan.steps; ++s) {
      const T vx = a00 * px + a01 * py + u0;
      const T vy = a10 * px + a11 * py + u1;
      px += dt * vx;
      py += dt * vy;
    }
    check_diverged(px, py);
    out.pts[2 * i] = px;
    out.pts[2 * i + 1] = py;
  }
  return out;
}

// Single-point variant, used by analysis and tests.
template <typename T>
std::array<T, 2> integrate_point(std::array<T, 2> p, const OdeParams<T>& ode,
                                 const TransformParams<T>& tp, T subdiv) {
  CoordGrid<T> g(1, 1);
  g.pts[0] = p[0];
  g.pts[1] = p[1];
  const auto out = integrate(g, ode, tp, subdiv);
  return {out.pts[0], out.pts[1]};
}

// The flow inverse of (lambda, c) is (-lambda, c): running the same field
// backwards in time.
template <typename T>
TransformParams<T> inverse_params(const TransformParams<T>& tp) {
  return {-tp.lambda, tp.c};
}

}  // namespace groupflow
