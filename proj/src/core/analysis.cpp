#include "core/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace groupflow {
namespace {

double frob(const std::array<double, 4>& A) {
  return std::sqrt(A[0] * A[0] + A[1] * A[1] + A[2] * A[2] + A[3] * A[3]);
}

double norm2(const std::array<double, 2>& b) { return std::hypot(b[0], b[1]); }

// one pixel of an arrow stroke, clipped to the canvas
void plot(Tensor<double>& img, int r, int c, const std::array<double, 3>& color) {
  const int R = img.shape[1], C = img.shape[2];
  if (r < 0 || r >= R || c < 0 || c >= C) return;
  for (int ch = 0; ch < 3; ++ch) img[(int64_t(ch) * R + r) * C + c] = color[size_t(ch)];
}

void draw_line(Tensor<double>& img, double r0, double c0, double r1, double c1,
               const std::array<double, 3>& color) {
  const int n = std::max(1, int(std::ceil(std::max(std::abs(r1 - r0), std::abs(c1 - c0)))));
  for (int i = 0; i <= n; ++i) {
    const double t = double(i) / n;
    plot(img, int(std::lround(r0 + t * (r1 - r0))), int(std::lround(c0 + t * (c1 - c0))), color);
  }
}

}  // namespace

double skew_ratio(const std::array<double, 4>& A) {
  for (const double v : A)
    if (!std::isfinite(v)) throw std::invalid_argument("skew_ratio: non-finite matrix");
  const double off = (A[1] - A[2]) / 2;  // skew part is [[0, off], [-off, 0]]
  const double skew = std::sqrt(2.0) * std::abs(off);
  const double sym_off = (A[1] + A[2]) / 2;
  const double sym = std::sqrt(A[0] * A[0] + 2 * sym_off * sym_off + A[3] * A[3]);
  const double denom = skew + sym;
  return denom == 0 ? 0.0 : skew / denom;
}

double translation_dominance(const OdeParams<double>& ode) {
  const double bn = norm2(ode.b);
  const double an = frob(ode.A);
  const double denom = bn + an;
  return denom == 0 ? 0.0 : bn / denom;
}

TransformReport analyze(const OdeParams<double>& ode, const AnalysisConfig& cfg) {
  TransformReport r;
  r.ode = ode;
  r.skew_ratio = skew_ratio(ode.A);
  r.translation_dominance = translation_dominance(ode);
  r.angular_rate = (ode.A[2] - ode.A[1]) / 2;
  const double an = frob(ode.A), bn = norm2(ode.b);
  r.degenerate = an < cfg.degenerate_norm && bn < cfg.degenerate_norm;
  if (r.skew_ratio >= cfg.rotation_skew && r.translation_dominance < cfg.dominance)
    r.classification = "rotation";
  else if (r.translation_dominance >= cfg.dominance &&
           r.skew_ratio * an < cfg.field_ratio * bn)
    r.classification = "translation";
  else
    r.classification = "mixed";
  return r;
}

nlohmann::json to_json(const TransformReport& r) {
  nlohmann::json j;
  j["A"] = {{r.ode.A[0], r.ode.A[1]}, {r.ode.A[2], r.ode.A[3]}};
  j["b"] = {r.ode.b[0], r.ode.b[1]};
  j["skew_ratio"] = r.skew_ratio;
  j["translation_dominance"] = r.translation_dominance;
  j["angular_rate"] = r.angular_rate;
  j["degenerate"] = r.degenerate;
  j["classification"] = r.classification;
  return j;
}

Tensor<double> render_flow_field(const OdeParams<double>& ode, const TransformParams<double>& tp,
                                 double subdiv, int resolution, int arrow_stride) {
  if (resolution < 8) throw std::invalid_argument("render_flow_field: resolution too small");
  if (arrow_stride < 1) throw std::invalid_argument("render_flow_field: stride must be positive");
  const int R = resolution;
  Tensor<double> img({3, R, R});
  img.fill(1.0);
  const std::array<double, 3> stem{0.10, 0.15, 0.55};
  const double half = (R - 1) / 2.0;
  for (int r = arrow_stride / 2; r < R; r += arrow_stride) {
    for (int c = arrow_stride / 2; c < R; c += arrow_stride) {
      const std::array<double, 2> p0{-1.0 + c / half, -1.0 + r / half};
      const auto p1 = integrate_point(p0, ode, tp, subdiv);
      const double c1 = (p1[0] + 1.0) * half, r1 = (p1[1] + 1.0) * half;
      const double len = std::hypot(r1 - r, c1 - c);
      if (len < 0.5) continue;  // zero field leaves the background untouched
      draw_line(img, r, c, r1, c1, stem);
      const double ang = std::atan2(r1 - r, c1 - c);
      const double head = std::min(4.0, 1.0 + len / 3.0);
      for (const double spread : {2.6, -2.6}) {
        draw_line(img, r1, c1, r1 + head * std::sin(ang + spread),
                  c1 + head * std::cos(ang + spread), stem);
      }
    }
  }
  return img;
}

nlohmann::json make_report(const TransformReport& g, const TransformReport& v,
                           const EvalResult& eval, const nlohmann::json& config_echo) {
  nlohmann::json j;
  j["schema_version"] = 1;
  j["g"] = to_json(g);
  j["v"] = to_json(v);
  j["separated"] = g.classification != v.classification && g.classification != "mixed" &&
                   v.classification != "mixed";
  nlohmann::json losses;
  losses["recon"] = eval.mean.recon;
  losses["recon2"] = eval.mean.recon2;
  losses["homo"] = eval.mean.homo;
  losses["ssl"] = eval.mean.ssl;
  losses["trans"] = eval.mean.trans;
  losses["c_norm"] = eval.mean.c_norm;
  losses["total"] = eval.mean.total;
  losses["recon_frame_mse"] = eval.recon_frame_mse;
  losses["sequences"] = eval.per_sequence.size();
  j["losses"] = losses;
  j["config"] = config_echo;
  return j;
}

}  // namespace groupflow
