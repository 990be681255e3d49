// Interpretation of learned ODE fields.  Splits A into its antisymmetric and
// symmetric parts to score how rotation-like the field is, weighs the offset
// b against A to score how translation-like it is, classifies each field, and
// renders arrow plots of the integrated displacement field.  The JSON report
// bundles both classifications with an evaluation summary.
#pragma once

#include <array>
#include <string>

#include "core/flow.hpp"
#include "core/tensor.hpp"
#include "core/trainer.hpp"
#include "json.hpp"

namespace groupflow {

struct AnalysisConfig {
  double rotation_skew = 0.8;  // skew_ratio at or above this reads as rotation
  double dominance = 0.8;      // translation_dominance at or above this reads as translation
  double field_ratio = 0.1;    // rotational field allowed relative to |b| for "translation"
  double degenerate_norm = 1e-12;  // below this A and b count as vanished
};

// |skew(A)|_F / (|skew(A)|_F + |sym(A)|_F), with 0/0 defined as 0.
double skew_ratio(const std::array<double, 4>& A);

// |b|_2 / (|b|_2 + |A|_F), with 0/0 defined as 0.  The coordinate domain has
// unit radius, so |A|_F bounds the field magnitude contributed by A.
double translation_dominance(const OdeParams<double>& ode);

struct TransformReport {
  OdeParams<double> ode;
  double skew_ratio = 0;
  double translation_dominance = 0;
  double angular_rate = 0;  // rotation rate of the antisymmetric part
  bool degenerate = false;
  std::string classification;  // "rotation" | "translation" | "mixed"
};

TransformReport analyze(const OdeParams<double>& ode, const AnalysisConfig& cfg = {});

nlohmann::json to_json(const TransformReport& r);

// Arrow plot of the displacement field: base grid points every `arrow_stride`
// pixels, each joined to its integrated image by a stemmed arrow.  Returns a
// [3, resolution, resolution] image in [0,1]; points that move less than half
// a pixel draw nothing.
Tensor<double> render_flow_field(const OdeParams<double>& ode, const TransformParams<double>& tp,
                                 double subdiv, int resolution, int arrow_stride);

// Full evaluation report: schema version, both field reports, the separation
// verdict, and the loss summary.
nlohmann::json make_report(const TransformReport& g, const TransformReport& v,
                           const EvalResult& eval, const nlohmann::json& config_echo);

}  // namespace groupflow
