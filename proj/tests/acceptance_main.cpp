// Release gate.  Every numbered criterion below runs end to end and prints one
// [PASS]/[FAIL] line; the process exits nonzero when a gating criterion fails.
//
// GROUPFLOW_ACCEPT_PROFILE selects the scale:
//   quick  small dataset, short main phase; for iterating on the gate itself.
//          Criterion 7 (separation) is reported without gating.
//   ci     default.  32x32 images, 128 sequences, 5000 main steps.  Criteria
//          1-6 and 8-9 gate; 7 is reported without gating.
//   full   64x64 images, 512 sequences, 20000 main steps, 3 seeds; everything
//          gates and 7 needs 2 of 3 seeds to separate.  Runtime is hours.
#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include <unistd.h>

#include "core/analysis.hpp"
#include "core/common.hpp"
#include "core/datagen.hpp"
#include "core/encoder.hpp"
#include "core/flow.hpp"
#include "core/graph.hpp"
#include "core/io.hpp"
#include "core/losses.hpp"
#include "core/tensor.hpp"
#include "core/trainer.hpp"
#include "core/warp.hpp"
#include "testutil.hpp"

namespace fs = std::filesystem;
using namespace groupflow;

namespace {

std::string str(const char* fmt, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, fmt);
  std::vsnprintf(buf, sizeof buf, fmt, ap);
  va_end(ap);
  return buf;
}

struct Profile {
  std::string name;
  int image_size;
  int dataset_n;
  int64_t main_steps;
  int seeds;
  bool gate_init;        // criterion 6 (warm-up) needs >= ~128 sequences of
                         // batch diversity for its held-out tolerances to hold
  bool gate_separation;  // criterion 7 gates only at full scale
};

Profile profile_from_env() {
  const char* env = std::getenv("GROUPFLOW_ACCEPT_PROFILE");
  const std::string name = env && *env ? env : "ci";
  if (name == "quick") return {name, 32, 48, 300, 1, false, false};
  if (name == "ci") return {name, 32, 128, 5000, 1, true, false};
  if (name == "full") return {name, 64, 512, 20000, 3, true, true};
  std::fprintf(stderr, "unknown GROUPFLOW_ACCEPT_PROFILE '%s' (want quick|ci|full)\n",
               name.c_str());
  std::exit(2);
}

struct Outcome {
  bool ok = false;
  bool gating = true;
  std::string detail;
};

struct Entry {
  int index;
  std::string name;
  Outcome outcome;
  double seconds;
};

void print_entry(const Entry& e) {
  const char* tag = e.outcome.gating ? (e.outcome.ok ? "PASS" : "FAIL") : "INFO";
  std::printf("[%s] %d. %s: %s (%.1fs)\n", tag, e.index, e.name.c_str(),
              e.outcome.detail.c_str(), e.seconds);
  std::fflush(stdout);
}

// ---------------------------------------------------------------------------
// 1. Integrated flow against the matrix-exponential closed form, plus the
//    first-order error decay expected from the step rule.

Outcome c1_flow_oracle() {
  const auto grid = base_grid<double>(33, 33);
  std::vector<std::pair<double, double>> trials = {
      {0.5, 1.0}, {-0.5, 1.0}, {0.3, 0.5}, {0.1, 0.25}, {-0.37, 0.8}};
  Rng rng(101);
  for (int i = 0; i < 8; ++i) {
    const double mag = rng.uniform(0.05, 0.5);
    trials.push_back({rng.uniform() < 0.5 ? mag : -mag, rng.uniform(0.2, 1.0)});
  }
  double worst_err = 0, ratio_lo = 1e9, ratio_hi = 0;
  bool ok = true;
  for (const auto& [omega, lambda] : trials) {
    OdeParams<double> ode;
    ode.A = {0, -omega, omega, 0};
    const TransformParams<double> tp{lambda, {0, 0}};
    const auto err_at = [&](double subdiv) {
      const auto out = integrate(grid, ode, tp, subdiv);
      double e = 0;
      for (int64_t i = 0; i < grid.count(); ++i) {
        const auto want = testutil::exact_flow(ode.A, ode.b, lambda,
                                               {grid.pts[2 * i], grid.pts[2 * i + 1]});
        e = std::max(e, std::abs(out.pts[2 * i] - want[0]));
        e = std::max(e, std::abs(out.pts[2 * i + 1] - want[1]));
      }
      return e;
    };
    const double e1 = err_at(1000), e2 = err_at(2000);
    const double ratio = e1 / e2;
    worst_err = std::max(worst_err, e1);
    ratio_lo = std::min(ratio_lo, ratio);
    ratio_hi = std::max(ratio_hi, ratio);
    ok = ok && e1 <= 3e-4 && ratio >= 1.8 && ratio <= 2.2;
  }
  return {ok, true,
          str("max err %.2e vs tol 3.0e-04 at K=1000; error ratio per K-doubling in [%.2f, %.2f] "
              "vs [1.80, 2.20], %zu fields",
              worst_err, ratio_lo, ratio_hi, trials.size())};
}

// ---------------------------------------------------------------------------
// 2. One-parameter additivity: running the flow for lambda then mu lands where
//    running it once for lambda + mu does.

Outcome c2_additivity() {
  Rng rng(202);
  const auto grid = base_grid<double>(9, 9);
  double worst = 0;
  for (int t = 0; t < 100; ++t) {
    OdeParams<double> ode;
    for (auto& a : ode.A) a = rng.uniform(-0.3, 0.3);
    for (auto& b : ode.b) b = rng.uniform(-0.3, 0.3);
    const std::array<double, 2> c{rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2)};
    const double lambda = rng.uniform(-0.8, 0.8), mu = rng.uniform(-0.8, 0.8);
    const auto one = integrate(integrate(grid, ode, {lambda, c}, 200.0), ode, {mu, c}, 200.0);
    const auto both = integrate(grid, ode, {lambda + mu, c}, 200.0);
    for (size_t i = 0; i < one.pts.size(); ++i)
      worst = std::max(worst, std::abs(one.pts[i] - both.pts[i]));
  }
  return {worst <= 5e-3, true, str("max discrepancy %.2e vs tol 5.0e-03 over 100 flows", worst)};
}

// ---------------------------------------------------------------------------
// 3. Bilinear sampler coordinate gradient against central finite differences
//    at off-lattice points.

Outcome c3_sampler_gradient() {
  Rng rng(303);
  const auto norm_coord = [](double p, int n) { return -1.0 + 2.0 * p / double(n - 1); };
  const auto sample_at = [&](const Tensor<double>& img, double px, double py) {
    CoordGrid<double> g(1, 1);
    g.pts = {norm_coord(px, 8), norm_coord(py, 8)};
    return sample(img, g).data[0];
  };
  const double h = 1e-5;
  double worst = 0;
  for (int i = 0; i < 20; ++i) {
    const auto img = testutil::random_image(rng, 1, 8, 8);
    for (int j = 0; j < 50; ++j) {
      const auto draw = [&] {
        for (;;) {
          const double p = rng.uniform(0.3, 6.7);
          const double frac = p - std::floor(p);
          if (frac > 0.02 && frac < 0.98) return p;
        }
      };
      const double px = draw(), py = draw();
      CoordGrid<double> g(1, 1);
      g.pts = {norm_coord(px, 8), norm_coord(py, 8)};
      const Tensor<double> up({1, 1, 1}, 1.0);
      std::vector<double> gxy;
      sample_backward(img, g, up, nullptr, &gxy);
      const double fdx =
          testutil::central_diff([&](double x) { return sample_at(img, x, py); }, px, h);
      const double fdy =
          testutil::central_diff([&](double y) { return sample_at(img, px, y); }, py, h);
      worst = std::max({worst, std::abs(gxy[0] - fdx), std::abs(gxy[1] - fdy)});
    }
  }
  return {worst <= 1e-3, true, str("max |analytic - fd| %.2e vs tol 1.0e-03 at 1000 points", worst)};
}

// ---------------------------------------------------------------------------
// 4. Every objective term back-propagates gradients that match central finite
//    differences on the reduced 8x8 configuration.

Outcome c4_term_gradients() {
  EncoderConfig cfg;
  cfg.image_size = 8;
  cfg.conv_channels = {4, 8};
  cfg.lstm_hidden = 8;

  Rng rng(404);
  ParamRegistry<double> reg;
  register_encoder_params(reg, cfg, rng);
  register_ode_params(reg);
  reg.at("ode_g.A").value.data = {0.03, -0.12, 0.12, 0.03};
  reg.at("ode_g.b").value.data = {0.01, -0.02};
  reg.at("ode_v.A").value.data = {0.02, 0.01, -0.01, 0.02};
  reg.at("ode_v.b").value.data = {0.06, 0.03};

  std::vector<Tensor<double>> frames;
  for (int t = 0; t < 3; ++t) {
    Tensor<double> f({1, 8, 8});
    for (int r = 0; r < 8; ++r)
      for (int c = 0; c < 8; ++c)
        f.data[size_t(r) * 8 + c] = 0.5 + 0.35 * std::sin(0.7 * c + 0.4 * t) *
                                              std::cos(0.9 * r - 0.3 * t);
    frames.push_back(std::move(f));
  }

  const LossWeights w;
  LossOptions opt;

  // Freeze the self-supervision constants once: backward treats the starred
  // targets and regenerated frames as constants, so finite differences must
  // probe the same frozen objective or the two sides diverge on ODE coords.
  SslContext<double> ctx;
  {
    Graph<double> g(&reg);
    build_sequence_loss(g, frames, cfg, w, opt, nullptr, &ctx);
  }
  const auto build = [&](Graph<double>& g) {
    return build_sequence_loss(g, frames, cfg, w, opt, &ctx);
  };

  struct Term {
    const char* name;
    NodeId SequenceLossNodes<double>::* node;
  };
  const std::vector<Term> terms = {
      {"recon", &SequenceLossNodes<double>::recon},   {"recon2", &SequenceLossNodes<double>::recon2},
      {"homo", &SequenceLossNodes<double>::homo},     {"ssl", &SequenceLossNodes<double>::ssl},
      {"trans", &SequenceLossNodes<double>::trans},   {"c_norm", &SequenceLossNodes<double>::c_norm},
  };

  double worst = 0;
  std::string worst_at = "-";
  bool ok = true;
  for (const auto& term : terms) {
    // coordinates to probe: two fixed ODE entries plus random draws
    std::vector<std::pair<int, int64_t>> coords = {{reg.find("ode_g.A"), 1},
                                                   {reg.find("ode_v.b"), 0}};
    while (coords.size() < 20) {
      const int e = rng.uniform_int(int(reg.count()));
      if (!reg.at(e).trainable) continue;
      coords.push_back({e, int64_t(rng.uniform_int(int(reg.at(e).value.numel())))});
    }

    reg.zero_grads();
    Graph<double> g(&reg);
    const auto nodes = build(g);
    const NodeId node = nodes.*(term.node);
    g.value(node);
    g.backward(node);
    std::vector<double> analytic;
    for (const auto& [e, i] : coords) analytic.push_back(double(reg.at(e).grad.data[size_t(i)]));

    for (size_t ci = 0; ci < coords.size(); ++ci) {
      const auto [e, i] = coords[ci];
      double& slot = reg.at(e).value.data[size_t(i)];
      const double keep = slot;
      const double hh = 1e-5 * std::max(1.0, std::abs(keep));
      const auto value_at = [&](double v) {
        slot = v;
        Graph<double> gg(&reg);
        const auto nn = build(gg);
        const double out = double(gg.value(nn.*(term.node))[0]);
        slot = keep;
        return out;
      };
      const double fd = (value_at(keep + hh) - value_at(keep - hh)) / (2 * hh);
      const double disc = testutil::grad_discrepancy(analytic[ci], fd, 1e-7);
      if (disc > worst) {
        worst = disc;
        worst_at = str("%s/%s[%lld]", term.name, reg.at(e).name.c_str(), (long long)i);
      }
      ok = ok && disc <= 1e-2;
    }
  }
  return {ok, true,
          str("max grad discrepancy %.2e vs tol 1.0e-02 (at %s), 6 terms x 20 coords", worst,
              worst_at.c_str())};
}

// ---------------------------------------------------------------------------
// 5. Isometry loss: exact zeros on distance-preserving grids, small and
//    K-monotone on integrated rotations.

Outcome c5_isometry() {
  const auto base = base_grid<double>(17, 17);  // spacing 1/8: dyadic coordinates

  const double on_identity = trans_loss({base}, base, 1);

  CoordGrid<double> shifted = base;
  for (size_t i = 0; i < shifted.pts.size(); i += 2) {
    shifted.pts[i] += 0.5;
    shifted.pts[i + 1] += -0.25;
  }
  const double on_translation = trans_loss({shifted}, base, 1);

  OdeParams<double> rot;
  rot.A = {0, -0.15, 0.15, 0};
  const TransformParams<double> tp{1.0, {0, 0}};
  std::vector<double> losses;
  bool small_enough = true, monotone = true;
  for (const double subdiv : {10.0, 20.0, 40.0, 80.0, 160.0}) {
    const double l = trans_loss({integrate(base, rot, tp, subdiv)}, base, 1);
    small_enough = small_enough && l <= 1e-4;
    if (!losses.empty()) monotone = monotone && l < losses.back();
    losses.push_back(l);
  }

  const bool ok = on_identity == 0.0 && on_translation == 0.0 && small_enough && monotone;
  return {ok, true,
          str("identity %.1e, translation %.1e (both exact 0), rotation K=10..160: %.1e -> %.1e, "
              "%s",
              on_identity, on_translation, losses.front(), losses.back(),
              monotone ? "monotone decreasing" : "NOT monotone")};
}

// ---------------------------------------------------------------------------
// 6 + 7. The two training criteria share their runs: the warm-up phase gate,
// then the full run whose learned fields must split into a rotation-like and
// a translation-dominant component.

void progress(const char* label, const MetricsRecord& rec, int64_t every, int64_t target) {
  if (rec.step % every != 0 && rec.step != target) return;
  std::printf("    %s step %lld/%lld total %.4e\n", label, (long long)rec.step, (long long)target,
              rec.losses.total);
  std::fflush(stdout);
}

std::pair<Outcome, Outcome> c67_training(const Profile& P) {
  GenOptions gopt;
  gopt.image_size = P.image_size;
  const Dataset ds = gen_dataset(P.dataset_n, ObjectKind::square, 7, gopt);

  Outcome init_out, sep_out;
  sep_out.gating = P.gate_separation;
  int successes = 0;
  std::string notes;

  for (int s = 0; s < P.seeds; ++s) {
    TrainConfig cfg;
    cfg.encoder.image_size = P.image_size;
    cfg.main_steps = P.main_steps;
    cfg.seed = 101 + uint64_t(s);
    Trainer<float> tr(cfg);
    tr.attach_dataset(ds);

    const auto t0 = std::chrono::steady_clock::now();
    const double holdout = tr.run_init([&](const MetricsRecord& r) {
      progress(str("seed %d init", 101 + s).c_str(), r, 200, cfg.init_steps);
    });

    if (s == 0) {
      double out_err = 0;
      const std::array<double, 12> target{1, 0, 0, 1, 0, 0, 1, 0, 0, 1, 0, 0};
      const size_t lo = ds.sequences.size() - size_t(tr.holdout_count());
      for (size_t j = lo; j < std::min(lo + 4, ds.sequences.size()); ++j) {
        const auto enc = tr.encode_sequence(j);
        for (int i = 0; i < 12; ++i)
          out_err = std::max(out_err, std::abs(enc.raw[size_t(i)] - target[size_t(i)]));
      }
      init_out.ok = holdout <= 1e-4 && out_err <= 1e-2;
      init_out.gating = P.gate_init;
      init_out.detail = str(
          "held-out init loss %.2e vs tol 1.0e-04 after 1000 steps; outputs within %.2e of "
          "(1,0,0,1,0,0,...) vs tol 1.0e-02%s",
          holdout, out_err, P.gate_init ? "" : " (reported, not gated, in this profile)");
    }

    tr.run_main([&](const MetricsRecord& r) {
      progress(str("seed %d main", 101 + s).c_str(), r, 250, cfg.main_steps);
    });
    const auto ev = tr.evaluate();
    const auto rg = analyze(tr.ode_values("g"));
    const auto rv = analyze(tr.ode_values("v"));
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    const bool separated = (rg.skew_ratio >= 0.8 && rv.translation_dominance >= 0.8) ||
                           (rv.skew_ratio >= 0.8 && rg.translation_dominance >= 0.8);
    const bool mse_ok = ev.recon_frame_mse <= 1e-2;
    if (separated && mse_ok) ++successes;
    notes += str("%sseed %d: skew(g)=%.3f td(g)=%.3f | skew(v)=%.3f td(v)=%.3f | frame MSE %.2e "
                 "-> %s (%.0fs)",
                 notes.empty() ? "" : "; ", 101 + s, rg.skew_ratio, rg.translation_dominance,
                 rv.skew_ratio, rv.translation_dominance, ev.recon_frame_mse,
                 separated && mse_ok ? "separated" : "not separated", secs);
  }

  sep_out.ok = P.gate_separation ? 3 * successes >= 2 * P.seeds : successes == P.seeds;
  sep_out.detail = str("%d/%d seeds separated with frame MSE <= 1.0e-02 [%s]%s", successes,
                       P.seeds, notes.c_str(),
                       P.gate_separation ? "" : " (reported, not gated, in this profile)");
  return {init_out, sep_out};
}

// ---------------------------------------------------------------------------
// 8. The synthetic datasets themselves: fixed geometry, quantized motion
//    draws, bitwise regeneration, exact pixel shifts for pure translations.

Outcome c8_datasets() {
  bool ok = true;
  std::string why;
  const auto fail = [&](const std::string& m) {
    ok = false;
    if (why.empty()) why = m;
  };

  GenOptions gopt;  // 64x64, 7 frames
  const Dataset a = gen_dataset(16, ObjectKind::square, 9, gopt);
  const Dataset b = gen_dataset(16, ObjectKind::square, 9, gopt);
  for (size_t i = 0; i < 16; ++i)
    for (size_t t = 0; t < 7; ++t)
      if (a.sequences[i].frames[t].data != b.sequences[i].frames[t].data)
        fail("square regeneration not bitwise identical");
  const Dataset sa = gen_dataset(4, ObjectKind::semicircle, 9, gopt);
  const Dataset sb = gen_dataset(4, ObjectKind::semicircle, 9, gopt);
  for (size_t i = 0; i < 4; ++i)
    for (size_t t = 0; t < 7; ++t)
      if (sa.sequences[i].frames[t].data != sb.sequences[i].frames[t].data)
        fail("semicircle regeneration not bitwise identical");

  for (const auto& seq : a.sequences) {
    if (seq.frames.size() != 7) fail("frame count != 7");
    for (const auto& f : seq.frames)
      if (!(f.dim(0) == 1 && f.dim(1) == 64 && f.dim(2) == 64)) fail("frame shape != 1x64x64");
  }

  const auto geo = object_geometry(64);
  if (geo.side != 30) fail("square side != 30");
  if (geo.radius != 8.0) fail("semicircle radius != 8");
  if (geo.shift_mag != 3) fail("shift magnitude != 3");

  const auto tex = square_texture(30, 5);
  std::vector<double> distinct(tex.data.begin(), tex.data.end());
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  if (distinct.size() != 16) fail(str("square texture has %zu gray levels, want 16", distinct.size()));
  for (size_t k = 0; k < distinct.size() && k < 16; ++k)
    if (distinct[k] != 0.2 + 0.8 * double(k) / 15.0) fail("texture gray ladder mismatch");

  std::vector<bool> seen_rot(3, false), seen_dx(3, false), seen_dy(3, false);
  for (int i = 0; i < 64; ++i) {
    const auto spec = draw_spec(ObjectKind::square, i, 9, gopt);
    if (spec.rot_per_frame_deg == 8.0) seen_rot[0] = true;
    else if (spec.rot_per_frame_deg == 10.0) seen_rot[1] = true;
    else if (spec.rot_per_frame_deg == 12.0) seen_rot[2] = true;
    else fail(str("rotation draw %.3f outside {8,10,12} deg", spec.rot_per_frame_deg));
    const auto mark = [&](int v, std::vector<bool>& seen) {
      if (v == -3) seen[0] = true;
      else if (v == 0) seen[1] = true;
      else if (v == 3) seen[2] = true;
      else fail(str("shift draw %d outside {-3,0,3}", v));
    };
    mark(spec.dx, seen_dx);
    mark(spec.dy, seen_dy);
  }
  for (const auto& seen : {seen_rot, seen_dx, seen_dy})
    if (!(seen[0] && seen[1] && seen[2])) fail("some motion draw value never appears in 64 draws");

  for (const ObjectKind kind : {ObjectKind::square, ObjectKind::semicircle}) {
    SequenceSpec spec;
    spec.kind = kind;
    spec.rot_per_frame_deg = 0.0;
    spec.theta0 = 0.3;
    spec.dx = 3;
    spec.dy = -3;
    spec.cx = 22.5;
    spec.cy = 40.5;
    spec.seed = 11;
    const auto seq = gen_sequence(spec);
    for (int i = 1; i < 7; ++i) {
      const auto want = testutil::shift_image(seq.frames[0], i * spec.dx, i * spec.dy);
      if (seq.frames[size_t(i)].data != want.data) fail("pure translation is not an exact shift");
    }
  }

  return {ok, true,
          ok ? "bitwise regeneration, 64x64x7 frames, 30px square / 16 grays, radius-8 "
               "semicircle, draws in {8,10,12} deg x {-3,0,3} px, exact pure-translation shifts"
             : why};
}

// ---------------------------------------------------------------------------
// 9. Persistence: dataset, checkpoint, and report round-trips are bitwise
//    stable and evaluation is unchanged by a save/load cycle.

std::vector<unsigned char> file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {});
}

bool same_dir_bytes(const fs::path& x, const fs::path& y) {
  std::vector<std::string> nx, ny;
  for (const auto& e : fs::directory_iterator(x)) nx.push_back(e.path().filename().string());
  for (const auto& e : fs::directory_iterator(y)) ny.push_back(e.path().filename().string());
  std::sort(nx.begin(), nx.end());
  std::sort(ny.begin(), ny.end());
  if (nx != ny) return false;
  for (const auto& n : nx)
    if (file_bytes(x / n) != file_bytes(y / n)) return false;
  return true;
}

Outcome c9_persistence() {
  const fs::path tmp =
      fs::temp_directory_path() / ("groupflow_accept_" + std::to_string(::getpid()));
  fs::create_directories(tmp);
  bool ok = true;
  std::string why;
  const auto fail = [&](const std::string& m) {
    ok = false;
    if (why.empty()) why = m;
  };

  GenOptions gopt;
  gopt.image_size = 32;
  const Dataset ds = gen_dataset(6, ObjectKind::square, 3, gopt);
  save_dataset((tmp / "d1").string(), ds);
  const Dataset back = load_dataset((tmp / "d1").string());
  for (size_t i = 0; i < ds.sequences.size(); ++i)
    for (size_t t = 0; t < 7; ++t)
      if (ds.sequences[i].frames[t].data != back.sequences[i].frames[t].data)
        fail("dataset load != original");
  save_dataset((tmp / "d2").string(), back);
  if (!same_dir_bytes(tmp / "d1", tmp / "d2")) fail("dataset save-load-save not bitwise stable");

  TrainConfig cfg;
  cfg.encoder.image_size = 32;
  cfg.init_steps = 2;
  cfg.main_steps = 2;
  cfg.batch_size = 2;
  cfg.seed = 5;
  Trainer<float> tr(cfg);
  tr.attach_dataset(ds);
  tr.run_init();
  tr.run_main();
  const auto ev1 = tr.evaluate();
  tr.save_state((tmp / "c1.ckpt").string());

  Trainer<float> tr2(cfg);
  tr2.attach_dataset(ds);
  tr2.load_state((tmp / "c1.ckpt").string());
  const auto ev2 = tr2.evaluate();
  const auto same = [](const LossBreakdown& p, const LossBreakdown& q) {
    return p.recon == q.recon && p.recon2 == q.recon2 && p.homo == q.homo && p.ssl == q.ssl &&
           p.trans == q.trans && p.c_norm == q.c_norm && p.total == q.total;
  };
  if (!same(ev1.mean, ev2.mean) || ev1.recon_frame_mse != ev2.recon_frame_mse)
    fail("evaluate after load != evaluate before save");
  tr2.save_state((tmp / "c2.ckpt").string());
  if (file_bytes(tmp / "c1.ckpt") != file_bytes(tmp / "c2.ckpt"))
    fail("checkpoint save-load-save not bitwise stable");

  const auto rep =
      make_report(analyze(tr.ode_values("g")), analyze(tr.ode_values("v")), ev1, {{"seed", 5}});
  const std::string text = rep.dump(2);
  {
    std::ofstream out(tmp / "r1.json", std::ios::binary);
    out << text;
  }
  const auto reread = file_bytes(tmp / "r1.json");
  if (std::string(reread.begin(), reread.end()) != text) fail("report file differs from source");
  if (nlohmann::json::parse(text).dump(2) != text) fail("report parse-dump not stable");

  fs::remove_all(tmp);
  return {ok, true,
          ok ? "dataset, checkpoint, and report round-trips bitwise stable; evaluation unchanged "
               "by save/load"
             : why};
}

}  // namespace

int main() {
  const Profile P = profile_from_env();
  std::printf("acceptance profile: %s (%dx%d images, %d sequences, %lld main steps, %d seed%s)\n",
              P.name.c_str(), P.image_size, P.image_size, P.dataset_n, (long long)P.main_steps,
              P.seeds, P.seeds == 1 ? "" : "s");
  std::fflush(stdout);

  std::vector<Entry> entries;
  const auto run = [&](int idx, const char* name, const std::function<Outcome()>& f) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = f();
    } catch (const std::exception& e) {
      o = {false, true, str("threw: %s", e.what())};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    Entry entry{idx, name, o, secs};
    print_entry(entry);
    entries.push_back(std::move(entry));
  };

  run(1, "flow matches the closed-form solution", c1_flow_oracle);
  run(2, "one-parameter additivity", c2_additivity);
  run(3, "sampler coordinate gradients", c3_sampler_gradient);
  run(4, "objective-term gradients", c4_term_gradients);
  run(5, "isometry loss zeros and K-monotonicity", c5_isometry);
  run(8, "dataset generators", c8_datasets);
  run(9, "persistence round-trips", c9_persistence);

  {
    const auto t0 = std::chrono::steady_clock::now();
    std::pair<Outcome, Outcome> both;
    try {
      both = c67_training(P);
    } catch (const std::exception& e) {
      both.first = {false, true, str("threw: %s", e.what())};
      both.second = {false, P.gate_separation, str("threw: %s", e.what())};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    Entry e6{6, "encoder warm-up convergence", both.first, secs};
    Entry e7{7, "end-to-end rotation/translation separation", both.second, secs};
    print_entry(e6);
    print_entry(e7);
    entries.push_back(std::move(e6));
    entries.push_back(std::move(e7));
  }

  std::sort(entries.begin(), entries.end(),
            [](const Entry& a, const Entry& b) { return a.index < b.index; });
  int gated = 0, passed = 0;
  std::printf("\n== summary (profile %s) ==\n", P.name.c_str());
  for (const auto& e : entries) {
    print_entry(e);
    if (e.outcome.gating) {
      ++gated;
      if (e.outcome.ok) ++passed;
    }
  }
  std::printf("%d of %d gating criteria passed\n", passed, gated);
  return passed == gated ? 0 : 1;
}
