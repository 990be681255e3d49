#pragma once

// The training objective: sequence reconstruction, next-frame reconstruction,
// flow additivity (homomorphism), self-supervised component zeroing, grid
// isometry, and the offset-norm penalty.  Each loss exists twice: as a plain
// value function over concrete parameters (the reference definition used by
// tests and evaluation) and as a tape builder used in training.  Both share
// the same flow/warp kernels.

#include <array>
#include <optional>
#include <type_traits>
#include <vector>

#include "core/encoder.hpp"
#include "core/graph.hpp"
#include "core/warp.hpp"

namespace groupflow {

// The twelve encoder outputs as named transformation parameters.
template <typename T>
struct EncoderOutput {
  std::array<T, 12> raw{};

  static EncoderOutput from_tensor(const Tensor<T>& t) {
    if (t.numel() != 12) throw std::invalid_argument("EncoderOutput: need 12 values");
    EncoderOutput out;
    std::copy_n(t.ptr(), 12, out.raw.begin());
    return out;
  }
  Tensor<T> to_tensor() const {
    Tensor<T> t({12});
    std::copy_n(raw.begin(), 12, t.ptr());
    return t;
  }

  TransformParams<T> g01() const { return {raw[0], {raw[1], raw[2]}}; }
  TransformParams<T> v01() const { return {raw[3], {raw[4], raw[5]}}; }
  TransformParams<T> g12() const { return {raw[6], {raw[7], raw[8]}}; }
  TransformParams<T> v12() const { return {raw[9], {raw[10], raw[11]}}; }

  void set_g01(const TransformParams<T>& p) { raw[0] = p.lambda; raw[1] = p.c[0]; raw[2] = p.c[1]; }
  void set_v01(const TransformParams<T>& p) { raw[3] = p.lambda; raw[4] = p.c[0]; raw[5] = p.c[1]; }
  void set_g12(const TransformParams<T>& p) { raw[6] = p.lambda; raw[7] = p.c[0]; raw[8] = p.c[1]; }
  void set_v12(const TransformParams<T>& p) { raw[9] = p.lambda; raw[10] = p.c[0]; raw[11] = p.c[1]; }

  // zero out one component (lambda and c of both transitions)
  EncoderOutput zeroed(bool zero_g) const {
    EncoderOutput out = *this;
    const std::array<int, 6> slots = zero_g ? std::array<int, 6>{0, 1, 2, 6, 7, 8}
                                            : std::array<int, 6>{3, 4, 5, 9, 10, 11};
    for (int s : slots) out.raw[size_t(s)] = T(0);
    return out;
  }
};

struct LossWeights {
  double alpha = 1.0;    // sequence reconstruction
  double beta = 1.0;     // next-frame reconstruction
  double gamma = 1.0;    // homomorphism
  double delta = 0.1;    // self-supervised
  double epsilon = 1.0;  // isometry
  double zeta = 0.1;     // offset norm
};

struct LossBreakdown {
  double recon = 0, recon2 = 0, homo = 0, ssl = 0, trans = 0, c_norm = 0;
  double total = 0;
};

inline double weighted_total(const LossBreakdown& b, const LossWeights& w) {
  return w.alpha * b.recon + w.beta * b.recon2 + w.gamma * b.homo + w.delta * b.ssl +
         w.epsilon * b.trans + w.zeta * b.c_norm;
}

struct LossOptions {
  double subdiv = 10.0;        // Euler substep rate K
  int trans_stride = 4;        // grid subsampling for distance matrices
  bool trans_full = false;     // use every grid point (stride 1)
  bool c_norm_squared = false; // squared-norm variant of the offset penalty
};

// --- plain value-level losses ----------------------------------------------

template <typename T>
T mse_value(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.numel() != b.numel() || a.numel() == 0)
    throw std::invalid_argument("mse_value: element count mismatch");
  T s = T(0);
  for (int64_t i = 0; i < a.numel(); ++i) {
    const T d = a[i] - b[i];
    s += d * d;
  }
  return s / T(a.numel());
}

template <typename T>
void check_sequence(const std::vector<Tensor<T>>& frames, size_t min_frames, const char* where) {
  if (frames.size() < min_frames)
    throw std::invalid_argument(std::string(where) + ": sequence too short");
  for (const auto& f : frames) check_image(f, where);
}

// sum over i = 1..T-1 of MSE(I_i, [g(i l, c) then v(i l, c)] I_0)
template <typename T>
T recon_loss(const std::vector<Tensor<T>>& frames, const EncoderOutput<T>& enc,
             const OdeParams<T>& ode_g, const OdeParams<T>& ode_v, T subdiv) {
  check_sequence(frames, 2, "recon_loss");
  const auto g01 = enc.g01(), v01 = enc.v01();
  T loss = T(0);
  for (size_t i = 1; i < frames.size(); ++i) {
    const T fi = T(i);
    const std::vector<FlowStep<T>> steps{{ode_g, {fi * g01.lambda, g01.c}},
                                         {ode_v, {fi * v01.lambda, v01.c}}};
    loss += mse_value(frames[i], compose_apply(frames[0], steps, subdiv));
  }
  return loss;
}

// MSE(I_2, [g12 then v12] I_1)
template <typename T>
T recon2_loss(const std::vector<Tensor<T>>& frames, const EncoderOutput<T>& enc,
              const OdeParams<T>& ode_g, const OdeParams<T>& ode_v, T subdiv) {
  check_sequence(frames, 3, "recon2_loss");
  const std::vector<FlowStep<T>> steps{{ode_g, enc.g12()}, {ode_v, enc.v12()}};
  return mse_value(frames[2], compose_apply(frames[1], steps, subdiv));
}

// v run twice as far in one hop vs. chained v01, v12 hops
template <typename T>
T homo_loss(const std::vector<Tensor<T>>& frames, const EncoderOutput<T>& enc,
            const OdeParams<T>& ode_v, T subdiv) {
  check_sequence(frames, 3, "homo_loss");
  const auto v01 = enc.v01(), v12 = enc.v12();
  const Tensor<T> left =
      apply_transform(frames[0], ode_v, {T(2) * v01.lambda, v01.c}, subdiv);
  const Tensor<T> right =
      compose_apply(frames[0], std::vector<FlowStep<T>>{{ode_v, v01}, {ode_v, v12}}, subdiv);
  return mse_value(left, right);
}

// Distance matrix over points subsampled every `stride` rows/cols.
template <typename T>
Tensor<T> dist_matrix(const CoordGrid<T>& grid, int stride) {
  if (stride < 1 || stride >= std::max(grid.height, grid.width))
    throw std::invalid_argument("dist_matrix: stride out of range");
  std::vector<std::array<T, 2>> pts;
  for (int r = 0; r < grid.height; r += stride)
    for (int c = 0; c < grid.width; c += stride) pts.push_back({grid.x(r, c), grid.y(r, c)});
  const int P = int(pts.size());
  Tensor<T> d({P, P});
  for (int i = 0; i < P; ++i)
    for (int j = 0; j < P; ++j) {
      const T dx = pts[size_t(i)][0] - pts[size_t(j)][0];
      const T dy = pts[size_t(i)][1] - pts[size_t(j)][1];
      d.data[size_t(i) * P + j] = std::sqrt(dx * dx + dy * dy);
    }
  return d;
}

// sum over grids of MSE between the base and transformed distance matrices
template <typename T>
T trans_loss(const std::vector<CoordGrid<T>>& grids, const CoordGrid<T>& base, int stride) {
  const Tensor<T> d0 = dist_matrix(base, stride);
  T loss = T(0);
  for (const auto& g : grids) {
    if (g.height != base.height || g.width != base.width)
      throw std::invalid_argument("trans_loss: grid shape mismatch");
    loss += mse_value(dist_matrix(g, stride), d0);
  }
  return loss;
}

template <typename T>
T c_norm_loss(const EncoderOutput<T>& enc, bool squared = false) {
  T loss = T(0);
  for (const auto& tp : {enc.g01(), enc.v01(), enc.g12(), enc.v12()}) {
    const T sq = tp.c[0] * tp.c[0] + tp.c[1] * tp.c[1];
    loss += squared ? sq : T(std::sqrt(sq));
  }
  return loss;
}

// init target: lambda = 1, c = 0 for every transformation
template <typename T>
T init_loss(const EncoderOutput<T>& enc) {
  const std::array<T, 6> target{T(1), T(0), T(0), T(1), T(0), T(0)};
  T first = T(0), second = T(0);
  for (int j = 0; j < 6; ++j) {
    const T d1 = enc.raw[size_t(j)] - target[size_t(j)];
    const T d2 = enc.raw[size_t(j) + 6] - target[size_t(j)];
    first += d1 * d1;
    second += d2 * d2;
  }
  return first / T(6) + second / T(6);
}

// frames of the zeroed-component sequence: I_0 plus regenerated I_1..I_{T-1}
template <typename T>
std::vector<Tensor<T>> generate_zeroed_sequence(const std::vector<Tensor<T>>& frames,
                                                const EncoderOutput<T>& starred,
                                                const OdeParams<T>& ode_g,
                                                const OdeParams<T>& ode_v, T subdiv) {
  check_sequence(frames, 2, "generate_zeroed_sequence");
  const auto g01 = starred.g01(), v01 = starred.v01();
  std::vector<Tensor<T>> out;
  out.push_back(frames[0]);
  for (size_t i = 1; i < frames.size(); ++i) {
    const T fi = T(i);
    const std::vector<FlowStep<T>> steps{{ode_g, {fi * g01.lambda, g01.c}},
                                         {ode_v, {fi * v01.lambda, v01.c}}};
    out.push_back(compose_apply(frames[0], steps, subdiv));
  }
  return out;
}

// --- tape builders ----------------------------------------------------------

// ODE parameters live in the registry under fixed names; A and b start at
// zero so both transformations begin as the identity.
template <typename T>
void register_ode_params(ParamRegistry<T>& reg) {
  reg.add("ode_g.A", {2, 2});
  reg.add("ode_g.b", {2});
  reg.add("ode_v.A", {2, 2});
  reg.add("ode_v.b", {2});
}

template <typename T>
bool has_ode_params(const ParamRegistry<T>& reg) {
  return reg.find("ode_g.A") >= 0;
}

template <typename T>
struct SequenceLossNodes {
  NodeId enc_out = -1;
  NodeId recon = -1, recon2 = -1, homo = -1, ssl = -1, trans = -1, c_norm = -1;
  NodeId total = -1;

  LossBreakdown values(const Graph<T>& g) const {
    LossBreakdown b;
    b.recon = double(g.value(recon)[0]);
    b.recon2 = double(g.value(recon2)[0]);
    b.homo = double(g.value(homo)[0]);
    b.ssl = double(g.value(ssl)[0]);
    b.trans = double(g.value(trans)[0]);
    b.c_norm = double(g.value(c_norm)[0]);
    b.total = double(g.value(total)[0]);
    return b;
  }
};

// Frozen self-supervision context: the starred targets and regenerated
// sequences are constants of the objective (stop-gradient), so finite-
// difference oracles must be able to pin them across rebuilds.
template <typename T>
struct SslContext {
  bool valid = false;
  std::array<Tensor<T>, 2> target;                // 12-vector per branch
  std::array<std::vector<Tensor<T>>, 2> frames;   // regenerated sequence per branch
};

// Build the full per-sequence objective on the tape.  If `frozen` carries a
// valid context its targets/sequences are used verbatim; otherwise they are
// computed from the current encoder output values (and optionally captured).
template <typename T>
SequenceLossNodes<T> build_sequence_loss(Graph<T>& g, const std::vector<Tensor<T>>& frames,
                                         const EncoderConfig& cfg, const LossWeights& w,
                                         const LossOptions& opt,
                                         const std::type_identity_t<SslContext<T>>* frozen = nullptr,
                                         std::type_identity_t<SslContext<T>>* capture = nullptr) {
  check_sequence(frames, 3, "build_sequence_loss");
  const int S = cfg.image_size;
  const int T_len = int(frames.size());
  std::vector<NodeId> fnodes;
  for (const auto& f : frames) fnodes.push_back(g.constant(f));

  SequenceLossNodes<T> out;
  out.enc_out = encode(g, fnodes, cfg);
  const NodeId lam_g01 = g.slice(out.enc_out, 0, 1), c_g01 = g.slice(out.enc_out, 1, 2);
  const NodeId lam_v01 = g.slice(out.enc_out, 3, 1), c_v01 = g.slice(out.enc_out, 4, 2);
  const NodeId lam_g12 = g.slice(out.enc_out, 6, 1), c_g12 = g.slice(out.enc_out, 7, 2);
  const NodeId lam_v12 = g.slice(out.enc_out, 9, 1), c_v12 = g.slice(out.enc_out, 10, 2);
  const NodeId Ag = g.param("ode_g.A"), bg = g.param("ode_g.b");
  const NodeId Av = g.param("ode_v.A"), bv = g.param("ode_v.b");
  const NodeId base = g.constant(Graph<T>::grid_tensor(base_grid<T>(S, S), S, S));
  const T K = T(opt.subdiv);

  // g applied first in image space, so the base grid runs through v last...
  // i.e. integrate v's flow first, then g's (reverse application order).
  auto composed = [&](NodeId lam_g, NodeId cg, NodeId lam_v, NodeId cv) {
    return g.euler_chain(g.euler_chain(base, Av, bv, cv, lam_v, K), Ag, bg, cg, lam_g, K);
  };

  // sequence reconstruction from frame 0 with i-scaled flows
  NodeId recon = g.constant(Tensor<T>::scalar(T(0)));
  for (int i = 1; i < T_len; ++i) {
    const NodeId grid =
        composed(g.scale(lam_g01, T(i)), c_g01, g.scale(lam_v01, T(i)), c_v01);
    recon = g.add(recon, g.mse(fnodes[size_t(i)], g.bilinear_sample(fnodes[0], grid)));
  }
  out.recon = recon;

  // next-frame reconstruction from frame 1 with the 1 -> 2 transforms
  out.recon2 =
      g.mse(fnodes[2], g.bilinear_sample(fnodes[1], composed(lam_g12, c_g12, lam_v12, c_v12)));

  // homomorphism: one double-length v hop vs. chained v01, v12 hops
  {
    const NodeId left =
        g.bilinear_sample(fnodes[0], g.euler_chain(base, Av, bv, c_v01, g.scale(lam_v01, T(2)), K));
    const NodeId right = g.bilinear_sample(
        fnodes[0],
        g.euler_chain(g.euler_chain(base, Av, bv, c_v12, lam_v12, K), Av, bv, c_v01, lam_v01, K));
    out.homo = g.mse(left, right);
  }

  // single-transform grids for the isometry loss
  std::vector<NodeId> iso_grids{
      g.euler_chain(base, Ag, bg, c_g01, lam_g01, K),
      g.euler_chain(base, Av, bv, c_v01, lam_v01, K),
      g.euler_chain(base, Ag, bg, c_g12, lam_g12, K),
      g.euler_chain(base, Av, bv, c_v12, lam_v12, K),
  };

  // self-supervision: zero one component, regenerate, re-encode, compare
  OdeParams<T> ode_g_val, ode_v_val;
  std::copy_n(g.value(Ag).ptr(), 4, ode_g_val.A.begin());
  std::copy_n(g.value(bg).ptr(), 2, ode_g_val.b.begin());
  std::copy_n(g.value(Av).ptr(), 4, ode_v_val.A.begin());
  std::copy_n(g.value(bv).ptr(), 2, ode_v_val.b.begin());
  const auto enc_values = EncoderOutput<T>::from_tensor(g.value(out.enc_out));

  NodeId ssl = g.constant(Tensor<T>::scalar(T(0)));
  for (int branch = 0; branch < 2; ++branch) {
    Tensor<T> target;
    std::vector<Tensor<T>> snew;
    if (frozen && frozen->valid) {
      target = frozen->target[size_t(branch)];
      snew = frozen->frames[size_t(branch)];
    } else {
      const auto starred = enc_values.zeroed(/*zero_g=*/branch == 0);
      target = starred.to_tensor();
      snew = generate_zeroed_sequence(frames, starred, ode_g_val, ode_v_val, K);
      if (capture) {
        capture->target[size_t(branch)] = target;
        capture->frames[size_t(branch)] = snew;
      }
    }
    std::vector<NodeId> snew_nodes;
    for (const auto& f : snew) snew_nodes.push_back(g.constant(f));
    const NodeId enc2 = encode(g, snew_nodes, cfg);
    ssl = g.add(ssl, g.mse(enc2, g.constant(target)));

    // the regenerated transforms also feed the isometry loss
    iso_grids.push_back(g.euler_chain(base, Ag, bg, g.slice(enc2, 1, 2), g.slice(enc2, 0, 1), K));
    iso_grids.push_back(g.euler_chain(base, Av, bv, g.slice(enc2, 4, 2), g.slice(enc2, 3, 1), K));
    iso_grids.push_back(g.euler_chain(base, Ag, bg, g.slice(enc2, 7, 2), g.slice(enc2, 6, 1), K));
    iso_grids.push_back(g.euler_chain(base, Av, bv, g.slice(enc2, 10, 2), g.slice(enc2, 9, 1), K));
  }
  if (capture) capture->valid = true;
  out.ssl = ssl;

  // isometry: compare subsampled distance matrices against the base grid's
  const int stride = opt.trans_full ? 1 : opt.trans_stride;
  const NodeId d0 = g.constant(dist_matrix(base_grid<T>(S, S), stride));
  NodeId trans = g.constant(Tensor<T>::scalar(T(0)));
  for (const NodeId gridn : iso_grids)
    trans = g.add(trans, g.mse(g.pairwise_dist(gridn, stride), d0));
  out.trans = trans;

  // offset-norm penalty over the four c vectors
  {
    auto pen = [&](NodeId c) { return opt.c_norm_squared ? g.sum_sq(c) : g.norm2(c); };
    out.c_norm = g.add(g.add(pen(c_g01), pen(c_v01)), g.add(pen(c_g12), pen(c_v12)));
  }

  out.total = g.add(
      g.add(g.add(g.scale(out.recon, T(w.alpha)), g.scale(out.recon2, T(w.beta))),
            g.add(g.scale(out.homo, T(w.gamma)), g.scale(out.ssl, T(w.delta)))),
      g.add(g.scale(out.trans, T(w.epsilon)), g.scale(out.c_norm, T(w.zeta))));
  return out;
}

// Init-phase objective on the tape: encoder outputs pushed to lambda = 1,
// c = 0 for all four transformations.
template <typename T>
NodeId build_init_loss(Graph<T>& g, const std::vector<Tensor<T>>& frames,
                       const EncoderConfig& cfg) {
  check_sequence(frames, 3, "build_init_loss");
  std::vector<NodeId> fnodes;
  for (const auto& f : frames) fnodes.push_back(g.constant(f));
  const NodeId enc = encode(g, fnodes, cfg);
  Tensor<T> target({6});
  target.data = {T(1), T(0), T(0), T(1), T(0), T(0)};
  const NodeId tnode = g.constant(target);
  return g.add(g.mse(g.slice(enc, 0, 6), tnode), g.mse(g.slice(enc, 6, 6), tnode));
}

}  // namespace groupflow
