#pragma once

// Reverse-mode automatic differentiation on an append-only tape, sized for
// this model family: dense/conv/LSTM layers, ODE coordinate flows, bilinear
// warps and the loss reductions.  Node ids are topologically ordered by
// construction, so backward is a single reverse sweep.

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "core/flow.hpp"
#include "core/tensor.hpp"
#include "core/warp.hpp"

namespace groupflow {

// --- trainable parameter store ---------------------------------------------

template <typename T>
struct ParamEntry {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;  // accumulated across backward passes until the next optimizer step
  Tensor<T> m, v;  // optimizer moments
  bool trainable = true;
};

template <typename T>
class ParamRegistry {
 public:
  int add(const std::string& name, Tensor<T> init, bool trainable = true) {
    if (by_name_.count(name)) throw std::invalid_argument("duplicate parameter: " + name);
    ParamEntry<T> e;
    e.name = name;
    e.grad = Tensor<T>(init.shape);
    e.m = Tensor<T>(init.shape);
    e.v = Tensor<T>(init.shape);
    e.value = std::move(init);
    e.trainable = trainable;
    entries_.push_back(std::move(e));
    const int idx = int(entries_.size()) - 1;
    by_name_[name] = idx;
    return idx;
  }

  int add(const std::string& name, std::vector<int> shape, bool trainable = true) {
    return add(name, Tensor<T>(std::move(shape)), trainable);
  }

  int find(const std::string& name) const {
    auto it = by_name_.find(name);
    return it == by_name_.end() ? -1 : it->second;
  }

  ParamEntry<T>& at(int idx) { return entries_.at(size_t(idx)); }
  const ParamEntry<T>& at(int idx) const { return entries_.at(size_t(idx)); }

  ParamEntry<T>& at(const std::string& name) {
    const int idx = find(name);
    if (idx < 0) throw std::out_of_range("unknown parameter: " + name);
    return entries_[size_t(idx)];
  }
  const ParamEntry<T>& at(const std::string& name) const {
    return const_cast<ParamRegistry*>(this)->at(name);
  }

  size_t count() const { return entries_.size(); }
  std::vector<ParamEntry<T>>& entries() { return entries_; }
  const std::vector<ParamEntry<T>>& entries() const { return entries_; }

  void zero_grads() {
    for (auto& e : entries_) e.grad.fill(T(0));
  }

  void zero_moments() {
    for (auto& e : entries_) {
      e.m.fill(T(0));
      e.v.fill(T(0));
    }
  }

 private:
  std::vector<ParamEntry<T>> entries_;
  std::map<std::string, int> by_name_;
};

// --- RAdam ------------------------------------------------------------------

struct RAdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// One rectified-Adam update from the accumulated gradients; `step_index` is
// 1-based.  While the variance estimate is still unreliable (rho_t <= 4, the
// first four steps at beta2 = 0.999) the update falls back to plain
// bias-corrected momentum.  Gradient accumulators are cleared afterwards.
template <typename T>
void radam_step(ParamRegistry<T>& reg, T lr, int64_t step_index, const RAdamConfig& cfg = {}) {
  if (step_index < 1) throw std::invalid_argument("radam_step: step index is 1-based");
  const double b1 = cfg.beta1, b2 = cfg.beta2;
  const double b1t = std::pow(b1, double(step_index));
  const double b2t = std::pow(b2, double(step_index));
  const double rho_inf = 2.0 / (1.0 - b2) - 1.0;
  const double rho_t = rho_inf - 2.0 * double(step_index) * b2t / (1.0 - b2t);
  const bool rectify = rho_t > 4.0;
  double r = 0;
  if (rectify)
    r = std::sqrt(((rho_t - 4) * (rho_t - 2) * rho_inf) / ((rho_inf - 4) * (rho_inf - 2) * rho_t));
  for (auto& e : reg.entries()) {
    if (e.trainable) {
      for (int64_t i = 0; i < e.value.numel(); ++i) {
        const double g = double(e.grad[i]);
        const double m = b1 * double(e.m[i]) + (1 - b1) * g;
        const double v = b2 * double(e.v[i]) + (1 - b2) * g * g;
        e.m[i] = T(m);
        e.v[i] = T(v);
        const double mhat = m / (1 - b1t);
        double upd;
        if (rectify) {
          const double vhat = std::sqrt(v / (1 - b2t));
          upd = double(lr) * r * mhat / (vhat + cfg.eps);
        } else {
          upd = double(lr) * mhat;
        }
        e.value[i] = T(double(e.value[i]) - upd);
      }
    }
    e.grad.fill(T(0));
  }
}

// --- tape -------------------------------------------------------------------

using NodeId = int;

template <typename T>
class Graph {
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;
  using MapM = Eigen::Map<Mat>;
  using CMapM = Eigen::Map<const Mat>;
  using MapV = Eigen::Map<Vec>;
  using CMapV = Eigen::Map<const Vec>;

 public:
  explicit Graph(ParamRegistry<T>* reg = nullptr) : reg_(reg) {}

  size_t node_count() const { return nodes_.size(); }

  const Tensor<T>& value(NodeId id) const { return nodes_.at(size_t(id)).value; }

  // Gradient of the last backward()'s root wrt this node; zeros if the node
  // did not participate.
  Tensor<T> grad(NodeId id) const {
    const auto& n = nodes_.at(size_t(id));
    if (n.grad.numel() == 0) return Tensor<T>(n.value.shape);
    return n.grad;
  }

  // --- leaves ---------------------------------------------------------------

  NodeId constant(Tensor<T> v) { return push(std::move(v), {}, nullptr); }

  NodeId param(const std::string& name) {
    if (!reg_) throw std::logic_error("graph has no parameter registry");
    auto it = param_nodes_.find(name);
    if (it != param_nodes_.end()) return it->second;
    const int idx = reg_->find(name);
    if (idx < 0) throw std::out_of_range("unknown parameter: " + name);
    const NodeId id = push(reg_->at(idx).value, {}, nullptr);
    nodes_[size_t(id)].param_index = idx;
    param_nodes_[name] = id;
    return id;
  }

  // --- elementwise and linear ----------------------------------------------

  NodeId add(NodeId a, NodeId b) {
    check_same_shape(value(a), value(b), "add");
    Tensor<T> out = value(a);
    const auto& vb = value(b);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] += vb[i];
    return push(std::move(out), {a, b}, [](Graph& g, NodeId id) {
      const auto& up = g.node(id).grad;
      g.accumulate(g.node(id).inputs[0], up);
      g.accumulate(g.node(id).inputs[1], up);
    });
  }

  NodeId scale(NodeId a, T s) {
    Tensor<T> out = value(a);
    for (auto& x : out.data) x *= s;
    return push(std::move(out), {a}, [s](Graph& g, NodeId id) {
      Tensor<T> down = g.node(id).grad;
      for (auto& x : down.data) x *= s;
      g.accumulate(g.node(id).inputs[0], down);
    });
  }

  NodeId relu(NodeId a) {
    Tensor<T> out = value(a);
    for (auto& x : out.data) x = x > T(0) ? x : T(0);
    return push(std::move(out), {a}, [](Graph& g, NodeId id) {
      const auto& n = g.node(id);
      const auto& src = g.value(n.inputs[0]);
      Tensor<T> down(src.shape);
      for (int64_t i = 0; i < src.numel(); ++i)
        down[i] = src[i] > T(0) ? n.grad[i] : T(0);
      g.accumulate(n.inputs[0], down);
    });
  }

  NodeId sigmoid(NodeId a) {
    Tensor<T> out = value(a);
    for (auto& x : out.data) x = T(1) / (T(1) + std::exp(-x));
    return push(std::move(out), {a}, [](Graph& g, NodeId id) {
      const auto& n = g.node(id);
      Tensor<T> down(n.value.shape);
      for (int64_t i = 0; i < n.value.numel(); ++i)
        down[i] = n.grad[i] * n.value[i] * (T(1) - n.value[i]);
      g.accumulate(n.inputs[0], down);
    });
  }

  NodeId tanh_(NodeId a) {
    Tensor<T> out = value(a);
    for (auto& x : out.data) x = std::tanh(x);
    return push(std::move(out), {a}, [](Graph& g, NodeId id) {
      const auto& n = g.node(id);
      Tensor<T> down(n.value.shape);
      for (int64_t i = 0; i < n.value.numel(); ++i)
        down[i] = n.grad[i] * (T(1) - n.value[i] * n.value[i]);
      g.accumulate(n.inputs[0], down);
    });
  }

  NodeId reshape(NodeId a, std::vector<int> shape) {
    if (shape_numel(shape) != value(a).numel())
      throw std::invalid_argument("reshape: element count mismatch");
    Tensor<T> out = value(a);
    out.shape = shape;
    return push(std::move(out), {a}, [](Graph& g, NodeId id) {
      const auto& n = g.node(id);
      Tensor<T> down = n.grad;
      down.shape = g.value(n.inputs[0]).shape;
      g.accumulate(n.inputs[0], down);
    });
  }

  // contiguous slice of the flattened tensor -> 1-D [len]
  NodeId slice(NodeId a, int64_t offset, int64_t len) {
    const auto& va = value(a);
    if (offset < 0 || len < 0 || offset + len > va.numel())
      throw std::invalid_argument("slice: out of range");
    Tensor<T> out({int(len)});
    std::copy(va.data.begin() + offset, va.data.begin() + offset + len, out.data.begin());
    return push(std::move(out), {a}, [offset, len](Graph& g, NodeId id) {
      const auto& n = g.node(id);
      Tensor<T> down(g.value(n.inputs[0]).shape);
      std::copy(n.grad.data.begin(), n.grad.data.end(), down.data.begin() + offset);
      g.accumulate(n.inputs[0], down);
    });
  }

  // [m,k] x [k,n] -> [m,n]
  NodeId matmul(NodeId a, NodeId b) {
    const auto &va = value(a), &vb = value(b);
    if (va.ndim() != 2 || vb.ndim() != 2 || va.dim(1) != vb.dim(0))
      throw std::invalid_argument("matmul: incompatible shapes " + shape_str(va.shape) + " x " +
                                  shape_str(vb.shape));
    const int m = va.dim(0), k = va.dim(1), n = vb.dim(1);
    Tensor<T> out({m, n});
    MapM(out.ptr(), m, n) = CMapM(va.ptr(), m, k) * CMapM(vb.ptr(), k, n);
    return push(std::move(out), {a, b}, [m, k, n](Graph& g, NodeId id) {
      const auto& nd = g.node(id);
      const auto &va2 = g.value(nd.inputs[0]), &vb2 = g.value(nd.inputs[1]);
      Tensor<T> da({m, k}), db({k, n});
      MapM(da.ptr(), m, k) =
          CMapM(nd.grad.ptr(), m, n) * CMapM(vb2.ptr(), k, n).transpose();
      MapM(db.ptr(), k, n) =
          CMapM(va2.ptr(), m, k).transpose() * CMapM(nd.grad.ptr(), m, n);
      g.accumulate(nd.inputs[0], da);
      g.accumulate(nd.inputs[1], db);
    });
  }

  // w [O,I] x + b [O] for 1-D x [I]
  NodeId affine(NodeId x, NodeId w, NodeId b) {
    const auto &vx = value(x), &vw = value(w), &vb = value(b);
    if (vw.ndim() != 2 || vx.numel() != vw.dim(1) || vb.numel() != vw.dim(0))
      throw std::invalid_argument("affine: incompatible shapes");
    const int O = vw.dim(0), I = vw.dim(1);
    Tensor<T> out({O});
    MapV(out.ptr(), O) =
        CMapM(vw.ptr(), O, I) * CMapV(vx.ptr(), I) + CMapV(vb.ptr(), O);
    return push(std::move(out), {x, w, b}, [O, I](Graph& g, NodeId id) {
      const auto& nd = g.node(id);
      const auto &vx2 = g.value(nd.inputs[0]), &vw2 = g.value(nd.inputs[1]);
      Tensor<T> dx(vx2.shape), dw({O, I});
      MapV(dx.ptr(), I) = CMapM(vw2.ptr(), O, I).transpose() * CMapV(nd.grad.ptr(), O);
      MapM(dw.ptr(), O, I) = CMapV(nd.grad.ptr(), O) * CMapV(vx2.ptr(), I).transpose();
      g.accumulate(nd.inputs[0], dx);
      g.accumulate(nd.inputs[1], dw);
      g.accumulate(nd.inputs[2], nd.grad);
    });
  }

  // --- conv -------------------------------------------------------------

  // x [C,H,W], w [O,C,kh,kw], b [O]; im2col + GEMM.  The column matrix is
  // recomputed in backward rather than saved (it is the largest intermediate
  // and cheap to rebuild).
  NodeId conv2d(NodeId x, NodeId w, NodeId b, int stride, int pad) {
    const auto &vx = value(x), &vw = value(w), &vb = value(b);
    if (vx.ndim() != 3 || vw.ndim() != 4 || vw.dim(1) != vx.dim(0) || vb.numel() != vw.dim(0))
      throw std::invalid_argument("conv2d: incompatible shapes");
    const int C = vx.dim(0), H = vx.dim(1), W = vx.dim(2);
    const int O = vw.dim(0), kh = vw.dim(2), kw = vw.dim(3);
    const int OH = (H + 2 * pad - kh) / stride + 1, OW = (W + 2 * pad - kw) / stride + 1;
    if (OH < 1 || OW < 1) throw std::invalid_argument("conv2d: output would be empty");
    const int K = C * kh * kw, P = OH * OW;

    Tensor<T> cols({K, P});
    im2col(vx, kh, kw, stride, pad, OH, OW, cols);
    Tensor<T> out({O, OH, OW});
    MapM(out.ptr(), O, P) = CMapM(vw.ptr(), O, K) * CMapM(cols.ptr(), K, P);
    for (int o = 0; o < O; ++o)
      for (int p = 0; p < P; ++p) out.data[size_t(o) * P + p] += vb[o];

    auto geom = std::make_shared<ConvGeom>(ConvGeom{C, H, W, O, kh, kw, stride, pad, OH, OW});
    return push(std::move(out), {x, w, b}, [geom](Graph& g, NodeId id) {
      const auto& nd = g.node(id);
      const auto &vx2 = g.value(nd.inputs[0]), &vw2 = g.value(nd.inputs[1]);
      const auto& gm = *geom;
      const int K2 = gm.C * gm.kh * gm.kw, P2 = gm.OH * gm.OW;
      Tensor<T> cols2({K2, P2});
      im2col(vx2, gm.kh, gm.kw, gm.stride, gm.pad, gm.OH, gm.OW, cols2);

      Tensor<T> dw({gm.O, gm.C, gm.kh, gm.kw});
      MapM(dw.ptr(), gm.O, K2) =
          CMapM(nd.grad.ptr(), gm.O, P2) * CMapM(cols2.ptr(), K2, P2).transpose();
      g.accumulate(nd.inputs[1], dw);

      Tensor<T> db({gm.O});
      for (int o = 0; o < gm.O; ++o) {
        T s = T(0);
        for (int p = 0; p < P2; ++p) s += nd.grad.data[size_t(o) * P2 + p];
        db[o] = s;
      }
      g.accumulate(nd.inputs[2], db);

      Tensor<T> dcols({K2, P2});
      MapM(dcols.ptr(), K2, P2) =
          CMapM(vw2.ptr(), gm.O, K2).transpose() * CMapM(nd.grad.ptr(), gm.O, P2);
      Tensor<T> dx({gm.C, gm.H, gm.W});
      col2im(dcols, gm.kh, gm.kw, gm.stride, gm.pad, gm.OH, gm.OW, dx);
      g.accumulate(nd.inputs[0], dx);
    });
  }

  // --- LSTM cell --------------------------------------------------------

  // Fused cell: returns (h', c').  Gate blocks in weight/bias rows are
  // ordered [input, forget, cell, output].  Internally one node computes the
  // concatenated [h'; c'] and two slices split it.
  std::pair<NodeId, NodeId> lstm_cell(NodeId x, NodeId h, NodeId c, NodeId w_ih, NodeId w_hh,
                                      NodeId b_ih, NodeId b_hh) {
    const auto &vx = value(x), &vh = value(h), &vc = value(c);
    const auto &vwi = value(w_ih), &vwh = value(w_hh);
    const int I = int(vx.numel()), Hd = int(vh.numel());
    if (vwi.ndim() != 2 || vwi.dim(0) != 4 * Hd || vwi.dim(1) != I || vwh.ndim() != 2 ||
        vwh.dim(0) != 4 * Hd || vwh.dim(1) != Hd || vc.numel() != Hd ||
        value(b_ih).numel() != 4 * Hd || value(b_hh).numel() != 4 * Hd)
      throw std::invalid_argument("lstm_cell: incompatible shapes");

    Vec z = CMapM(vwi.ptr(), 4 * Hd, I) * CMapV(vx.ptr(), I) +
            CMapM(vwh.ptr(), 4 * Hd, Hd) * CMapV(vh.ptr(), Hd) +
            CMapV(value(b_ih).ptr(), 4 * Hd) + CMapV(value(b_hh).ptr(), 4 * Hd);
    auto gates = std::make_shared<Tensor<T>>(std::vector<int>{4 * Hd});  // post-activation
    for (int j = 0; j < 4 * Hd; ++j) {
      const int blk = j / Hd;
      (*gates)[j] = blk == 2 ? std::tanh(z[j]) : T(1) / (T(1) + std::exp(-z[j]));
    }
    Tensor<T> out({2 * Hd});  // [h'; c']
    auto tanh_c = std::make_shared<Tensor<T>>(std::vector<int>{Hd});
    for (int j = 0; j < Hd; ++j) {
      const T gi = (*gates)[j], gf = (*gates)[Hd + j], gg = (*gates)[2 * Hd + j],
              go = (*gates)[3 * Hd + j];
      const T cn = gf * vc[j] + gi * gg;
      out[Hd + j] = cn;
      (*tanh_c)[j] = std::tanh(cn);
      out[j] = go * (*tanh_c)[j];
    }

    const NodeId cell = push(std::move(out), {x, h, c, w_ih, w_hh, b_ih, b_hh},
                             [gates, tanh_c, I, Hd](Graph& g, NodeId id) {
      const auto& nd = g.node(id);
      const auto& vx2 = g.value(nd.inputs[0]);
      const auto& vh2 = g.value(nd.inputs[1]);
      const auto& vc2 = g.value(nd.inputs[2]);
      const auto& vwi2 = g.value(nd.inputs[3]);
      const auto& vwh2 = g.value(nd.inputs[4]);
      Tensor<T> dz({4 * Hd});
      Tensor<T> dc_prev({Hd});
      for (int j = 0; j < Hd; ++j) {
        const T gi = (*gates)[j], gf = (*gates)[Hd + j], gg = (*gates)[2 * Hd + j],
                go = (*gates)[3 * Hd + j];
        const T th = (*tanh_c)[j];
        const T dh = nd.grad[j];
        const T dc_new = nd.grad[Hd + j] + dh * go * (T(1) - th * th);
        const T dgo = dh * th;
        const T dgi = dc_new * gg;
        const T dgf = dc_new * vc2[j];
        const T dgg = dc_new * gi;
        dc_prev[j] = dc_new * gf;
        dz[j] = dgi * gi * (T(1) - gi);
        dz[Hd + j] = dgf * gf * (T(1) - gf);
        dz[2 * Hd + j] = dgg * (T(1) - gg * gg);
        dz[3 * Hd + j] = dgo * go * (T(1) - go);
      }
      Tensor<T> dx(vx2.shape), dh_prev(vh2.shape);
      MapV(dx.ptr(), I) = CMapM(vwi2.ptr(), 4 * Hd, I).transpose() * CMapV(dz.ptr(), 4 * Hd);
      MapV(dh_prev.ptr(), Hd) =
          CMapM(vwh2.ptr(), 4 * Hd, Hd).transpose() * CMapV(dz.ptr(), 4 * Hd);
      Tensor<T> dwi({4 * Hd, I}), dwh({4 * Hd, Hd});
      MapM(dwi.ptr(), 4 * Hd, I) =
          CMapV(dz.ptr(), 4 * Hd) * CMapV(vx2.ptr(), I).transpose();
      MapM(dwh.ptr(), 4 * Hd, Hd) =
          CMapV(dz.ptr(), 4 * Hd) * CMapV(vh2.ptr(), Hd).transpose();
      g.accumulate(nd.inputs[0], dx);
      g.accumulate(nd.inputs[1], dh_prev);
      g.accumulate(nd.inputs[2], dc_prev);
      g.accumulate(nd.inputs[3], dwi);
      g.accumulate(nd.inputs[4], dwh);
      g.accumulate(nd.inputs[5], dz);
      g.accumulate(nd.inputs[6], dz);
    });
    return {slice(cell, 0, Hd), slice(cell, Hd, Hd)};
  }

  // --- warping and flows ------------------------------------------------

  // src [C,H,W], grid [GH,GW,2] normalized -> [C,GH,GW]
  NodeId bilinear_sample(NodeId src, NodeId grid) {
    const auto &vs = value(src), &vg = value(grid);
    if (vs.ndim() != 3 || vg.ndim() != 3 || vg.dim(2) != 2)
      throw std::invalid_argument("bilinear_sample: need src [C,H,W], grid [GH,GW,2]");
    Tensor<T> out = sample(vs, tensor_grid(vg));
    return push(std::move(out), {src, grid}, [](Graph& g, NodeId id) {
      const auto& nd = g.node(id);
      const auto &vs2 = g.value(nd.inputs[0]), &vg2 = g.value(nd.inputs[1]);
      const int H = vs2.dim(1), W = vs2.dim(2);
      Tensor<T> dsrc(vs2.shape);
      std::vector<T> dxy;
      sample_backward(vs2, tensor_grid(vg2), nd.grad, &dsrc, &dxy);
      g.accumulate(nd.inputs[0], dsrc);
      // chain from pixel units back to normalized coordinates
      Tensor<T> dgrid(vg2.shape);
      const T hx = T(0.5) * T(W - 1), hy = T(0.5) * T(H - 1);
      for (size_t i = 0; i + 1 < dxy.size(); i += 2) {
        dgrid.data[i] = dxy[i] * hx;
        dgrid.data[i + 1] = dxy[i + 1] * hy;
      }
      g.accumulate(nd.inputs[1], dgrid);
    });
  }

  // Euler integration of every grid point through dp/dt = A p + b + c.
  // grid [H,W,2]; A numel 4, b and c numel 2, lambda numel 1.  The step count
  // comes from lambda's forward value and is treated as locally constant, so
  // the lambda gradient flows through the step length dt = lambda / n.
  // Backward recomputes each point's trajectory instead of saving it.
  NodeId euler_chain(NodeId grid, NodeId A, NodeId b, NodeId c, NodeId lambda, T subdiv) {
    const auto& vg = value(grid);
    if (vg.ndim() != 3 || vg.dim(2) != 2)
      throw std::invalid_argument("euler_chain: grid must be [H,W,2]");
    if (value(A).numel() != 4 || value(b).numel() != 2 || value(c).numel() != 2 ||
        value(lambda).numel() != 1)
      throw std::invalid_argument("euler_chain: parameter arity");
    OdeParams<T> ode;
    std::copy_n(value(A).ptr(), 4, ode.A.begin());
    std::copy_n(value(b).ptr(), 2, ode.b.begin());
    TransformParams<T> tp;
    tp.lambda = value(lambda)[0];
    std::copy_n(value(c).ptr(), 2, tp.c.begin());
    Tensor<T> out = grid_tensor(integrate(tensor_grid(vg), ode, tp, subdiv), vg.dim(0), vg.dim(1));
    return push(std::move(out), {grid, A, b, c, lambda}, [subdiv](Graph& g, NodeId id) {
      g.euler_backward(id, subdiv);
    });
  }

  // Distances between every pair of subsampled grid points: [P,P] for the
  // P = ceil(H/stride) * ceil(W/stride) points at (r, c) multiples of stride.
  NodeId pairwise_dist(NodeId grid, int stride) {
    const auto& vg = value(grid);
    if (vg.ndim() != 3 || vg.dim(2) != 2 || stride < 1)
      throw std::invalid_argument("pairwise_dist: grid must be [H,W,2], stride >= 1");
    const auto idx = std::make_shared<std::vector<int64_t>>(subsample_indices(vg, stride));
    const int P = int(idx->size());
    Tensor<T> out({P, P});
    for (int i = 0; i < P; ++i)
      for (int j = 0; j < P; ++j) {
        const T dx = vg.data[2 * (*idx)[i]] - vg.data[2 * (*idx)[j]];
        const T dy = vg.data[2 * (*idx)[i] + 1] - vg.data[2 * (*idx)[j] + 1];
        out.data[size_t(i) * P + j] = std::sqrt(dx * dx + dy * dy);
      }
    return push(std::move(out), {grid}, [idx, P](Graph& g, NodeId id) {
      const auto& nd = g.node(id);
      const auto& vg2 = g.value(nd.inputs[0]);
      Tensor<T> dgrid(vg2.shape);
      for (int i = 0; i < P; ++i)
        for (int j = 0; j < P; ++j) {
          const T d = nd.value.data[size_t(i) * P + j];
          if (d <= T(0)) continue;  // coincident points: subgradient 0
          const T gd = nd.grad.data[size_t(i) * P + j] / d;
          const T dx = vg2.data[2 * (*idx)[i]] - vg2.data[2 * (*idx)[j]];
          const T dy = vg2.data[2 * (*idx)[i] + 1] - vg2.data[2 * (*idx)[j] + 1];
          dgrid.data[2 * (*idx)[i]] += gd * dx;
          dgrid.data[2 * (*idx)[i] + 1] += gd * dy;
          dgrid.data[2 * (*idx)[j]] -= gd * dx;
          dgrid.data[2 * (*idx)[j] + 1] -= gd * dy;
        }
      g.accumulate(nd.inputs[0], dgrid);
    });
  }

  // --- reductions -------------------------------------------------------

  // mean of elementwise squared differences (scalar)
  NodeId mse(NodeId a, NodeId b) {
    const auto &va = value(a), &vb = value(b);
    if (va.numel() != vb.numel()) throw std::invalid_argument("mse: element count mismatch");
    if (va.numel() == 0) throw std::invalid_argument("mse: empty tensors");
    T s = T(0);
    for (int64_t i = 0; i < va.numel(); ++i) {
      const T d = va[i] - vb[i];
      s += d * d;
    }
    Tensor<T> out = Tensor<T>::scalar(s / T(va.numel()));
    return push(std::move(out), {a, b}, [](Graph& g, NodeId id) {
      const auto& nd = g.node(id);
      const auto &va2 = g.value(nd.inputs[0]), &vb2 = g.value(nd.inputs[1]);
      const T f = nd.grad[0] * T(2) / T(va2.numel());
      Tensor<T> da(va2.shape), db(vb2.shape);
      for (int64_t i = 0; i < va2.numel(); ++i) {
        const T d = f * (va2[i] - vb2[i]);
        da[i] = d;
        db.data[size_t(i)] = -d;
      }
      g.accumulate(nd.inputs[0], da);
      g.accumulate(nd.inputs[1], db);
    });
  }

  // Euclidean norm (scalar); subgradient 0 at the origin
  NodeId norm2(NodeId a) {
    const auto& va = value(a);
    T s = T(0);
    for (int64_t i = 0; i < va.numel(); ++i) s += va[i] * va[i];
    Tensor<T> out = Tensor<T>::scalar(std::sqrt(s));
    return push(std::move(out), {a}, [](Graph& g, NodeId id) {
      const auto& nd = g.node(id);
      const auto& va2 = g.value(nd.inputs[0]);
      const T nrm = nd.value[0];
      if (nrm <= T(0)) return;
      Tensor<T> da(va2.shape);
      const T f = nd.grad[0] / nrm;
      for (int64_t i = 0; i < va2.numel(); ++i) da[i] = f * va2[i];
      g.accumulate(nd.inputs[0], da);
    });
  }

  // sum of squares (scalar)
  NodeId sum_sq(NodeId a) {
    const auto& va = value(a);
    T s = T(0);
    for (int64_t i = 0; i < va.numel(); ++i) s += va[i] * va[i];
    Tensor<T> out = Tensor<T>::scalar(s);
    return push(std::move(out), {a}, [](Graph& g, NodeId id) {
      const auto& nd = g.node(id);
      const auto& va2 = g.value(nd.inputs[0]);
      Tensor<T> da(va2.shape);
      const T f = nd.grad[0] * T(2);
      for (int64_t i = 0; i < va2.numel(); ++i) da[i] = f * va2[i];
      g.accumulate(nd.inputs[0], da);
    });
  }

  // --- backward ---------------------------------------------------------

  // Single reverse sweep from a scalar root.  Parameter gradients accumulate
  // into the registry (summed across multiple graphs until the optimizer
  // consumes them).  A graph can only run backward once.
  void backward(NodeId root) {
    if (consumed_) throw std::logic_error("backward: tape already consumed");
    auto& rn = nodes_.at(size_t(root));
    if (rn.value.numel() != 1) throw std::invalid_argument("backward: root must be scalar");
    consumed_ = true;
    rn.grad = Tensor<T>(rn.value.shape);
    rn.grad[0] = T(1);
    for (NodeId id = root; id >= 0; --id) {
      auto& n = nodes_[size_t(id)];
      if (n.grad.numel() == 0) continue;  // unreachable from root
      if (n.param_index >= 0) {
        auto& e = reg_->at(n.param_index);
        for (int64_t i = 0; i < e.grad.numel(); ++i) e.grad[i] += n.grad[i];
      } else if (n.back) {
        n.back(*this, id);
      }
    }
  }

  // --- plain-value helpers (shared with non-autodiff callers) -----------

  static CoordGrid<T> tensor_grid(const Tensor<T>& t) {
    CoordGrid<T> g(t.dim(0), t.dim(1));
    g.pts = t.data;
    return g;
  }

  static Tensor<T> grid_tensor(const CoordGrid<T>& g, int h, int w) {
    Tensor<T> t({h, w, 2});
    t.data = g.pts;
    return t;
  }

 private:
  struct ConvGeom {
    int C, H, W, O, kh, kw, stride, pad, OH, OW;
  };

  struct Node {
    Tensor<T> value;
    Tensor<T> grad;  // empty until touched in backward
    std::vector<NodeId> inputs;
    std::function<void(Graph&, NodeId)> back;
    int param_index = -1;
  };

  Node& node(NodeId id) { return nodes_.at(size_t(id)); }

  NodeId push(Tensor<T> value, std::vector<NodeId> inputs,
              std::function<void(Graph&, NodeId)> back) {
    Node n;
    n.value = std::move(value);
    n.inputs = std::move(inputs);
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return NodeId(nodes_.size()) - 1;
  }

  void accumulate(NodeId id, const Tensor<T>& g) {
    auto& n = nodes_.at(size_t(id));
    if (n.grad.numel() == 0) n.grad = Tensor<T>(n.value.shape);
    for (int64_t i = 0; i < g.numel(); ++i) n.grad[i] += g[i];
  }

  static void im2col(const Tensor<T>& x, int kh, int kw, int stride, int pad, int OH, int OW,
                     Tensor<T>& cols) {
    const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
    const int P = OH * OW;
    T* out = cols.ptr();
    for (int ch = 0; ch < C; ++ch)
      for (int ky = 0; ky < kh; ++ky)
        for (int kx = 0; kx < kw; ++kx) {
          const T* src = x.ptr() + size_t(ch) * H * W;
          for (int oy = 0; oy < OH; ++oy) {
            const int iy = oy * stride - pad + ky;
            for (int ox = 0; ox < OW; ++ox) {
              const int ix = ox * stride - pad + kx;
              *out++ = (iy >= 0 && iy < H && ix >= 0 && ix < W)
                           ? src[size_t(iy) * W + ix]
                           : T(0);
            }
          }
          (void)P;
        }
  }

  static void col2im(const Tensor<T>& cols, int kh, int kw, int stride, int pad, int OH, int OW,
                     Tensor<T>& x) {
    const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
    const T* in = cols.ptr();
    for (int ch = 0; ch < C; ++ch)
      for (int ky = 0; ky < kh; ++ky)
        for (int kx = 0; kx < kw; ++kx) {
          T* dst = x.ptr() + size_t(ch) * H * W;
          for (int oy = 0; oy < OH; ++oy) {
            const int iy = oy * stride - pad + ky;
            for (int ox = 0; ox < OW; ++ox) {
              const int ix = ox * stride - pad + kx;
              const T v = *in++;
              if (iy >= 0 && iy < H && ix >= 0 && ix < W) dst[size_t(iy) * W + ix] += v;
            }
          }
        }
  }

  static std::vector<int64_t> subsample_indices(const Tensor<T>& grid, int stride) {
    const int H = grid.dim(0), W = grid.dim(1);
    std::vector<int64_t> idx;
    for (int r = 0; r < H; r += stride)
      for (int c = 0; c < W; c += stride) idx.push_back(int64_t(r) * W + c);
    return idx;
  }

  void euler_backward(NodeId id, T subdiv) {
    auto& nd = node(id);
    const auto& vg = value(nd.inputs[0]);
    const int H = vg.dim(0), W = vg.dim(1);
    OdeParams<T> ode;
    std::copy_n(value(nd.inputs[1]).ptr(), 4, ode.A.begin());
    std::copy_n(value(nd.inputs[2]).ptr(), 2, ode.b.begin());
    const T lambda = value(nd.inputs[4])[0];
    const T cx = value(nd.inputs[3])[0], cy = value(nd.inputs[3])[1];
    const auto plan = plan_steps(lambda, subdiv);
    const T dt = plan.dt;
    const int n = plan.steps;
    const T u0 = ode.b[0] + cx, u1 = ode.b[1] + cy;

    Tensor<T> dgrid(vg.shape);
    std::array<T, 4> dA{};
    std::array<T, 2> du{};
    T ddt = T(0);
    std::vector<std::array<T, 2>> traj(size_t(n) + 1);
    const int64_t np = int64_t(H) * W;
    for (int64_t i = 0; i < np; ++i) {
      traj[0] = {vg.data[2 * i], vg.data[2 * i + 1]};
      for (int k = 0; k < n; ++k) {
        const T px = traj[size_t(k)][0], py = traj[size_t(k)][1];
        traj[size_t(k) + 1] = {px + dt * (ode.A[0] * px + ode.A[1] * py + u0),
                               py + dt * (ode.A[2] * px + ode.A[3] * py + u1)};
      }
      T gx = nd.grad.data[2 * i], gy = nd.grad.data[2 * i + 1];
      for (int k = n - 1; k >= 0; --k) {
        const T px = traj[size_t(k)][0], py = traj[size_t(k)][1];
        const T vx = ode.A[0] * px + ode.A[1] * py + u0;
        const T vy = ode.A[2] * px + ode.A[3] * py + u1;
        ddt += gx * vx + gy * vy;
        dA[0] += dt * gx * px;
        dA[1] += dt * gx * py;
        dA[2] += dt * gy * px;
        dA[3] += dt * gy * py;
        du[0] += dt * gx;
        du[1] += dt * gy;
        const T ngx = gx + dt * (ode.A[0] * gx + ode.A[2] * gy);
        const T ngy = gy + dt * (ode.A[1] * gx + ode.A[3] * gy);
        gx = ngx;
        gy = ngy;
      }
      dgrid.data[2 * i] = gx;
      dgrid.data[2 * i + 1] = gy;
    }
    accumulate(nd.inputs[0], dgrid);
    Tensor<T> tA({2, 2});
    std::copy_n(dA.begin(), 4, tA.ptr());
    tA.shape = value(nd.inputs[1]).shape;
    accumulate(nd.inputs[1], tA);
    Tensor<T> tb(value(nd.inputs[2]).shape);
    tb[0] = du[0];
    tb[1] = du[1];
    accumulate(nd.inputs[2], tb);
    Tensor<T> tc(value(nd.inputs[3]).shape);
    tc[0] = du[0];
    tc[1] = du[1];
    accumulate(nd.inputs[3], tc);
    Tensor<T> tl(value(nd.inputs[4]).shape);
    tl[0] = ddt / T(n);
    accumulate(nd.inputs[4], tl);
  }

  std::vector<Node> nodes_;
  std::map<std::string, NodeId> param_nodes_;
  ParamRegistry<T>* reg_;
  bool consumed_ = false;
};

}  // namespace groupflow
