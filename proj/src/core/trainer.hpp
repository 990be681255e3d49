// Two-phase training driver.
//
// Phase "init" teaches the encoder to emit identity transforms (lambda = 1,
// c = 0) while the ODE fields stay frozen at zero; phase "main" optimizes the
// full objective jointly over ODE and encoder parameters with one RAdam
// instance.  The optimizer restarts (fresh moments, t = 0) at the phase
// boundary because the two phases minimize different objectives.
//
// Reproducibility: encoder init draws from derive_seed(seed, 0); the batch
// for step s of a phase draws from derive_seed(seed, stream + s) with
// disjoint stream offsets per phase, so a resumed run samples the same
// batches as an uninterrupted one.  The last sequences of the dataset are
// held out of init-phase sampling and used for the held-out convergence
// check.
#pragma once

#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "core/datagen.hpp"
#include "core/encoder.hpp"
#include "core/graph.hpp"
#include "core/io.hpp"
#include "core/losses.hpp"

namespace groupflow {

struct TrainConfig {
  int64_t init_steps = 1000;
  int64_t main_steps = 20000;
  double lr = 1e-4;
  double k = 10.0;  // flow subdivision constant
  LossWeights weights;
  int batch_size = 16;
  int dataset_size = 512;  // used by callers that generate data
  int trans_stride = 4;
  bool trans_full = false;
  bool c_norm_squared = false;
  uint64_t seed = 0;
  int64_t checkpoint_interval = 1000;
  EncoderConfig encoder;

  void validate() const {
    if (init_steps < 0 || main_steps < 0) throw std::invalid_argument("negative step count");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be positive");
    if (lr < 0) throw std::invalid_argument("negative learning rate");
    if (k <= 0) throw std::invalid_argument("subdivision constant must be positive");
    for (const double w : {weights.alpha, weights.beta, weights.gamma, weights.delta,
                           weights.epsilon, weights.zeta})
      if (w < 0) throw std::invalid_argument("loss weights must be non-negative");
    encoder.validate();
  }
};

struct EvalResult {
  std::vector<LossBreakdown> per_sequence;
  LossBreakdown mean;
  double recon_frame_mse = 0;  // mean.recon averaged over the T-1 compared frames
};

template <typename T>
class Trainer {
 public:
  using StepFn = std::function<void(const MetricsRecord&)>;

  explicit Trainer(const TrainConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    groupflow::Rng rng(derive_seed(cfg_.seed, 0));
    register_encoder_params(reg_, cfg_.encoder, rng);
    register_ode_params(reg_);
    set_ode_trainable(false);  // frozen through the init phase
  }

  void attach_dataset(const Dataset& ds) {
    if (ds.image_size != cfg_.encoder.image_size)
      throw std::invalid_argument("dataset image size does not match the encoder");
    frames_.clear();
    for (const auto& seq : ds.sequences) {
      std::vector<Tensor<T>> fr;
      for (const auto& f : seq.frames) fr.push_back(f.template cast<T>());
      frames_.push_back(std::move(fr));
    }
    const int64_t n = int64_t(frames_.size());
    if (n < 1) throw std::invalid_argument("empty dataset");
    holdout_ = n > 2 * cfg_.batch_size ? int64_t(cfg_.batch_size) : (n >= 4 ? n / 4 : 0);
    train_count_ = n - holdout_;
  }

  // Runs the remaining init-phase steps and returns the held-out init loss.
  // A value above the convergence threshold is the caller's to report.
  double run_init(const StepFn& on_step = {}) {
    require_dataset();
    if (phase_ != "init") throw std::logic_error("init phase already completed");
    for (; step_ < cfg_.init_steps; ) {
      const auto batch = draw_batch(kInitStream);
      Graph<T> g(&reg_);
      std::vector<NodeId> losses;
      for (const int64_t idx : batch)
        losses.push_back(build_init_loss(g, frames_[size_t(idx)], cfg_.encoder));
      const NodeId total = batch_mean(g, losses);
      const double value = double(g.value(total)[0]);
      g.backward(total);
      radam_step(reg_, T(cfg_.lr), ++optim_step_);
      ++step_;
      if (on_step) {
        MetricsRecord rec;
        rec.step = step_;
        rec.phase = "init";
        rec.losses.total = value;
        on_step(rec);
      }
    }
    init_holdout_loss_ = holdout_init_loss();
    return init_holdout_loss_;
  }

  void run_main(const StepFn& on_step = {}) {
    require_dataset();
    if (phase_ == "init") begin_main_phase();
    for (; step_ < cfg_.main_steps; ) {
      const auto batch = draw_batch(kMainStream);
      Graph<T> g(&reg_);
      LossBreakdown mean_terms;
      std::vector<NodeId> totals;
      for (const int64_t idx : batch) {
        const auto nodes =
            build_sequence_loss(g, frames_[size_t(idx)], cfg_.encoder, cfg_.weights, opts());
        totals.push_back(nodes.total);
        accumulate(mean_terms, nodes.values(g), 1.0 / double(batch.size()));
      }
      const NodeId total = batch_mean(g, totals);
      g.backward(total);
      radam_step(reg_, T(cfg_.lr), ++optim_step_);
      ++step_;
      if (on_step) {
        MetricsRecord rec;
        rec.step = step_;
        rec.phase = "main";
        rec.losses = mean_terms;
        on_step(rec);
      }
    }
  }

  // No-gradient pass over every sequence of the attached dataset.
  EvalResult evaluate() {
    require_dataset();
    EvalResult out;
    for (const auto& fr : frames_) {
      Graph<T> g(&reg_);
      const auto nodes = build_sequence_loss(g, fr, cfg_.encoder, cfg_.weights, opts());
      out.per_sequence.push_back(nodes.values(g));
    }
    for (const auto& b : out.per_sequence)
      accumulate(out.mean, b, 1.0 / double(out.per_sequence.size()));
    const int compared = int(frames_.front().size()) - 1;
    out.recon_frame_mse = out.mean.recon / double(compared);
    return out;
  }

  void save_state(const std::string& path) const {
    CheckpointMeta meta;
    meta.step = step_;
    meta.optim_step = optim_step_;
    meta.phase = phase_;
    meta.config = config_echo();
    save_checkpoint(path, reg_, meta);
  }

  void load_state(const std::string& path) {
    const auto meta = load_checkpoint(path, reg_);
    step_ = meta.step;
    optim_step_ = meta.optim_step;
    phase_ = meta.phase;
  }

  OdeParams<double> ode_values(const std::string& which) const {
    const auto& a = reg_.at("ode_" + which + ".A").value;
    const auto& b = reg_.at("ode_" + which + ".b").value;
    OdeParams<double> ode;
    for (int i = 0; i < 4; ++i) ode.A[size_t(i)] = double(a[i]);
    for (int i = 0; i < 2; ++i) ode.b[size_t(i)] = double(b[i]);
    return ode;
  }

  ParamRegistry<T>& registry() { return reg_; }
  const ParamRegistry<T>& registry() const { return reg_; }
  const TrainConfig& config() const { return cfg_; }
  int64_t step() const { return step_; }
  int64_t optim_step() const { return optim_step_; }
  const std::string& phase() const { return phase_; }
  double init_holdout_loss() const { return init_holdout_loss_; }
  int64_t holdout_count() const { return holdout_; }

  // Encoder outputs for one attached sequence (evaluation helper).
  EncoderOutput<double> encode_sequence(size_t index) {
    require_dataset();
    Graph<T> g(&reg_);
    std::vector<NodeId> fn;
    for (const auto& f : frames_.at(index)) fn.push_back(g.constant(f));
    const auto enc = g.value(encode(g, fn, cfg_.encoder));
    EncoderOutput<double> out;
    for (int i = 0; i < 12; ++i) out.raw[size_t(i)] = double(enc[i]);
    return out;
  }

  // Same, for frames that are not part of the attached dataset.
  EncoderOutput<double> encode_frames(const std::vector<Tensor<double>>& frames) {
    Graph<T> g(&reg_);
    std::vector<NodeId> fn;
    for (const auto& f : frames) fn.push_back(g.constant(f.template cast<T>()));
    const auto enc = g.value(encode(g, fn, cfg_.encoder));
    EncoderOutput<double> out;
    for (int i = 0; i < 12; ++i) out.raw[size_t(i)] = double(enc[i]);
    return out;
  }

 private:
  static constexpr uint64_t kInitStream = uint64_t(1) << 20;
  static constexpr uint64_t kMainStream = uint64_t(2) << 20;

  void require_dataset() const {
    if (frames_.empty()) throw std::logic_error("no dataset attached");
  }

  LossOptions opts() const {
    LossOptions o;
    o.subdiv = cfg_.k;
    o.trans_stride = cfg_.trans_stride;
    o.trans_full = cfg_.trans_full;
    o.c_norm_squared = cfg_.c_norm_squared;
    return o;
  }

  void set_ode_trainable(bool on) {
    for (const char* name : {"ode_g.A", "ode_g.b", "ode_v.A", "ode_v.b"})
      reg_.at(name).trainable = on;
  }

  void begin_main_phase() {
    set_ode_trainable(true);
    reg_.zero_moments();
    optim_step_ = 0;
    step_ = 0;
    phase_ = "main";
  }

  std::vector<int64_t> draw_batch(uint64_t stream) {
    groupflow::Rng rng(derive_seed(cfg_.seed, stream + uint64_t(step_)));
    std::vector<int64_t> batch;
    for (int i = 0; i < cfg_.batch_size; ++i)
      batch.push_back(int64_t(rng.uniform_int(int(train_count_))));
    return batch;
  }

  NodeId batch_mean(Graph<T>& g, const std::vector<NodeId>& xs) {
    NodeId acc = xs.front();
    for (size_t i = 1; i < xs.size(); ++i) acc = g.add(acc, xs[i]);
    return g.scale(acc, T(1.0 / double(xs.size())));
  }

  static void accumulate(LossBreakdown& into, const LossBreakdown& b, double w) {
    into.recon += w * b.recon;
    into.recon2 += w * b.recon2;
    into.homo += w * b.homo;
    into.ssl += w * b.ssl;
    into.trans += w * b.trans;
    into.c_norm += w * b.c_norm;
    into.total += w * b.total;
  }

  double holdout_init_loss() {
    const int64_t n = int64_t(frames_.size());
    const int64_t from = holdout_ > 0 ? train_count_ : 0;
    double sum = 0;
    int64_t count = 0;
    for (int64_t i = from; i < n; ++i) {
      Graph<T> g(&reg_);
      sum += double(g.value(build_init_loss(g, frames_[size_t(i)], cfg_.encoder))[0]);
      ++count;
    }
    return sum / double(count);
  }

  nlohmann::json config_echo() const {
    nlohmann::json j;
    j["init_steps"] = cfg_.init_steps;
    j["main_steps"] = cfg_.main_steps;
    j["lr"] = cfg_.lr;
    j["k"] = cfg_.k;
    j["weights"] = {cfg_.weights.alpha, cfg_.weights.beta,  cfg_.weights.gamma,
                    cfg_.weights.delta, cfg_.weights.epsilon, cfg_.weights.zeta};
    j["batch_size"] = cfg_.batch_size;
    j["trans_stride"] = cfg_.trans_stride;
    j["trans_full"] = cfg_.trans_full;
    j["c_norm_squared"] = cfg_.c_norm_squared;
    j["seed"] = cfg_.seed;
    j["image_size"] = cfg_.encoder.image_size;
    return j;
  }

  TrainConfig cfg_;
  ParamRegistry<T> reg_;
  std::vector<std::vector<Tensor<T>>> frames_;
  int64_t train_count_ = 0;
  int64_t holdout_ = 0;
  int64_t step_ = 0;
  int64_t optim_step_ = 0;
  std::string phase_ = "init";
  double init_holdout_loss_ = -1;
};

}  // namespace groupflow
