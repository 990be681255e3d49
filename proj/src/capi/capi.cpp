#include "groupflow/groupflow.h"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "core/analysis.hpp"
#include "core/io.hpp"
#include "core/trainer.hpp"
#include "core/warp.hpp"

namespace gf = groupflow;
namespace fs = std::filesystem;

namespace {

thread_local std::string t_last_error;

void set_err(const std::string& msg) { t_last_error = msg; }

template <typename F>
gf_status guarded(F&& f) {
  try {
    f();
    return GF_OK;
  } catch (const gf::FlowDivergedError& e) {
    set_err(std::string("divergence guard: ") + e.what());
    return GF_ERR_DIVERGED;
  } catch (const gf::FormatError& e) {
    set_err(e.what());
    return GF_ERR_FORMAT;
  } catch (const fs::filesystem_error& e) {
    set_err(e.what());
    return GF_ERR_IO;
  } catch (const std::invalid_argument& e) {
    set_err(e.what());
    return GF_ERR_INVALID_ARGUMENT;
  } catch (const std::logic_error& e) {
    set_err(e.what());
    return GF_ERR_STATE;
  } catch (const std::runtime_error& e) {
    set_err(e.what());
    return GF_ERR_IO;
  } catch (const std::exception& e) {
    set_err(e.what());
    return GF_ERR_INTERNAL;
  }
}

gf_status fail_invalid(const char* msg) {
  set_err(msg);
  return GF_ERR_INVALID_ARGUMENT;
}

using StepFn = std::function<void(const gf::MetricsRecord&)>;

// Precision-erased face of Trainer<T> so one handle serves f32 and f64.
struct TrainerAny {
  virtual ~TrainerAny() = default;
  virtual void attach(const gf::Dataset& ds) = 0;
  virtual double run_init(const StepFn& fn) = 0;
  virtual void run_main(const StepFn& fn) = 0;
  virtual gf::EvalResult evaluate() = 0;
  virtual void save(const std::string& path) const = 0;
  virtual void load(const std::string& path) = 0;
  virtual int64_t step() const = 0;
  virtual const std::string& phase() const = 0;
  virtual double init_holdout() const = 0;
  virtual gf::OdeParams<double> ode(const std::string& which) const = 0;
  virtual gf::EncoderOutput<double> encode_frames(const std::vector<gf::Tensor<double>>& fr) = 0;
  virtual const gf::TrainConfig& config() const = 0;
};

template <typename T>
struct TrainerImpl final : TrainerAny {
  gf::Trainer<T> t;
  explicit TrainerImpl(const gf::TrainConfig& cfg) : t(cfg) {}
  void attach(const gf::Dataset& ds) override { t.attach_dataset(ds); }
  double run_init(const StepFn& fn) override { return t.run_init(fn); }
  void run_main(const StepFn& fn) override { t.run_main(fn); }
  gf::EvalResult evaluate() override { return t.evaluate(); }
  void save(const std::string& path) const override { t.save_state(path); }
  void load(const std::string& path) override { t.load_state(path); }
  int64_t step() const override { return t.step(); }
  const std::string& phase() const override { return t.phase(); }
  double init_holdout() const override { return t.init_holdout_loss(); }
  gf::OdeParams<double> ode(const std::string& which) const override {
    return t.ode_values(which);
  }
  gf::EncoderOutput<double> encode_frames(const std::vector<gf::Tensor<double>>& fr) override {
    return t.encode_frames(fr);
  }
  const gf::TrainConfig& config() const override { return t.config(); }
};

gf::TrainConfig to_core(const gf_train_config& c) {
  gf::TrainConfig cfg;
  cfg.init_steps = c.init_steps;
  cfg.main_steps = c.main_steps;
  cfg.lr = c.lr;
  cfg.k = c.k;
  cfg.weights.alpha = c.weights[0];
  cfg.weights.beta = c.weights[1];
  cfg.weights.gamma = c.weights[2];
  cfg.weights.delta = c.weights[3];
  cfg.weights.epsilon = c.weights[4];
  cfg.weights.zeta = c.weights[5];
  cfg.batch_size = c.batch_size;
  cfg.trans_stride = c.trans_stride;
  cfg.seed = c.seed;
  cfg.checkpoint_interval = c.checkpoint_interval;
  cfg.encoder.image_size = c.image_size;
  return cfg;
}

nlohmann::json config_echo(const gf_train_config& c) {
  nlohmann::json j;
  j["init_steps"] = c.init_steps;
  j["main_steps"] = c.main_steps;
  j["lr"] = c.lr;
  j["k"] = c.k;
  j["weights"] = {c.weights[0], c.weights[1], c.weights[2],
                  c.weights[3], c.weights[4], c.weights[5]};
  j["batch_size"] = c.batch_size;
  j["trans_stride"] = c.trans_stride;
  j["seed"] = c.seed;
  j["image_size"] = c.image_size;
  j["precision"] = c.use_f64 ? "f64" : "f32";
  return j;
}

}  // namespace

struct gf_dataset {
  gf::Dataset ds;
};

struct gf_trainer {
  std::unique_ptr<TrainerAny> t;
  gf_train_config cfg{};
  bool attached = false;
};

extern "C" {

const char* gf_status_name(gf_status s) {
  switch (s) {
    case GF_OK: return "GF_OK";
    case GF_ERR_INVALID_ARGUMENT: return "GF_ERR_INVALID_ARGUMENT";
    case GF_ERR_IO: return "GF_ERR_IO";
    case GF_ERR_FORMAT: return "GF_ERR_FORMAT";
    case GF_ERR_DIVERGED: return "GF_ERR_DIVERGED";
    case GF_ERR_STATE: return "GF_ERR_STATE";
    case GF_ERR_INTERNAL: return "GF_ERR_INTERNAL";
  }
  return "GF_ERR_UNKNOWN";
}

const char* gf_last_error(void) { return t_last_error.c_str(); }

int gf_api_version(void) { return 1; }

gf_status gf_dataset_generate(const char* kind, int n, unsigned long long seed,
                              int image_size, int frames, gf_dataset** out) {
  if (!kind || !out) return fail_invalid("null argument");
  return guarded([&] {
    gf::ObjectKind k;
    if (std::string(kind) == "square") k = gf::ObjectKind::square;
    else if (std::string(kind) == "semicircle") k = gf::ObjectKind::semicircle;
    else throw std::invalid_argument("unknown kind '" + std::string(kind) +
                                     "' (expected square or semicircle)");
    gf::GenOptions opt;
    opt.image_size = image_size;
    opt.frames = frames;
    auto ds = std::make_unique<gf_dataset>();
    ds->ds = gf::gen_dataset(n, k, seed, opt);
    *out = ds.release();
  });
}

gf_status gf_dataset_save(const gf_dataset* ds, const char* dir) {
  if (!ds || !dir) return fail_invalid("null argument");
  return guarded([&] { gf::save_dataset(dir, ds->ds); });
}

gf_status gf_dataset_load(const char* dir, gf_dataset** out) {
  if (!dir || !out) return fail_invalid("null argument");
  return guarded([&] {
    auto ds = std::make_unique<gf_dataset>();
    ds->ds = gf::load_dataset(dir);
    *out = ds.release();
  });
}

int gf_dataset_count(const gf_dataset* ds) {
  return ds ? int(ds->ds.sequences.size()) : 0;
}

int gf_dataset_image_size(const gf_dataset* ds) { return ds ? ds->ds.image_size : 0; }

int gf_dataset_frame_count(const gf_dataset* ds) {
  if (!ds || ds->ds.sequences.empty()) return 0;
  return int(ds->ds.sequences.front().frames.size());
}

void gf_dataset_free(gf_dataset* ds) { delete ds; }

void gf_train_config_init(gf_train_config* cfg) {
  if (!cfg) return;
  std::memset(cfg, 0, sizeof(*cfg));
  const gf::TrainConfig d;
  cfg->init_steps = d.init_steps;
  cfg->main_steps = d.main_steps;
  cfg->lr = d.lr;
  cfg->k = d.k;
  cfg->weights[0] = d.weights.alpha;
  cfg->weights[1] = d.weights.beta;
  cfg->weights[2] = d.weights.gamma;
  cfg->weights[3] = d.weights.delta;
  cfg->weights[4] = d.weights.epsilon;
  cfg->weights[5] = d.weights.zeta;
  cfg->batch_size = d.batch_size;
  cfg->trans_stride = d.trans_stride;
  cfg->seed = d.seed;
  cfg->checkpoint_interval = d.checkpoint_interval;
  cfg->image_size = d.encoder.image_size;
  cfg->use_f64 = 0;
}

gf_status gf_trainer_create(const gf_train_config* cfg, gf_trainer** out) {
  if (!cfg || !out) return fail_invalid("null argument");
  return guarded([&] {
    auto t = std::make_unique<gf_trainer>();
    t->cfg = *cfg;
    const gf::TrainConfig core = to_core(*cfg);
    if (cfg->use_f64) t->t = std::make_unique<TrainerImpl<double>>(core);
    else t->t = std::make_unique<TrainerImpl<float>>(core);
    *out = t.release();
  });
}

void gf_trainer_free(gf_trainer* t) { delete t; }

gf_status gf_trainer_attach(gf_trainer* t, const gf_dataset* ds) {
  if (!t || !ds) return fail_invalid("null argument");
  return guarded([&] {
    t->t->attach(ds->ds);
    t->attached = true;
  });
}

gf_status gf_trainer_train(gf_trainer* t, const char* out_dir, gf_progress_fn cb, void* user,
                           double* init_holdout) {
  if (!t || !out_dir) return fail_invalid("null argument");
  return guarded([&] {
    fs::create_directories(out_dir);
    const std::string metrics = (fs::path(out_dir) / "metrics.jsonl").string();
    const std::string ckpt = (fs::path(out_dir) / "checkpoint.ckpt").string();
    const long long interval = t->cfg.checkpoint_interval;
    const StepFn on_step = [&](const gf::MetricsRecord& rec) {
      gf::append_metrics(metrics, rec);
      if (interval > 0 && rec.step % interval == 0) t->t->save(ckpt);
      if (cb) {
        const auto& l = rec.losses;
        const double vals[7] = {l.recon, l.recon2, l.homo, l.ssl, l.trans, l.c_norm, l.total};
        cb(user, rec.step, rec.phase.c_str(), vals);
      }
    };
    if (t->t->phase() == "init") {
      t->t->run_init(on_step);
      t->t->save(ckpt);
    }
    if (init_holdout) *init_holdout = t->t->init_holdout();
    t->t->run_main(on_step);
    t->t->save(ckpt);
  });
}

gf_status gf_trainer_save_checkpoint(const gf_trainer* t, const char* path) {
  if (!t || !path) return fail_invalid("null argument");
  return guarded([&] { t->t->save(path); });
}

gf_status gf_trainer_load_checkpoint(gf_trainer* t, const char* path) {
  if (!t || !path) return fail_invalid("null argument");
  return guarded([&] { t->t->load(path); });
}

gf_status gf_checkpoint_info(const char* path, int* image_size, char* precision) {
  if (!path || !image_size || !precision) return fail_invalid("null argument");
  return guarded([&] {
    const auto raw = gf::detail::load_checkpoint_raw(path);
    const auto& header = raw.first;
    *image_size = 0;
    if (header.contains("config") && header.at("config").contains("image_size"))
      *image_size = header.at("config").at("image_size").get<int>();
    const std::string p = header.at("precision").get<std::string>();
    std::snprintf(precision, 4, "%s", p.c_str());
  });
}

long long gf_trainer_step(const gf_trainer* t) { return t ? t->t->step() : -1; }

const char* gf_trainer_phase(const gf_trainer* t) {
  return t ? t->t->phase().c_str() : "";
}

gf_status gf_trainer_eval_summary(gf_trainer* t, double* out8) {
  if (!t || !out8) return fail_invalid("null argument");
  return guarded([&] {
    const auto ev = t->t->evaluate();
    out8[0] = ev.mean.recon;
    out8[1] = ev.mean.recon2;
    out8[2] = ev.mean.homo;
    out8[3] = ev.mean.ssl;
    out8[4] = ev.mean.trans;
    out8[5] = ev.mean.c_norm;
    out8[6] = ev.mean.total;
    out8[7] = ev.recon_frame_mse;
  });
}

gf_status gf_trainer_ode(const gf_trainer* t, const char* which, double* A4, double* b2) {
  if (!t || !which || !A4 || !b2) return fail_invalid("null argument");
  if (std::string(which) != "g" && std::string(which) != "v")
    return fail_invalid("which must be \"g\" or \"v\"");
  return guarded([&] {
    const auto ode = t->t->ode(which);
    for (int i = 0; i < 4; ++i) A4[i] = ode.A[size_t(i)];
    for (int i = 0; i < 2; ++i) b2[i] = ode.b[size_t(i)];
  });
}

gf_status gf_trainer_encode(gf_trainer* t, const gf_dataset* ds, int seq_index, double* out12) {
  if (!t || !ds || !out12) return fail_invalid("null argument");
  return guarded([&] {
    if (seq_index < 0 || size_t(seq_index) >= ds->ds.sequences.size())
      throw std::invalid_argument("sequence index out of range");
    const auto enc = t->t->encode_frames(ds->ds.sequences[size_t(seq_index)].frames);
    for (int i = 0; i < 12; ++i) out12[i] = enc.raw[size_t(i)];
  });
}

gf_status gf_trainer_write_report(gf_trainer* t, const char* path) {
  if (!t || !path) return fail_invalid("null argument");
  return guarded([&] {
    const auto ev = t->t->evaluate();
    const auto rg = gf::analyze(t->t->ode("g"));
    const auto rv = gf::analyze(t->t->ode("v"));
    gf::save_json(path, gf::make_report(rg, rv, ev, config_echo(t->cfg)));
  });
}

gf_status gf_render_flow_field(gf_trainer* t, const char* which, double lambda, int resolution,
                               int arrow_stride, const char* png_path) {
  if (!t || !which || !png_path) return fail_invalid("null argument");
  return guarded([&] {
    const gf::TransformParams<double> tp{lambda, {0.0, 0.0}};
    const auto img =
        gf::render_flow_field(t->t->ode(which), tp, t->t->config().k, resolution, arrow_stride);
    gf::write_png_rgb(png_path, img);
  });
}

gf_status gf_render_recon_strip(gf_trainer* t, const gf_dataset* ds, int seq_index,
                                int frame_count, const char* png_path) {
  if (!t || !ds || !png_path) return fail_invalid("null argument");
  return guarded([&] {
    if (seq_index < 0 || size_t(seq_index) >= ds->ds.sequences.size())
      throw std::invalid_argument("sequence index out of range");
    const auto& frames = ds->ds.sequences[size_t(seq_index)].frames;
    if (frame_count < 1 || size_t(frame_count) > frames.size())
      throw std::invalid_argument("frame count out of range");
    const int S = ds->ds.image_size;

    const auto enc = t->t->encode_frames(frames);
    const auto g01 = enc.g01(), v01 = enc.v01();
    const gf::OdeParams<double> ode_g = t->t->ode("g"), ode_v = t->t->ode("v");
    const double k = t->t->config().k;

    // top row: the sequence; bottom row: frame 0 pushed through the i-scaled
    // composite, the same construction the reconstruction objective scores
    std::vector<gf::Tensor<double>> top, bottom;
    for (int i = 0; i < frame_count; ++i) {
      top.push_back(frames[size_t(i)]);
      if (i == 0) {
        bottom.push_back(frames[0]);
        continue;
      }
      const std::vector<gf::FlowStep<double>> steps{
          {ode_g, {double(i) * g01.lambda, g01.c}},
          {ode_v, {double(i) * v01.lambda, v01.c}},
      };
      bottom.push_back(gf::compose_apply(frames[0], steps, k));
    }

    const int border = 2;
    const int W = frame_count * S + (frame_count + 1) * border;
    const int H = 2 * S + 3 * border;
    gf::Tensor<double> strip({H, W});
    strip.fill(1.0);
    auto blit = [&](const gf::Tensor<double>& img, int r0, int c0) {
      for (int r = 0; r < S; ++r)
        for (int c = 0; c < S; ++c)
          strip[int64_t(r0 + r) * W + (c0 + c)] = img[int64_t(r) * S + c];
    };
    for (int i = 0; i < frame_count; ++i) {
      const int c0 = border + i * (S + border);
      blit(top[size_t(i)], border, c0);
      blit(bottom[size_t(i)], 2 * border + S, c0);
    }
    gf::write_png_gray(png_path, strip);
  });
}

}  // extern "C"
