// Command-line front end.  All real work happens behind the groupflow C API;
// this file parses flags, forwards them, and prints progress and results.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "groupflow/groupflow.h"
#include "json.hpp"

namespace {

int fail(gf_status st) {
  std::fprintf(stderr, "error: %s [%s]\n", gf_last_error(), gf_status_name(st));
  return int(st);
}

struct ProgressCtx {
  long long init_target = 0;
  long long main_target = 0;
};

void print_progress(void* user, long long step, const char* phase, const double* losses) {
  const auto* ctx = static_cast<const ProgressCtx*>(user);
  const bool is_init = std::string(phase) == "init";
  const long long target = is_init ? ctx->init_target : ctx->main_target;
  if (step % 100 != 0 && step != target) return;
  if (is_init)
    std::printf("[init] step %6lld/%lld  loss %.4e\n", step, target, losses[6]);
  else
    std::printf(
        "[main] step %6lld/%lld  total %.4e  recon %.3e  recon2 %.3e  homo %.3e  ssl %.3e  "
        "trans %.3e  c_norm %.3e\n",
        step, target, losses[6], losses[0], losses[1], losses[2], losses[3], losses[4], losses[5]);
  std::fflush(stdout);
}

int run_gen(const std::string& out, const std::string& kind, int n, long long seed, int image_size,
            int frames) {
  gf_dataset* ds = nullptr;
  gf_status st = gf_dataset_generate(kind.c_str(), n, seed, image_size, frames, &ds);
  if (st != GF_OK) return fail(st);
  st = gf_dataset_save(ds, out.c_str());
  gf_dataset_free(ds);
  if (st != GF_OK) return fail(st);
  std::printf("wrote %d %s sequences (%dx%d, %d frames) to %s\n", n, kind.c_str(), image_size,
              image_size, frames, out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"groupflow: learns to split the motion in short image sequences into two "
               "flow-defined transformations"};
  app.require_subcommand(1);

  std::string gen_out, gen_kind = "square";
  int gen_n = 512, gen_image = 64, gen_frames = 7;
  long long gen_seed = 0;
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic moving-shape dataset");
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--kind", gen_kind, "Shape drawn in each sequence")
      ->check(CLI::IsMember({"square", "semicircle"}));
  gen->add_option("--n", gen_n, "Number of sequences")->capture_default_str();
  gen->add_option("--seed", gen_seed, "Base RNG seed")->capture_default_str();
  gen->add_option("--image-size", gen_image, "Square image side in pixels")->capture_default_str();
  gen->add_option("--frames", gen_frames, "Frames per sequence")->capture_default_str();

  std::string tr_data, tr_out, tr_resume, tr_precision = "f32";
  long long tr_init_steps = 1000, tr_steps = 20000, tr_seed = 0, tr_interval = 1000;
  int tr_batch = 16, tr_stride = 4;
  double tr_k = 10.0, tr_lr = 1e-4;
  std::vector<double> tr_weights{1.0, 1.0, 1.0, 0.1, 1.0, 0.1};
  auto* tr = app.add_subcommand("train", "Train the two-flow model on a dataset");
  tr->add_option("--data", tr_data, "Dataset directory")->required();
  tr->add_option("--out", tr_out, "Run directory for checkpoints and metrics")->required();
  tr->add_option("--init-steps", tr_init_steps, "Encoder warm-up steps")->capture_default_str();
  tr->add_option("--steps", tr_steps, "Main-phase step target")->capture_default_str();
  tr->add_option("--k", tr_k, "Integration steps per unit of flow time")->capture_default_str();
  tr->add_option("--batch", tr_batch, "Sequences per step")->capture_default_str();
  tr->add_option("--lr", tr_lr, "Learning rate")->capture_default_str();
  tr->add_option("--weights", tr_weights,
                 "Six comma-separated loss weights: recon,recon2,homo,ssl,trans,c_norm")
      ->delimiter(',');
  tr->add_option("--seed", tr_seed, "Training RNG seed")->capture_default_str();
  tr->add_option("--trans-stride", tr_stride, "Grid subsampling stride for the isometry loss")->capture_default_str();
  tr->add_option("--checkpoint-interval", tr_interval, "Steps between rolling checkpoints")->capture_default_str();
  tr->add_option("--resume", tr_resume, "Checkpoint to continue from");
  auto* tr_prec_opt = tr->add_option("--precision", tr_precision, "Parameter precision")->capture_default_str()
                          ->check(CLI::IsMember({"f32", "f64"}));

  std::string ev_ckpt, ev_data, ev_report;
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint and write an analysis report");
  ev->add_option("--ckpt", ev_ckpt, "Checkpoint file")->required();
  ev->add_option("--data", ev_data, "Dataset directory")->required();
  ev->add_option("--report", ev_report, "Report output path (JSON)")->required();

  std::string vz_ckpt, vz_data, vz_out;
  double vz_lambda_g = 2.0, vz_lambda_v = 2.0;
  int vz_resolution = 256, vz_arrow = 16;
  auto* vz = app.add_subcommand("viz", "Render flow fields and a reconstruction strip");
  vz->add_option("--ckpt", vz_ckpt, "Checkpoint file")->required();
  vz->add_option("--out", vz_out, "Output directory for images")->required();
  vz->add_option("--data", vz_data, "Dataset directory (a fresh sequence is synthesized if omitted)");
  vz->add_option("--lambda-g", vz_lambda_g, "Flow time for the first field")->capture_default_str();
  vz->add_option("--lambda-v", vz_lambda_v, "Flow time for the second field")->capture_default_str();
  vz->add_option("--resolution", vz_resolution, "Field image side in pixels")->capture_default_str();
  vz->add_option("--arrow-stride", vz_arrow, "Pixels between arrows")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  if (gen->parsed()) return run_gen(gen_out, gen_kind, gen_n, gen_seed, gen_image, gen_frames);

  if (tr->parsed()) {
    if (tr_weights.size() != 6) {
      std::fprintf(stderr, "error: --weights needs exactly 6 values, got %zu\n",
                   tr_weights.size());
      return int(GF_ERR_INVALID_ARGUMENT);
    }
    gf_dataset* ds = nullptr;
    gf_status st = gf_dataset_load(tr_data.c_str(), &ds);
    if (st != GF_OK) return fail(st);
    const int image_size = gf_dataset_image_size(ds);

    if (!tr_resume.empty()) {
      int ck_size = 0;
      char ck_prec[4] = {};
      st = gf_checkpoint_info(tr_resume.c_str(), &ck_size, ck_prec);
      if (st != GF_OK) {
        gf_dataset_free(ds);
        return fail(st);
      }
      if (tr_prec_opt->count() == 0) tr_precision = ck_prec;
      if (ck_size != 0 && ck_size != image_size) {
        std::fprintf(stderr, "error: checkpoint was trained on %dx%d images, dataset is %dx%d\n",
                     ck_size, ck_size, image_size, image_size);
        gf_dataset_free(ds);
        return int(GF_ERR_INVALID_ARGUMENT);
      }
    }

    gf_train_config cfg;
    gf_train_config_init(&cfg);
    cfg.init_steps = tr_init_steps;
    cfg.main_steps = tr_steps;
    cfg.lr = tr_lr;
    cfg.k = tr_k;
    for (int i = 0; i < 6; ++i) cfg.weights[i] = tr_weights[size_t(i)];
    cfg.batch_size = tr_batch;
    cfg.trans_stride = tr_stride;
    cfg.seed = tr_seed;
    cfg.checkpoint_interval = tr_interval;
    cfg.image_size = image_size;
    cfg.use_f64 = tr_precision == "f64" ? 1 : 0;

    gf_trainer* t = nullptr;
    st = gf_trainer_create(&cfg, &t);
    if (st != GF_OK) {
      gf_dataset_free(ds);
      return fail(st);
    }
    st = gf_trainer_attach(t, ds);
    if (st == GF_OK && !tr_resume.empty()) st = gf_trainer_load_checkpoint(t, tr_resume.c_str());
    if (st != GF_OK) {
      gf_trainer_free(t);
      gf_dataset_free(ds);
      return fail(st);
    }

    std::printf("dataset: %d sequences, %dx%d, %d frames\n", gf_dataset_count(ds), image_size,
                image_size, gf_dataset_frame_count(ds));
    if (!tr_resume.empty())
      std::printf("resumed from %s at step %lld (%s phase)\n", tr_resume.c_str(),
                  gf_trainer_step(t), gf_trainer_phase(t));

    ProgressCtx ctx{tr_init_steps, tr_steps};
    double holdout = -1.0;
    st = gf_trainer_train(t, tr_out.c_str(), print_progress, &ctx, &holdout);
    if (st != GF_OK) {
      gf_trainer_free(t);
      gf_dataset_free(ds);
      return fail(st);
    }
    if (holdout >= 0.0) {
      std::printf("init holdout loss: %.4e\n", holdout);
      if (holdout > 1e-4)
        std::fprintf(stderr,
                     "warning: init holdout loss %.4e exceeds 1e-4; the warm-up phase may not "
                     "have converged\n",
                     holdout);
    }
    std::printf("checkpoint: %s\nmetrics:    %s\n",
                (std::filesystem::path(tr_out) / "checkpoint.ckpt").string().c_str(),
                (std::filesystem::path(tr_out) / "metrics.jsonl").string().c_str());
    gf_trainer_free(t);
    gf_dataset_free(ds);
    return 0;
  }

  if (ev->parsed()) {
    int ck_size = 0;
    char ck_prec[4] = {};
    gf_status st = gf_checkpoint_info(ev_ckpt.c_str(), &ck_size, ck_prec);
    if (st != GF_OK) return fail(st);

    gf_train_config cfg;
    gf_train_config_init(&cfg);
    cfg.image_size = ck_size;
    cfg.use_f64 = std::string(ck_prec) == "f64" ? 1 : 0;
    gf_trainer* t = nullptr;
    st = gf_trainer_create(&cfg, &t);
    if (st != GF_OK) return fail(st);
    st = gf_trainer_load_checkpoint(t, ev_ckpt.c_str());

    gf_dataset* ds = nullptr;
    if (st == GF_OK) st = gf_dataset_load(ev_data.c_str(), &ds);
    if (st == GF_OK) st = gf_trainer_attach(t, ds);
    if (st == GF_OK) st = gf_trainer_write_report(t, ev_report.c_str());
    if (st != GF_OK) {
      gf_trainer_free(t);
      gf_dataset_free(ds);
      return fail(st);
    }

    std::ifstream in(ev_report);
    const auto rep = nlohmann::json::parse(in);
    for (const char* which : {"g", "v"}) {
      const auto& r = rep.at(which);
      std::printf("%s: %s (skew_ratio %.3f, translation_dominance %.3f)\n", which,
                  r.at("classification").get<std::string>().c_str(),
                  r.at("skew_ratio").get<double>(), r.at("translation_dominance").get<double>());
    }
    std::printf("fields separated: %s\n", rep.at("separated").get<bool>() ? "yes" : "no");
    std::printf("mean per-frame reconstruction MSE: %.4e\n",
                rep.at("losses").at("recon_frame_mse").get<double>());
    std::printf("report: %s\n", ev_report.c_str());
    gf_trainer_free(t);
    gf_dataset_free(ds);
    return 0;
  }

  if (vz->parsed()) {
    int ck_size = 0;
    char ck_prec[4] = {};
    gf_status st = gf_checkpoint_info(vz_ckpt.c_str(), &ck_size, ck_prec);
    if (st != GF_OK) return fail(st);

    gf_train_config cfg;
    gf_train_config_init(&cfg);
    cfg.image_size = ck_size;
    cfg.use_f64 = std::string(ck_prec) == "f64" ? 1 : 0;
    gf_trainer* t = nullptr;
    st = gf_trainer_create(&cfg, &t);
    if (st != GF_OK) return fail(st);
    st = gf_trainer_load_checkpoint(t, vz_ckpt.c_str());
    if (st != GF_OK) {
      gf_trainer_free(t);
      return fail(st);
    }

    gf_dataset* ds = nullptr;
    st = vz_data.empty() ? gf_dataset_generate("square", 1, 0, ck_size, 7, &ds)
                         : gf_dataset_load(vz_data.c_str(), &ds);
    if (st != GF_OK) {
      gf_trainer_free(t);
      return fail(st);
    }

    std::error_code ec;
    std::filesystem::create_directories(vz_out, ec);
    const auto out = [&](const char* name) {
      return (std::filesystem::path(vz_out) / name).string();
    };
    st = gf_render_flow_field(t, "g", vz_lambda_g, vz_resolution, vz_arrow,
                              out("flow_g.png").c_str());
    if (st == GF_OK)
      st = gf_render_flow_field(t, "v", vz_lambda_v, vz_resolution, vz_arrow,
                                out("flow_v.png").c_str());
    int strip_frames = gf_dataset_frame_count(ds);
    if (strip_frames > 4) strip_frames = 4;
    if (st == GF_OK)
      st = gf_render_recon_strip(t, ds, 0, strip_frames, out("recon_strip.png").c_str());
    gf_trainer_free(t);
    gf_dataset_free(ds);
    if (st != GF_OK) return fail(st);
    std::printf("wrote %s\nwrote %s\nwrote %s\n", out("flow_g.png").c_str(),
                out("flow_v.png").c_str(), out("recon_strip.png").c_str());
    return 0;
  }

  return 0;
}
