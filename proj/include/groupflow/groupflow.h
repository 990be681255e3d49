/* C interface to the groupflow library.
 *
 * Every function returns a gf_status; on anything but GF_OK a thread-local
 * message is available from gf_last_error().  Handles are opaque and freed
 * with their matching *_free function.  All file writes are atomic
 * (temp file + rename) and all artifacts round-trip bit-exactly.
 */
#ifndef GROUPFLOW_H
#define GROUPFLOW_H

#ifdef __cplusplus
extern "C" {
#endif

#define GF_API __attribute__((visibility("default")))

typedef enum gf_status {
  GF_OK = 0,
  GF_ERR_INVALID_ARGUMENT = 1, /* bad flag/field values, null pointers */
  GF_ERR_IO = 2,               /* filesystem trouble */
  GF_ERR_FORMAT = 3,           /* unrecognized or damaged artifact */
  GF_ERR_DIVERGED = 4,         /* a coordinate flow tripped the divergence guard */
  GF_ERR_STATE = 5,            /* call out of sequence (no dataset, wrong phase) */
  GF_ERR_INTERNAL = 6
} gf_status;

/* Human-readable name of a status code ("GF_OK", ...). */
GF_API const char* gf_status_name(gf_status s);

/* Message for the most recent failure on this thread; never NULL. */
GF_API const char* gf_last_error(void);

/* Interface version, currently 1. */
GF_API int gf_api_version(void);

/* ---- datasets ---------------------------------------------------------- */

typedef struct gf_dataset gf_dataset;

/* kind is "square" or "semicircle".  The sequence set is fully determined by
 * (kind, n, seed, image_size, frames). */
GF_API gf_status gf_dataset_generate(const char* kind, int n, unsigned long long seed,
                                     int image_size, int frames, gf_dataset** out);

/* Directory layout: manifest.json + seq_00000.f32 ... (raw little-endian
 * 32-bit floats, row-major [T, H, W]).  Loading verifies checksums. */
GF_API gf_status gf_dataset_save(const gf_dataset* ds, const char* dir);
GF_API gf_status gf_dataset_load(const char* dir, gf_dataset** out);

GF_API int gf_dataset_count(const gf_dataset* ds);
GF_API int gf_dataset_image_size(const gf_dataset* ds);
GF_API int gf_dataset_frame_count(const gf_dataset* ds);
GF_API void gf_dataset_free(gf_dataset* ds);

/* ---- training ---------------------------------------------------------- */

typedef struct gf_train_config {
  long long init_steps;  /* identity-fit phase length */
  long long main_steps;  /* joint phase length */
  double lr;             /* shared learning rate */
  double k;              /* Euler substep rate */
  double weights[6];     /* recon, recon2, homo, ssl, trans, c_norm */
  int batch_size;
  int trans_stride;      /* grid subsampling for the isometry loss */
  unsigned long long seed;
  long long checkpoint_interval;
  int image_size;        /* encoder input side; must match the dataset */
  int use_f64;           /* nonzero trains in double precision */
} gf_train_config;

/* Fills the reference defaults: 1000/20000 steps, lr 1e-4, K 10, weights
 * (1, 1, 1, 0.1, 1, 0.1), batch 16, stride 4, 64 px, f32. */
GF_API void gf_train_config_init(gf_train_config* cfg);

typedef struct gf_trainer gf_trainer;

GF_API gf_status gf_trainer_create(const gf_train_config* cfg, gf_trainer** out);
GF_API void gf_trainer_free(gf_trainer* t);

/* Copies the sequences in; the dataset handle may be freed afterwards. */
GF_API gf_status gf_trainer_attach(gf_trainer* t, const gf_dataset* ds);

/* Called after every optimizer step.  losses points at 7 doubles:
 * recon, recon2, homo, ssl, trans, c_norm, total (init phase fills only
 * total). */
typedef void (*gf_progress_fn)(void* user, long long step, const char* phase,
                               const double* losses);

/* Runs the remaining steps of both phases.  Writes metrics.jsonl (one JSON
 * record per step) and a rolling checkpoint.ckpt into out_dir, checkpointing
 * every checkpoint_interval steps and at each phase end.  If init_holdout is
 * non-NULL it receives the held-out identity-fit loss measured after the init
 * phase (the caller decides how loudly to report non-convergence).  On
 * GF_ERR_DIVERGED the last written checkpoint is left in place. */
GF_API gf_status gf_trainer_train(gf_trainer* t, const char* out_dir, gf_progress_fn cb,
                                  void* user, double* init_holdout);

GF_API gf_status gf_trainer_save_checkpoint(const gf_trainer* t, const char* path);
GF_API gf_status gf_trainer_load_checkpoint(gf_trainer* t, const char* path);

/* Reads only the checkpoint header: image size from the stored config echo
 * (0 if absent) and the storage precision as a string ("f32"/"f64") into
 * precision, a buffer of at least 4 bytes. */
GF_API gf_status gf_checkpoint_info(const char* path, int* image_size, char* precision);

GF_API long long gf_trainer_step(const gf_trainer* t);
/* "init" or "main". */
GF_API const char* gf_trainer_phase(const gf_trainer* t);

/* ---- evaluation and reporting ------------------------------------------ */

/* No-gradient pass over the attached dataset.
 * out8 = {recon, recon2, homo, ssl, trans, c_norm, total, recon_frame_mse}. */
GF_API gf_status gf_trainer_eval_summary(gf_trainer* t, double* out8);

/* Learned field parameters; which is "g" or "v". */
GF_API gf_status gf_trainer_ode(const gf_trainer* t, const char* which, double* A4, double* b2);

/* Encoder outputs for one sequence of ds: 12 doubles, transform order
 * (lambda_g01, c_g01 x2, lambda_v01, c_v01 x2, then the 1->2 block). */
GF_API gf_status gf_trainer_encode(gf_trainer* t, const gf_dataset* ds, int seq_index,
                                   double* out12);

/* Evaluates the attached dataset, classifies both fields, and writes the
 * JSON report (schema_version, per-field ratios and labels, loss summary). */
GF_API gf_status gf_trainer_write_report(gf_trainer* t, const char* path);

/* ---- rendering --------------------------------------------------------- */

/* Arrow plot of the learned field `which` ("g"/"v") integrated at
 * (lambda, c=0), written as an RGB PNG. */
GF_API gf_status gf_render_flow_field(gf_trainer* t, const char* which, double lambda,
                                      int resolution, int arrow_stride, const char* png_path);

/* Grayscale strip for one sequence: top row the first frame_count frames,
 * bottom row their reconstructions from frame 0 under the current model. */
GF_API gf_status gf_render_recon_strip(gf_trainer* t, const gf_dataset* ds, int seq_index,
                                       int frame_count, const char* png_path);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* GROUPFLOW_H */
