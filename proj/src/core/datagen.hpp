// Synthetic moving-shape sequence generator with recorded ground truth.
//
// Each sequence shows one rigid object (a block-textured square or a pair of
// textured semicircles) rotating about its own center while translating by a
// constant integer pixel shift per frame.  Every frame is rendered directly
// from the canonical (unrotated) texture with the cumulative pose, so no
// resampling error accumulates.  The recorded truth is for evaluation only
// and is never visible to the model.
#pragma once

#include <cstdint>
#include <vector>

#include "core/losses.hpp"
#include "core/tensor.hpp"

namespace groupflow {

enum class ObjectKind { square, semicircle };

// Scale-dependent object geometry.  At image_size 64 this is the reference
// configuration: a 30x30 square, semicircle radius 8, pair offset 20, pixel
// shifts from {-3, 0, 3}.  Other sizes scale the object proportionally with
// integer shift magnitudes floored at 1.
struct ObjectGeometry {
  int side = 30;            // square edge length, texels
  double radius = 8.0;      // semicircle radius, pixels
  double offset = 20.0;     // distance between the two flat edges' centers
  int shift_mag = 3;        // translation draws come from {-shift_mag, 0, +shift_mag}
  double bound_square = 0;  // content radius of the square, pixels
  double bound_semi = 0;    // content radius of the semicircle pair, pixels
};
ObjectGeometry object_geometry(int image_size);

struct SequenceSpec {
  ObjectKind kind = ObjectKind::square;
  int image_size = 64;
  int frames = 7;
  double rot_per_frame_deg = 10.0;  // drawn from {8, 10, 12}
  int dx = 0;                       // pixels per frame, drawn from {-m, 0, m}
  int dy = 0;
  double cx = 31.5;  // object center in frame 0, pixel units (col, row)
  double cy = 31.5;
  double theta0 = 0.0;  // initial orientation, radians
  uint64_t seed = 0;    // texture permutation seed
};

struct Sequence {
  std::vector<Tensor<double>> frames;  // each [1, S, S], values in [0,1]
  SequenceSpec truth;                  // evaluation-only
};

struct GenOptions {
  int image_size = 64;
  int frames = 7;
};

struct Dataset {
  std::vector<Sequence> sequences;
  ObjectKind kind = ObjectKind::square;
  int image_size = 64;
  uint64_t master_seed = 0;
};

// Canonical textures.  The square is a side x side texel grid whose 4x4
// blocks carry the 16 gray levels 0.2 + 0.8*k/15 permuted by seed.  The
// semicircle pair lives on an odd-sized grid centered on the pair midpoint,
// flat edges facing each other, 4x4-supersampled against the same gray
// scheme, background 0.
Tensor<double> square_texture(int side, uint64_t seed);
Tensor<double> semicircle_texture(double radius, double offset, uint64_t seed);

// Render one sequence.  Throws std::invalid_argument if any frame's pose
// would put object content outside the strict interior of the image.
Sequence gen_square(const SequenceSpec& spec);
Sequence gen_semicircle(const SequenceSpec& spec);
Sequence gen_sequence(const SequenceSpec& spec);

// The spec drawn for sequence `index` of a dataset: motion and pose come from
// the stream seeded with derive_seed(master_seed, 2*index), the texture seed
// is derive_seed(master_seed, 2*index + 1).  Draw order: rotation, dx, dy,
// initial angle, then center uniform over the pose box that keeps all frames
// in view.
SequenceSpec draw_spec(ObjectKind kind, int index, uint64_t master_seed,
                       const GenOptions& opt = {});

Dataset gen_dataset(int n, ObjectKind kind, uint64_t master_seed, const GenOptions& opt = {});

// Recorded motion converted to flow parameters in normalized coordinates:
// the first transform rotates about the object center (A skew, center held
// by c), the second carries the per-frame translation in c.  Evaluating the
// sequence losses with these values reconstructs the motion up to
// interpolation and step-rule residual.
struct TruthParams {
  EncoderOutput<double> enc;
  OdeParams<double> ode_g;
  OdeParams<double> ode_v;
};
TruthParams truth_params(const SequenceSpec& spec);

}  // namespace groupflow
