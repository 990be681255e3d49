#include "core/datagen.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "core/common.hpp"

namespace groupflow {

namespace {

constexpr int kGrayLevels = 16;

std::array<double, kGrayLevels> gray_palette() {
  std::array<double, kGrayLevels> g{};
  for (int k = 0; k < kGrayLevels; ++k) g[size_t(k)] = 0.2 + 0.8 * k / (kGrayLevels - 1);
  return g;
}

std::array<int, kGrayLevels> gray_permutation(uint64_t seed) {
  std::array<int, kGrayLevels> perm{};
  for (int k = 0; k < kGrayLevels; ++k) perm[size_t(k)] = k;
  Rng rng(seed);
  rng.shuffle(perm.begin(), perm.end());
  return perm;
}

int block_index(double t, double lo, double hi) {
  const int b = int((t - lo) * 4.0 / (hi - lo));
  return std::clamp(b, 0, 3);
}

// zero-padded bilinear lookup on a [S,S] texture, pixel-unit coordinates
double bilinear_at(const Tensor<double>& tex, double x, double y) {
  const int s = tex.dim(0);
  if (x <= -1.0 || y <= -1.0 || x >= double(s) || y >= double(s)) return 0.0;
  const int x0 = int(std::floor(x)), y0 = int(std::floor(y));
  const double fx = x - x0, fy = y - y0;
  auto at = [&](int yy, int xx) {
    if (xx < 0 || yy < 0 || xx >= s || yy >= s) return 0.0;
    return tex[int64_t(yy) * s + xx];
  };
  return (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x0 + 1)) +
         fy * ((1 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1));
}

double content_radius(const SequenceSpec& spec, const ObjectGeometry& geo) {
  // outermost point with any bilinear influence, plus a safety margin
  if (spec.kind == ObjectKind::square) return geo.bound_square;
  return geo.bound_semi;
}

void check_pose(const SequenceSpec& spec, const ObjectGeometry& geo) {
  const double r = content_radius(spec, geo);
  const double hi = spec.image_size - 1;
  for (int i = 0; i < spec.frames; ++i) {
    const double px = spec.cx + double(i) * spec.dx;
    const double py = spec.cy + double(i) * spec.dy;
    if (px - r <= 0.0 || px + r >= hi || py - r <= 0.0 || py + r >= hi)
      throw std::invalid_argument("object pose leaves the frame at step " + std::to_string(i));
  }
}

Sequence render_sequence(const SequenceSpec& spec, const Tensor<double>& tex) {
  const ObjectGeometry geo = object_geometry(spec.image_size);
  check_pose(spec, geo);
  const int s = spec.image_size;
  const double htex = (tex.dim(0) - 1) / 2.0;
  const double rot = spec.rot_per_frame_deg * std::numbers::pi / 180.0;

  Sequence out;
  out.truth = spec;
  for (int i = 0; i < spec.frames; ++i) {
    const double theta = spec.theta0 + double(i) * rot;
    const double ca = std::cos(theta), sa = std::sin(theta);
    const int sx = i * spec.dx, sy = i * spec.dy;
    Tensor<double> frame({1, s, s});
    for (int r = 0; r < s; ++r)
      for (int c = 0; c < s; ++c) {
        // integer shift applied on integer coordinates, so pure translations
        // reproduce frame 0's samples bit-for-bit
        const double ux = double(c - sx) - spec.cx;
        const double uy = double(r - sy) - spec.cy;
        const double qx = ca * ux + sa * uy;   // rotate by -theta
        const double qy = -sa * ux + ca * uy;
        const double v = bilinear_at(tex, qx + htex, qy + htex);
        // frames are stored at f32 precision so on-disk round-trips are exact
        frame[int64_t(r) * s + c] = double(float(v));
      }
    out.frames.push_back(std::move(frame));
  }
  return out;
}

}  // namespace

ObjectGeometry object_geometry(int image_size) {
  if (image_size < 16) throw std::invalid_argument("image_size too small to hold the objects");
  const double scale = image_size / 64.0;
  ObjectGeometry g;
  g.side = int(std::lround(30.0 * scale));
  g.radius = 8.0 * scale;
  g.offset = 20.0 * scale;
  g.shift_mag = std::max(1, int(3.0 * scale));
  // interpolation support already ends 0.5 texel past the texel centers; the
  // last 0.5 is a safety margin.  The +3-shift pose band at full scale is only
  // a fraction of a pixel wide, so these cannot be any fatter.
  g.bound_square = (g.side / 2.0 + 0.5) * std::numbers::sqrt2 + 0.5;
  g.bound_semi = g.offset / 2.0 + g.radius + 2.0;
  return g;
}

Tensor<double> square_texture(int side, uint64_t seed) {
  const auto gray = gray_palette();
  const auto perm = gray_permutation(seed);
  Tensor<double> tex({side, side});
  for (int r = 0; r < side; ++r)
    for (int c = 0; c < side; ++c) {
      const int br = std::min(3, r * 4 / side), bc = std::min(3, c * 4 / side);
      tex[int64_t(r) * side + c] = gray[size_t(perm[size_t(br * 4 + bc)])];
    }
  return tex;
}

Tensor<double> semicircle_texture(double radius, double offset, uint64_t seed) {
  const auto gray = gray_palette();
  const auto perm = gray_permutation(seed);
  const int half = int(std::ceil(offset / 2 + radius + 2));
  const int size = 2 * half + 1;
  const double cx = offset / 2;  // semicircle centers at (-cx, 0) and (cx, 0)
  const double bx = cx + radius, by = radius;  // pair bounding box half-extents
  Tensor<double> tex({size, size});
  for (int r = 0; r < size; ++r)
    for (int c = 0; c < size; ++c) {
      double acc = 0;
      for (int oy = 0; oy < 4; ++oy)
        for (int ox = 0; ox < 4; ++ox) {
          const double px = (c - half) + (-0.375 + 0.25 * ox);
          const double py = (r - half) + (-0.375 + 0.25 * oy);
          // flat edges face the pair midpoint; the disks bulge outward
          const bool in_left = px <= -cx && std::hypot(px + cx, py) <= radius;
          const bool in_right = px >= cx && std::hypot(px - cx, py) <= radius;
          if (in_left || in_right) {
            const int k = block_index(py, -by, by) * 4 + block_index(px, -bx, bx);
            acc += gray[size_t(perm[size_t(k)])];
          }
        }
      tex[int64_t(r) * size + c] = acc / 16.0;
    }
  return tex;
}

Sequence gen_square(const SequenceSpec& spec) {
  if (spec.kind != ObjectKind::square) throw std::invalid_argument("spec.kind is not square");
  const ObjectGeometry geo = object_geometry(spec.image_size);
  return render_sequence(spec, square_texture(geo.side, spec.seed));
}

Sequence gen_semicircle(const SequenceSpec& spec) {
  if (spec.kind != ObjectKind::semicircle)
    throw std::invalid_argument("spec.kind is not semicircle");
  const ObjectGeometry geo = object_geometry(spec.image_size);
  return render_sequence(spec, semicircle_texture(geo.radius, geo.offset, spec.seed));
}

Sequence gen_sequence(const SequenceSpec& spec) {
  return spec.kind == ObjectKind::square ? gen_square(spec) : gen_semicircle(spec);
}

SequenceSpec draw_spec(ObjectKind kind, int index, uint64_t master_seed, const GenOptions& opt) {
  const ObjectGeometry geo = object_geometry(opt.image_size);
  Rng rng(derive_seed(master_seed, uint64_t(2 * index)));

  SequenceSpec spec;
  spec.kind = kind;
  spec.image_size = opt.image_size;
  spec.frames = opt.frames;
  const std::array<double, 3> angles{8.0, 10.0, 12.0};
  spec.rot_per_frame_deg = angles[size_t(rng.uniform_int(3))];
  const std::array<int, 3> shifts{-geo.shift_mag, 0, geo.shift_mag};
  spec.dx = shifts[size_t(rng.uniform_int(3))];
  spec.dy = shifts[size_t(rng.uniform_int(3))];
  spec.theta0 = rng.uniform(0.0, std::numbers::pi / 2);

  const double r = kind == ObjectKind::square ? geo.bound_square : geo.bound_semi;
  const double hi = opt.image_size - 1;
  const int last = spec.frames - 1;
  auto pose_range = [&](int d, double& lo_out, double& hi_out) {
    lo_out = r + std::max(0, -last * d) + 0.01;
    hi_out = hi - r - std::max(0, last * d) - 0.01;
    if (lo_out >= hi_out)
      throw std::invalid_argument("no feasible pose for the drawn motion at this image size");
  };
  double lo, hi2;
  pose_range(spec.dx, lo, hi2);
  spec.cx = rng.uniform(lo, hi2);
  pose_range(spec.dy, lo, hi2);
  spec.cy = rng.uniform(lo, hi2);

  spec.seed = derive_seed(master_seed, uint64_t(2 * index + 1));
  return spec;
}

Dataset gen_dataset(int n, ObjectKind kind, uint64_t master_seed, const GenOptions& opt) {
  if (n < 1) throw std::invalid_argument("dataset needs at least one sequence");
  Dataset ds;
  ds.kind = kind;
  ds.image_size = opt.image_size;
  ds.master_seed = master_seed;
  for (int i = 0; i < n; ++i) ds.sequences.push_back(gen_sequence(draw_spec(kind, i, master_seed, opt)));
  return ds;
}

TruthParams truth_params(const SequenceSpec& spec) {
  const double pitch = 2.0 / (spec.image_size - 1);
  const double q0x = -1.0 + pitch * spec.cx;
  const double q0y = -1.0 + pitch * spec.cy;
  const double w = spec.rot_per_frame_deg * std::numbers::pi / 180.0;

  TruthParams t;
  // backward-warp flow for "rotate by +dtheta per frame about (q0x, q0y)":
  // exp(A) with A = [[0, w], [-w, 0]] maps sample points the inverse way
  t.ode_g.A = {0.0, w, -w, 0.0};
  t.ode_g.b = {0.0, 0.0};
  t.ode_v.A = {0.0, 0.0, 0.0, 0.0};
  t.ode_v.b = {0.0, 0.0};
  const std::array<double, 2> cg{-w * q0y, w * q0x};  // pins the fixed point at q0
  const std::array<double, 2> cv{-spec.dx * pitch, -spec.dy * pitch};
  t.enc.set_g01({1.0, cg});
  t.enc.set_g12({1.0, cg});
  t.enc.set_v01({1.0, cv});
  t.enc.set_v12({1.0, cv});
  return t;
}

}  // namespace groupflow
