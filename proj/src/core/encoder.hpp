#pragma once

// Sequence encoder: a small strided CNN applied per frame, an LSTM over the
// per-frame features, and an affine head that reads the final hidden state
// out to twelve numbers: (lambda, c) for both transformations on frames
// 0 -> 1 and 1 -> 2.

#include <string>
#include <vector>

#include "core/graph.hpp"

namespace groupflow {

// Fixed slot layout of the twelve encoder outputs.
struct EncSlot {
  static constexpr int lambda_g01 = 0;
  static constexpr int c_g01 = 1;  // two entries
  static constexpr int lambda_v01 = 3;
  static constexpr int c_v01 = 4;  // two entries
  static constexpr int lambda_g12 = 6;
  static constexpr int c_g12 = 7;  // two entries
  static constexpr int lambda_v12 = 9;
  static constexpr int c_v12 = 10;  // two entries
  static constexpr int count = 12;
};

struct EncoderConfig {
  int image_size = 64;
  int in_channels = 1;
  std::vector<int> conv_channels{16, 32, 64, 128};
  int kernel = 3;
  int stride = 2;
  int padding = 1;
  int lstm_hidden = 128;
  int out_dim = EncSlot::count;

  void validate() const {
    if (conv_channels.empty()) throw std::invalid_argument("encoder: no conv layers");
    if (image_size < (1 << conv_channels.size()))
      throw std::invalid_argument("encoder: image too small for conv stack");
    if (image_size % (1 << conv_channels.size()) != 0)
      throw std::invalid_argument("encoder: image size must divide by 2^layers");
    if (lstm_hidden < 1 || out_dim < 1) throw std::invalid_argument("encoder: bad head sizes");
  }

  // spatial side length after the conv stack (each layer halves it)
  int feature_map_size() const { return image_size >> conv_channels.size(); }
  int flatten_size() const {
    return conv_channels.back() * feature_map_size() * feature_map_size();
  }
};

// Uniform fan-in initialization (U(-1/sqrt(fan_in), +1/sqrt(fan_in)));
// the LSTM forget-gate bias starts at 1 so early training does not erase the
// cell state.
template <typename T>
void register_encoder_params(ParamRegistry<T>& reg, const EncoderConfig& cfg, Rng& rng) {
  cfg.validate();
  auto uniform_init = [&rng](std::vector<int> shape, double bound) {
    Tensor<T> t(std::move(shape));
    for (auto& v : t.data) v = T(rng.uniform(-bound, bound));
    return t;
  };
  int in_c = cfg.in_channels;
  for (size_t l = 0; l < cfg.conv_channels.size(); ++l) {
    const int out_c = cfg.conv_channels[l];
    const double bound = 1.0 / std::sqrt(double(in_c) * cfg.kernel * cfg.kernel);
    const std::string base = "enc.conv" + std::to_string(l);
    reg.add(base + ".w", uniform_init({out_c, in_c, cfg.kernel, cfg.kernel}, bound));
    reg.add(base + ".b", uniform_init({out_c}, bound));
    in_c = out_c;
  }
  const int F = cfg.flatten_size(), H = cfg.lstm_hidden;
  const double lb = 1.0 / std::sqrt(double(H));
  reg.add("enc.lstm.w_ih", uniform_init({4 * H, F}, lb));
  reg.add("enc.lstm.w_hh", uniform_init({4 * H, H}, lb));
  auto b_ih = uniform_init({4 * H}, lb);
  for (int j = H; j < 2 * H; ++j) b_ih[j] = T(1);  // forget-gate block
  reg.add("enc.lstm.b_ih", std::move(b_ih));
  reg.add("enc.lstm.b_hh", uniform_init({4 * H}, lb));
  reg.add("enc.fc.w", uniform_init({cfg.out_dim, H}, lb));
  reg.add("enc.fc.b", uniform_init({cfg.out_dim}, lb));
}

template <typename T>
bool has_encoder_params(const ParamRegistry<T>& reg) {
  return reg.find("enc.fc.w") >= 0;
}

// Build the encoder forward pass over `frames` (each a node valued [1,S,S]).
// Returns the node holding the twelve outputs.
template <typename T>
NodeId encode(Graph<T>& g, const std::vector<NodeId>& frames, const EncoderConfig& cfg) {
  cfg.validate();
  if (frames.size() < 3)
    throw std::invalid_argument("encode: need at least 3 frames for two transitions");
  const int H = cfg.lstm_hidden;
  const NodeId w_ih = g.param("enc.lstm.w_ih"), w_hh = g.param("enc.lstm.w_hh");
  const NodeId b_ih = g.param("enc.lstm.b_ih"), b_hh = g.param("enc.lstm.b_hh");
  NodeId h = g.constant(Tensor<T>({H}));
  NodeId c = g.constant(Tensor<T>({H}));
  for (const NodeId frame : frames) {
    const auto& vf = g.value(frame);
    if (vf.ndim() != 3 || vf.dim(0) != cfg.in_channels || vf.dim(1) != cfg.image_size ||
        vf.dim(2) != cfg.image_size)
      throw std::invalid_argument("encode: frame shape mismatch");
    NodeId x = frame;
    for (size_t l = 0; l < cfg.conv_channels.size(); ++l) {
      const std::string base = "enc.conv" + std::to_string(l);
      x = g.relu(g.conv2d(x, g.param(base + ".w"), g.param(base + ".b"), cfg.stride, cfg.padding));
    }
    x = g.reshape(x, {cfg.flatten_size()});
    auto [hn, cn] = g.lstm_cell(x, h, c, w_ih, w_hh, b_ih, b_hh);
    h = hn;
    c = cn;
  }
  return g.affine(h, g.param("enc.fc.w"), g.param("enc.fc.b"));
}

}  // namespace groupflow
