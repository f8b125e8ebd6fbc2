#pragma once

// SilNet: shared encoder towers conditioned on the view angle, set pooling
// over towers, and either a 2D silhouette decoder conditioned on the output
// angle or a 3D voxel decoder followed by the projection layer.

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "silcarve/graph.hpp"
#include "silcarve/image.hpp"
#include "silcarve/ops.hpp"
#include "silcarve/rng.hpp"
#include "silcarve/voxel.hpp"

namespace silcarve {

enum class Pooling { max, avg };
enum class Mode { d2, d3 };

std::string to_string(Pooling p);
std::string to_string(Mode m);
Pooling parse_pooling(const std::string& s);
Mode parse_mode(const std::string& s);

struct ModelConfig {
  int h = 32;              // input and output image side
  int d = 25;              // voxel grid side (3D decoder)
  int features = 128;      // F
  int enc_channels = 8;    // first encoder conv; doubles per layer
  int angle_dim = 16;      // width of the two angle FC layers
  int dec_channels = 64;   // 2D decoder base map channels; halves per up-sampling
  int dec3d_channels = 32; // 3D decoder base volume channels
  Pooling pooling = Pooling::max;

  /// Number of stride-2 encoder convolutions: halve down to 2x2, at most 4.
  int encoder_layers() const;
  /// Encoder conv after which the angle embedding is concatenated (0-based).
  int angle_layer() const { return std::min(2, encoder_layers()) - 1; }
  /// 3D conv-transposes needed to grow 3 -> 7 -> 15 -> ... past d.
  int decoder3d_layers() const;
  void validate() const;
};

inline constexpr int kEncoderKernel = 4;
inline constexpr int kUpKernel2d = 2;
inline constexpr int kUpKernel3d = 3;
inline constexpr int kDecoder2dUps = 3;

/// (sin theta, cos theta) with theta in degrees.
inline std::array<double, 2> angle_encoding(double theta) { return {sin_deg(theta), cos_deg(theta)}; }

/// Names and shapes of every learnable tensor, in a fixed order.
std::vector<std::pair<std::string, Shape>> parameter_layout(const ModelConfig& config);

inline bool is_encoder_param(const std::string& name) { return name.rfind("enc.", 0) == 0; }
inline bool is_decoder_param(const std::string& name, Mode mode) {
  return name.rfind(mode == Mode::d2 ? "dec2d." : "dec3d.", 0) == 0;
}

/// Uniform on +-sqrt(6 / (fan_in + fan_out)). Matrices [out, in] use their
/// two dims; kernels [a, b, k...] use a * kvol and b * kvol.
template <typename Scalar>
Tensor<Scalar> xavier_init(const Shape& shape, Rng& rng) {
  if (shape.size() < 2) throw Error("xavier_init: need at least two dims, got " + to_string(shape));
  std::size_t kvol = 1;
  for (std::size_t a = 2; a < shape.size(); ++a) kvol *= static_cast<std::size_t>(shape[a]);
  const double fan_out = static_cast<double>(shape[0]) * static_cast<double>(kvol);
  const double fan_in = static_cast<double>(shape[1]) * static_cast<double>(kvol);
  if (fan_in + fan_out <= 0.0) throw Error("xavier_init: zero fan for shape " + to_string(shape));
  const double bound = std::sqrt(6.0 / (fan_in + fan_out));
  Tensor<Scalar> t(shape);
  for (auto& v : t.data) v = static_cast<Scalar>(rng.uniform(-bound, bound));
  return t;
}

template <typename Scalar>
struct ModelParams {
  ModelConfig config;
  std::map<std::string, Tensor<Scalar>> tensors;
  Tensor<Scalar> mean_image;  // [h, h], subtracted from every input image

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : tensors) n += t.size();
    return n;
  }

  template <typename Other>
  ModelParams<Other> cast() const {
    ModelParams<Other> out;
    out.config = config;
    for (const auto& [name, t] : tensors) out.tensors.emplace(name, t.template cast<Other>());
    out.mean_image = mean_image.template cast<Other>();
    return out;
  }
};

/// Xavier weights, zero biases, zero mean image.
template <typename Scalar>
ModelParams<Scalar> init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  ModelParams<Scalar> p;
  p.config = config;
  for (const auto& [name, shape] : parameter_layout(config)) {
    Rng rng(derive_seed(seed, {fnv1a(name)}));
    p.tensors.emplace(name, shape.size() == 1 ? Tensor<Scalar>(shape) : xavier_init<Scalar>(shape, rng));
  }
  p.mean_image = Tensor<Scalar>({config.h, config.h});
  return p;
}

/// Image minus the model's mean image, as a [h, h] tensor.
template <typename Scalar>
Tensor<Scalar> preprocess(const ModelParams<Scalar>& params, const GrayImage& image) {
  const int h = params.config.h;
  if (image.rows() != h || image.cols() != h)
    throw Error("expected a " + std::to_string(h) + "x" + std::to_string(h) + " image, got " +
                std::to_string(image.rows()) + "x" + std::to_string(image.cols()));
  Tensor<Scalar> t({h, h});
  for (std::size_t n = 0; n < t.size(); ++n) t[n] = static_cast<Scalar>(image.data()[n]) - params.mean_image[n];
  return t;
}

/// Binds ModelParams into one graph. Parameters enter the graph on first use;
/// those not selected as trainable are untracked, so frozen parts cost no
/// backward work.
template <typename Scalar>
class SilNet {
 public:
  SilNet(Graph<Scalar>& graph, const ModelParams<Scalar>& params, bool train_encoder = false,
         bool train_decoder = false)
      : g_(graph), p_(params), train_encoder_(train_encoder), train_decoder_(train_decoder) {}

  /// image: preprocessed [h, h] tensor.
  Var<Scalar> encode_view(const Tensor<Scalar>& image, double theta) {
    const auto& c = p_.config;
    if (image.shape != Shape{c.h, c.h})
      throw Error("encode_view: expected a [" + std::to_string(c.h) + "x" + std::to_string(c.h) + "] image, got " +
                  to_string(image.shape));
    auto x = reshape(g_.constant(image), {1, c.h, c.h});
    const auto enc = angle_encoding(theta);
    auto a = g_.constant(Tensor<Scalar>({2}, {static_cast<Scalar>(enc[0]), static_cast<Scalar>(enc[1])}));
    a = relu(linear(a, bind("enc.angle1.w"), bind("enc.angle1.b")));
    a = relu(linear(a, bind("enc.angle2.w"), bind("enc.angle2.b")));
    for (int l = 0; l < c.encoder_layers(); ++l) {
      const std::string pre = "enc.conv" + std::to_string(l);
      x = relu(add_channel_bias(conv2d(x, bind(pre + ".w"), 2, 1), bind(pre + ".b")));
      if (l == c.angle_layer()) {
        const Shape& s = x.shape();
        x = concat<Scalar>({x, broadcast_spatial(a, {s[1], s[2]})});
      }
    }
    x = reshape(x, {static_cast<int>(x.size())});
    return relu(linear(x, bind("enc.fc.w"), bind("enc.fc.b")));
  }

  Var<Scalar> fuse(const std::vector<Var<Scalar>>& features) {
    if (features.empty()) throw Error("fuse: no features");
    return p_.config.pooling == Pooling::max ? max_over_set(features) : avg_over_set(features);
  }

  /// [h, h] map of P(non-object).
  Var<Scalar> decode2d(Var<Scalar> t, double theta_out) {
    const auto& c = p_.config;
    const auto enc = angle_encoding(theta_out);
    auto x = concat<Scalar>(
        {t, g_.constant(Tensor<Scalar>({2}, {static_cast<Scalar>(enc[0]), static_cast<Scalar>(enc[1])}))});
    x = relu(linear(x, bind("dec2d.fc.w"), bind("dec2d.fc.b")));
    const int side = c.h / 8;
    x = reshape(x, {c.dec_channels, side, side});
    for (int l = 0; l < kDecoder2dUps; ++l) {
      const std::string up = "dec2d.up" + std::to_string(l);
      x = relu(add_channel_bias(conv_transpose(x, bind(up + ".w"), 2, 2), bind(up + ".b")));
      if (l > 0) {
        const std::string rf = "dec2d.refine" + std::to_string(l);
        x = relu(add_channel_bias(conv2d(x, bind(rf + ".w"), 1, 1), bind(rf + ".b")));
      }
    }
    x = add_channel_bias(conv2d(x, bind("dec2d.out.w"), 1, 1), bind("dec2d.out.b"));
    return sigmoid(reshape(x, {c.h, c.h}));
  }

  /// [d, d, d] grid in (0, 1); 0 = occupied.
  Var<Scalar> decode3d(Var<Scalar> t) {
    const auto& c = p_.config;
    auto x = relu(linear(t, bind("dec3d.fc.w"), bind("dec3d.fc.b")));
    x = reshape(x, {c.dec3d_channels, 3, 3, 3});
    const int layers = c.decoder3d_layers();
    for (int l = 0; l < layers; ++l) {
      const std::string up = "dec3d.up" + std::to_string(l);
      x = add_channel_bias(conv_transpose(x, bind(up + ".w"), 2, 3), bind(up + ".b"));
      if (l + 1 < layers) x = relu(x);
    }
    x = crop_center3d(x, c.d);
    return sigmoid(reshape(x, {c.d, c.d, c.d}));
  }

  /// Projection of the decoded grid at theta_out, resized to [h, h].
  Var<Scalar> render3d(Var<Scalar> grid, double theta_out) {
    const auto& c = p_.config;
    auto img = project_at(grid, theta_out);
    return c.d == c.h ? img : upsample_nearest(img, c.h, c.h);
  }

  /// images: preprocessed [h, h] tensors paired with thetas.
  Var<Scalar> predict(const std::vector<Tensor<Scalar>>& images, const std::vector<double>& thetas, double theta_out,
                      Mode mode) {
    if (images.empty()) throw Error("predict: at least one view is required");
    if (images.size() != thetas.size()) throw Error("predict: image and angle counts differ");
    std::vector<Var<Scalar>> feats;
    for (std::size_t m = 0; m < images.size(); ++m) feats.push_back(encode_view(images[m], thetas[m]));
    auto t = fuse(feats);
    return mode == Mode::d2 ? decode2d(t, theta_out) : render3d(decode3d(t), theta_out);
  }

  /// Gradients of the last backward pass for every trainable bound tensor.
  std::map<std::string, std::vector<Scalar>> gradients() const {
    std::map<std::string, std::vector<Scalar>> out;
    for (const auto& [name, v] : bound_)
      if (v.tracked()) out.emplace(name, g_.grad(v));
    return out;
  }

  Graph<Scalar>& graph() { return g_; }

 private:
  Var<Scalar> bind(const std::string& name) {
    auto it = bound_.find(name);
    if (it != bound_.end()) return it->second;
    auto t = p_.tensors.find(name);
    if (t == p_.tensors.end()) throw Error("model has no parameter " + name);
    const bool trainable = is_encoder_param(name) ? train_encoder_ : train_decoder_;
    return bound_.emplace(name, g_.view(t->second, trainable)).first->second;
  }

  Graph<Scalar>& g_;
  const ModelParams<Scalar>& p_;
  bool train_encoder_;
  bool train_decoder_;
  std::map<std::string, Var<Scalar>> bound_;
};

// ---------------------------------------------------------------------------
// Value-level entry points. Images are raw [0, 1] renderings; the model's
// mean image is subtracted here.

struct View {
  GrayImage image;
  double theta = 0.0;
};

template <typename Scalar>
Tensor<Scalar> encode_view(const ModelParams<Scalar>& params, const View& view) {
  Graph<Scalar> g;
  SilNet<Scalar> net(g, params);
  return net.encode_view(preprocess(params, view.image), view.theta).value();
}

template <typename Scalar>
Tensor<Scalar> fuse(const ModelParams<Scalar>& params, const std::vector<Tensor<Scalar>>& features) {
  Graph<Scalar> g;
  SilNet<Scalar> net(g, params);
  std::vector<Var<Scalar>> vars;
  for (const auto& f : features) vars.push_back(g.constant(f));
  return net.fuse(vars).value();
}

template <typename Scalar>
Image<Scalar> tensor_to_image(const Tensor<Scalar>& t) {
  if (t.rank() != 2) throw Error("expected a 2-d tensor, got " + to_string(t.shape));
  return Eigen::Map<const Image<Scalar>>(t.data.data(), t.dim(0), t.dim(1));
}

template <typename Scalar>
Image<Scalar> decode2d(const ModelParams<Scalar>& params, const Tensor<Scalar>& t, double theta_out) {
  Graph<Scalar> g;
  SilNet<Scalar> net(g, params);
  return tensor_to_image(net.decode2d(g.constant(t), theta_out).value());
}

template <typename Scalar>
VoxelGrid<Scalar> decode3d(const ModelParams<Scalar>& params, const Tensor<Scalar>& t) {
  Graph<Scalar> g;
  SilNet<Scalar> net(g, params);
  return VoxelGrid<Scalar>::from_tensor(net.decode3d(g.constant(t)).value());
}

template <typename Scalar>
Image<Scalar> predict(const ModelParams<Scalar>& params, const std::vector<View>& views, double theta_out, Mode mode) {
  if (views.empty()) throw Error("predict: at least one view is required");
  std::vector<Tensor<Scalar>> images;
  std::vector<double> thetas;
  for (const auto& v : views) {
    images.push_back(preprocess(params, v.image));
    thetas.push_back(v.theta);
  }
  Graph<Scalar> g;
  SilNet<Scalar> net(g, params);
  return tensor_to_image(net.predict(images, thetas, theta_out, mode).value());
}

// ---------------------------------------------------------------------------
// Checkpoints: "SILCARVE-CKPT 1\n", a little-endian uint64 header length, a
// JSON header (config, extra info, tensor names and shapes), then raw
// little-endian float32 payloads in header order.

struct Checkpoint {
  ModelParams<float> params;
  std::map<std::string, std::string> info;  // free-form training metadata
};

void save_checkpoint(const std::filesystem::path& path, const ModelParams<float>& params,
                     const std::map<std::string, std::string>& info = {});
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace silcarve
