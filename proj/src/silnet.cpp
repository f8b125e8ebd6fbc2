#include "silcarve/silnet.hpp"

namespace silcarve {

std::string to_string(Pooling p) { return p == Pooling::max ? "max" : "avg"; }
std::string to_string(Mode m) { return m == Mode::d2 ? "2d" : "3d"; }

Pooling parse_pooling(const std::string& s) {
  if (s == "max") return Pooling::max;
  if (s == "avg") return Pooling::avg;
  throw Error("unknown pooling '" + s + "' (expected max or avg)");
}

Mode parse_mode(const std::string& s) {
  if (s == "2d" || s == "2D") return Mode::d2;
  if (s == "3d" || s == "3D") return Mode::d3;
  throw Error("unknown mode '" + s + "' (expected 2d or 3d)");
}

int ModelConfig::encoder_layers() const {
  int layers = 0;
  for (int side = h; side > 2 && side % 2 == 0 && layers < 4; side /= 2) ++layers;
  return layers;
}

int ModelConfig::decoder3d_layers() const {
  int layers = 0;
  for (int side = 3; side < d; side = 2 * side + 1) ++layers;
  return std::max(layers, 1);
}

void ModelConfig::validate() const {
  if (h < 8 || h % 8 != 0) throw Error("image size must be a multiple of 8 and at least 8, got " + std::to_string(h));
  if (encoder_layers() < 2) throw Error("image size " + std::to_string(h) + " allows fewer than two encoder layers");
  if (d < 3 || d % 2 == 0) throw Error("voxel size must be odd and at least 3, got " + std::to_string(d));
  if (features < 1 || enc_channels < 1 || angle_dim < 1 || dec3d_channels < 1)
    throw Error("model widths must be positive");
  if (dec_channels < 8 || dec_channels % 8 != 0)
    throw Error("decoder channels must be a positive multiple of 8, got " + std::to_string(dec_channels));
}

std::vector<std::pair<std::string, Shape>> parameter_layout(const ModelConfig& c) {
  c.validate();
  std::vector<std::pair<std::string, Shape>> out;
  auto add = [&](const std::string& name, Shape w, int bias) {
    out.emplace_back(name + ".w", std::move(w));
    out.emplace_back(name + ".b", Shape{bias});
  };
  const int k = kEncoderKernel;
  add("enc.angle1", {c.angle_dim, 2}, c.angle_dim);
  add("enc.angle2", {c.angle_dim, c.angle_dim}, c.angle_dim);
  int in = 1, side = c.h;
  for (int l = 0; l < c.encoder_layers(); ++l) {
    const int ch = c.enc_channels << l;
    add("enc.conv" + std::to_string(l), {ch, in, k, k}, ch);
    in = ch + (l == c.angle_layer() ? c.angle_dim : 0);
    side /= 2;
  }
  add("enc.fc", {c.features, in * side * side}, c.features);

  const int base = c.h / 8;
  add("dec2d.fc", {c.dec_channels * base * base, c.features + 2}, c.dec_channels * base * base);
  int ch = c.dec_channels;
  for (int l = 0; l < kDecoder2dUps; ++l) {
    add("dec2d.up" + std::to_string(l), {ch, ch / 2, kUpKernel2d, kUpKernel2d}, ch / 2);
    ch /= 2;
    if (l > 0) add("dec2d.refine" + std::to_string(l), {ch, ch, 3, 3}, ch);
  }
  add("dec2d.out", {1, ch, 3, 3}, 1);

  add("dec3d.fc", {c.dec3d_channels * 27, c.features}, c.dec3d_channels * 27);
  const int layers = c.decoder3d_layers();
  ch = c.dec3d_channels;
  for (int l = 0; l < layers; ++l) {
    const int next = l + 1 == layers ? 1 : std::max(1, ch / 2);
    add("dec3d.up" + std::to_string(l), {ch, next, kUpKernel3d, kUpKernel3d, kUpKernel3d}, next);
    ch = next;
  }
  return out;
}

}  // namespace silcarve
