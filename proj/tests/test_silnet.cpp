#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "silcarve/ops.hpp"
#include "silcarve/rng.hpp"
#include "silcarve/silnet.hpp"

using namespace silcarve;
namespace fs = std::filesystem;

namespace {

ModelConfig small_config(Pooling pooling = Pooling::max) {
  ModelConfig c;
  c.h = 8;
  c.d = 9;
  c.features = 16;
  c.enc_channels = 2;
  c.angle_dim = 4;
  c.dec_channels = 8;
  c.dec3d_channels = 4;
  c.pooling = pooling;
  return c;
}

GrayImage random_image(int h, Rng& rng) {
  GrayImage img(h, h);
  for (Eigen::Index n = 0; n < img.size(); ++n) img.data()[n] = static_cast<float>(rng.uniform());
  return img;
}

std::vector<View> random_views(int count, int h, Rng& rng) {
  std::vector<View> views;
  for (int m = 0; m < count; ++m) views.push_back({random_image(h, rng), rng.uniform(0.0, 120.0)});
  return views;
}

// Random non-zero biases so no unit sits exactly on a relu kink at zero.
template <typename Scalar>
ModelParams<Scalar> random_params(const ModelConfig& c, std::uint64_t seed) {
  auto p = init_params<Scalar>(c, seed);
  Rng rng(seed + 1);
  for (auto& [name, t] : p.tensors)
    if (t.rank() == 1)
      for (auto& v : t.data) v = static_cast<Scalar>(rng.uniform(-0.1, 0.1));
  for (auto& v : p.mean_image.data) v = static_cast<Scalar>(rng.uniform(0.0, 0.2));
  return p;
}

template <typename Scalar>
bool bit_equal(const Image<Scalar>& a, const Image<Scalar>& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::equal(a.data(), a.data() + a.size(), b.data());
}

Tensor<double> random_target(int h, Rng& rng) {
  Tensor<double> t({h, h});
  for (auto& v : t.data) v = rng.uniform() < 0.5 ? 0.0 : 1.0;
  return t;
}

template <typename Scalar>
Scalar model_loss(const ModelParams<Scalar>& p, const std::vector<View>& views, double theta_out, Mode mode,
                  const Tensor<double>& target) {
  std::vector<Tensor<Scalar>> images;
  std::vector<double> thetas;
  for (const auto& v : views) {
    images.push_back(preprocess(p, v.image));
    thetas.push_back(v.theta);
  }
  Graph<Scalar> g;
  SilNet<Scalar> net(g, p);
  return bce_loss(net.predict(images, thetas, theta_out, mode), target.cast<Scalar>()).value()[0];
}

}  // namespace

TEST_CASE("desk-scale layout") {
  ModelConfig c;
  CHECK(c.encoder_layers() == 4);
  CHECK(c.angle_layer() == 1);
  CHECK(c.decoder3d_layers() == 3);
  const auto layout = parameter_layout(c);
  auto shape_of = [&](const std::string& name) {
    for (const auto& [n, s] : layout)
      if (n == name) return s;
    return Shape{};
  };
  CHECK(shape_of("enc.conv0.w") == Shape{8, 1, 4, 4});
  CHECK(shape_of("enc.conv2.w") == Shape{32, 32, 4, 4});  // 16 conv channels + 16 angle channels
  CHECK(shape_of("enc.conv3.w") == Shape{64, 32, 4, 4});
  CHECK(shape_of("enc.fc.w") == Shape{128, 64 * 2 * 2});
  CHECK(shape_of("enc.angle1.w") == Shape{16, 2});
  CHECK(shape_of("enc.angle2.w") == Shape{16, 16});
  CHECK(shape_of("dec2d.fc.w") == Shape{64 * 4 * 4, 130});
  CHECK(shape_of("dec2d.out.w") == Shape{1, 8, 3, 3});
  CHECK(shape_of("dec3d.fc.w") == Shape{32 * 27, 128});
  CHECK(shape_of("dec3d.up2.w") == Shape{8, 1, 3, 3, 3});
  CHECK_THROWS_AS(parameter_layout(ModelConfig{.h = 12}), Error);
  CHECK_THROWS_AS(parameter_layout(ModelConfig{.d = 24}), Error);
}

TEST_CASE("angle encoding") {
  for (double theta : {0.0, 13.0, 90.0, 179.5, 359.0}) {
    const auto e = angle_encoding(theta);
    CHECK(std::abs(e[0] * e[0] + e[1] * e[1] - 1.0) < 1e-9);
  }
  auto dist = [](double a, double b) {
    const auto x = angle_encoding(a), y = angle_encoding(b);
    return std::hypot(x[0] - y[0], x[1] - y[1]);
  };
  CHECK(dist(359.0, 0.0) < dist(359.0, 180.0));
}

TEST_CASE("encode_view") {
  const auto c = small_config();
  const auto p = random_params<float>(c, 1);
  Rng rng(2);
  const View v{random_image(c.h, rng), 30.0};
  CHECK(encode_view(p, v).data == encode_view(p, v).data);

  const auto a = encode_view(p, View{v.image, 0.0});
  const auto b = encode_view(p, View{v.image, 90.0});
  float linf = 0.0f;
  for (std::size_t i = 0; i < a.size(); ++i) linf = std::max(linf, std::abs(a[i] - b[i]));
  CHECK(linf > 0.0f);

  auto zero = init_params<float>(c, 3);
  for (auto& [name, t] : zero.tensors) std::fill(t.data.begin(), t.data.end(), 0.0f);
  const auto z = encode_view(zero, View{GrayImage::Zero(c.h, c.h), 45.0});
  CHECK(z.shape == Shape{c.features});
  CHECK(std::all_of(z.data.begin(), z.data.end(), [](float x) { return x == 0.0f; }));

  CHECK_THROWS_AS(encode_view(p, View{GrayImage::Zero(c.h + 8, c.h + 8), 0.0}), Error);
}

TEST_CASE("fuse is order-agnostic") {
  for (Pooling pooling : {Pooling::max, Pooling::avg}) {
    const auto p = random_params<float>(small_config(pooling), 4);
    Rng rng(5);
    std::vector<Tensor<float>> feats;
    for (int m = 0; m < 3; ++m) feats.push_back(encode_view(p, View{random_image(8, rng), rng.uniform(0, 120)}));
    CHECK(fuse(p, {feats[0]}).data == feats[0].data);
    if (pooling == Pooling::max) CHECK(fuse(p, {feats[1], feats[1]}).data == feats[1].data);
    const auto ref = fuse(p, feats).data;
    std::vector<int> idx{0, 1, 2};
    do {
      CHECK(fuse(p, {feats[idx[0]], feats[idx[1]], feats[idx[2]]}).data == ref);
    } while (std::next_permutation(idx.begin(), idx.end()));
    CHECK_THROWS_AS(fuse(p, {}), Error);
  }
}

TEST_CASE("decoders produce probabilities deterministically") {
  const auto c = small_config();
  const auto p = random_params<float>(c, 6);
  Rng rng(7);
  Tensor<float> t({c.features});
  for (auto& v : t.data) v = static_cast<float>(rng.uniform(0.0, 1.0));

  const auto img = decode2d(p, t, 40.0);
  CHECK(img.rows() == c.h);
  CHECK(img.cols() == c.h);
  CHECK((img.array() > 0.0f).all());
  CHECK((img.array() < 1.0f).all());
  CHECK(bit_equal<float>(img, decode2d(p, t, 40.0)));

  const auto grid = decode3d(p, t);
  CHECK(grid.d == c.d);
  CHECK(std::all_of(grid.values.begin(), grid.values.end(), [](float x) { return x > 0.0f && x < 1.0f; }));
  CHECK(grid.values == decode3d(p, t).values);
}

TEST_CASE("3D mode at theta 0 is the depth minimum of the decoded grid") {
  auto c = small_config();
  c.h = 16;
  c.d = 15;
  const auto p = random_params<float>(c, 8);
  Rng rng(9);
  Tensor<float> t({c.features});
  for (auto& v : t.data) v = static_cast<float>(rng.uniform(0.0, 1.0));
  Graph<float> g;
  SilNet<float> net(g, p);
  auto grid = net.decode3d(g.constant(t));
  const auto projected = project_at(grid, 0.0).value();
  const auto direct = project_min(VoxelGrid<float>::from_tensor(grid.value()));
  CHECK(std::equal(projected.data.begin(), projected.data.end(), direct.data()));
}

TEST_CASE("predict is invariant to view order and duplication") {
  Rng rng(10);
  for (Pooling pooling : {Pooling::max, Pooling::avg})
    for (Mode mode : {Mode::d2, Mode::d3}) {
      const auto p = random_params<float>(small_config(pooling), 11);
      auto views = random_views(3, 8, rng);
      const auto ref = predict(p, views, 50.0, mode);
      std::vector<int> idx{0, 1, 2};
      while (std::next_permutation(idx.begin(), idx.end()))
        CHECK(bit_equal<float>(predict(p, {views[idx[0]], views[idx[1]], views[idx[2]]}, 50.0, mode), ref));
      if (pooling == Pooling::max) {
        CHECK(bit_equal<float>(predict(p, {views[0], views[1], views[2], views[1]}, 50.0, mode), ref));
      }
    }
}

TEST_CASE("one model accepts any number of views") {
  const auto p = random_params<float>(small_config(), 12);
  const auto count = p.parameter_count();
  Rng rng(13);
  for (int k : {1, 2, 3, 4}) {
    const auto out = predict(p, random_views(k, 8, rng), 10.0, Mode::d2);
    CHECK(out.rows() == 8);
    CHECK(p.parameter_count() == count);
  }
  CHECK_THROWS_AS(predict(p, {}, 0.0, Mode::d2), Error);
}

TEST_CASE("decoder gradients with respect to the feature match finite differences") {
  const auto c = small_config();
  const auto pf = random_params<float>(c, 14);
  const auto pd = pf.cast<double>();
  Rng rng(15);
  Tensor<double> t({c.features});
  for (auto& v : t.data) v = rng.uniform(0.1, 1.0);
  const auto target = random_target(c.h, rng);

  for (Mode mode : {Mode::d2, Mode::d3}) {
    Graph<float> g;
    SilNet<float> net(g, pf);
    auto tv = g.leaf(t.cast<float>(), true);
    auto out = mode == Mode::d2 ? net.decode2d(tv, 70.0) : net.render3d(net.decode3d(tv), 70.0);
    auto loss = bce_loss(out, target.cast<float>());
    g.backward(loss);
    const auto analytic = g.grad(tv);

    auto f = [&](const Tensor<double>& x) {
      Graph<double> gd;
      SilNet<double> nd(gd, pd);
      auto xv = gd.constant(x);
      auto o = mode == Mode::d2 ? nd.decode2d(xv, 70.0) : nd.render3d(nd.decode3d(xv), 70.0);
      return bce_loss(o, target).value()[0];
    };
    for (std::size_t i = 0; i < t.size(); ++i) {
      auto up = t, down = t;
      up[i] += 1e-6;
      down[i] -= 1e-6;
      const double fd = (f(up) - f(down)) / 2e-6;
      CHECK(std::abs(analytic[i] - fd) / std::max(1.0, std::abs(double(analytic[i]))) < 1e-3);
    }
  }
}

TEST_CASE("end-to-end parameter gradients match finite differences") {
  const auto c = small_config();
  Rng rng(16);
  const auto views = random_views(2, c.h, rng);
  const auto target = random_target(c.h, rng);
  for (Mode mode : {Mode::d2, Mode::d3}) {
    auto pf = random_params<float>(c, 17);
    auto pd = pf.cast<double>();

    std::vector<Tensor<float>> images;
    std::vector<double> thetas;
    for (const auto& v : views) {
      images.push_back(preprocess(pf, v.image));
      thetas.push_back(v.theta);
    }
    Graph<float> g;
    SilNet<float> net(g, pf, true, true);
    g.backward(bce_loss(net.predict(images, thetas, 25.0, mode), target.cast<float>()));
    const auto grads = net.gradients();

    int checked = 0, skipped = 0;
    for (auto& [name, tensor] : pd.tensors) {
      if (!is_encoder_param(name) && !is_decoder_param(name, mode)) continue;
      REQUIRE(grads.count(name));
      for (std::size_t i = 0; i < tensor.size(); ++i) {
        const double saved = tensor[i];
        auto diff = [&](double h) {
          tensor[i] = saved + h;
          const double up = model_loss(pd, views, 25.0, mode, target);
          tensor[i] = saved - h;
          const double down = model_loss(pd, views, 25.0, mode, target);
          tensor[i] = saved;
          return (up - down) / (2 * h);
        };
        const double fd = diff(1e-6);
        // A step that crosses a relu or pooling kink shows up as step-size dependence.
        if (std::abs(fd - diff(1e-7)) > 1e-5 * std::max(1.0, std::abs(fd))) {
          ++skipped;
          continue;
        }
        const double a = grads.at(name)[i];
        CHECK_MESSAGE(std::abs(a - fd) / std::max(1.0, std::abs(a)) < 1e-3, name << "[" << i << "]");
        ++checked;
      }
    }
    CHECK(checked > 0);
    CHECK(skipped * 20 < checked);
  }
}

TEST_CASE("checkpoints round-trip bit-exactly") {
  auto p = random_params<float>(small_config(Pooling::avg), 18);
  const auto dir = fs::temp_directory_path() / "silcarve_test_ckpt";
  fs::create_directories(dir);
  save_checkpoint(dir / "m.ckpt", p, {{"epoch", "3"}});
  const auto ck = load_checkpoint(dir / "m.ckpt");
  CHECK(ck.info.at("epoch") == "3");
  CHECK(ck.params.config.pooling == Pooling::avg);
  CHECK(ck.params.config.h == 8);
  CHECK(ck.params.mean_image.data == p.mean_image.data);
  REQUIRE(ck.params.tensors.size() == p.tensors.size());
  for (const auto& [name, t] : p.tensors) {
    CHECK(ck.params.tensors.at(name).shape == t.shape);
    CHECK(ck.params.tensors.at(name).data == t.data);
  }

  std::ofstream(dir / "junk.ckpt") << "not a checkpoint";
  CHECK_THROWS_AS(load_checkpoint(dir / "junk.ckpt"), Error);
  CHECK_THROWS_AS(load_checkpoint(dir / "absent.ckpt"), Error);
  {
    std::ifstream in(dir / "m.ckpt", std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), {});
    std::ofstream(dir / "short.ckpt", std::ios::binary) << bytes.substr(0, bytes.size() - 4);
  }
  CHECK_THROWS_AS(load_checkpoint(dir / "short.ckpt"), Error);
  fs::remove_all(dir);
}
