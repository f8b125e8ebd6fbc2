#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numbers>

#include "silcarve/blob.hpp"
#include "silcarve/dataset.hpp"
#include "silcarve/metrics.hpp"
#include "silcarve/pgm.hpp"
#include "silcarve/rng.hpp"
#include "silcarve/voxel.hpp"

using namespace silcarve;
namespace fs = std::filesystem;

namespace {

BlobSpec single_ball(const Eigen::Vector3d& c, double w) {
  BlobSpec b;
  b.centers = {c};
  b.weights = {w};
  return b;
}

// Occupied iff the voxel centre is inside the solid; same axis mapping as
// the renderer (i along x, j along y, k down z).
VoxelGrid<float> voxelize(const BlobSpec& b, int d) {
  VoxelGrid<float> v(d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j)
      for (int k = 0; k < d; ++k)
        if (field(b, {pixel_coord(i, d), pixel_coord(j, d), -pixel_coord(k, d)}) >= b.iso) v(i, j, k) = 0.0f;
  return v;
}

Silhouette to_mask(const Image<float>& p) { return binarize(p); }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("silcarve_test_" + name);
  fs::remove_all(dir);
  return dir;
}

}  // namespace

TEST_CASE("sample_blob is deterministic in its seed") {
  const auto a = sample_blob(123), b = sample_blob(123);
  CHECK(a.seed == b.seed);
  CHECK(a.weights == b.weights);
  REQUIRE(a.centers.size() == b.centers.size());
  for (std::size_t k = 0; k < a.centers.size(); ++k) CHECK(a.centers[k] == b.centers[k]);
  CHECK(sample_blob(124).weights != a.weights);
}

TEST_CASE("sampled blobs are nonempty and stay inside the 0.9 ball") {
  Rng dirs(99);
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto b = sample_blob(seed);
    CHECK(b.centers.size() >= 3);
    CHECK(b.centers.size() <= 8);
    CHECK(b.iso > 0.0);
    for (double w : b.weights) CHECK(w > 0.0);
    for (const auto& c : b.centers) CHECK(c.cwiseAbs().maxCoeff() <= 1.0);
    // Nonempty: the field at a centre is at least w / 1e-6.
    CHECK(field(b, b.centers[0]) >= b.iso);
    // Fits: probe the 0.9 sphere in random directions.
    for (int probe = 0; probe < 200; ++probe) {
      Eigen::Vector3d u(dirs.uniform(-1, 1), dirs.uniform(-1, 1), dirs.uniform(-1, 1));
      if (u.norm() < 1e-3) continue;
      CHECK(field(b, 0.9 * u.normalized()) < b.iso);
    }
  }
}

TEST_CASE("an empty solid renders nothing") {
  const auto b = single_ball(Eigen::Vector3d::Zero(), 1e-9);
  const auto v = render_view(b, 30.0, 16);
  CHECK((v.silhouette.array() == kBackground).all());
  CHECK((v.image.array() == 0.0f).all());
}

TEST_CASE("a single ball renders as a disc of the analytic radius") {
  const int h = 32;
  const double px = 2.0 / h;
  for (const auto& c : {Eigen::Vector3d(0, 0, 0), Eigen::Vector3d(0.2, -0.15, 0.1)}) {
    const auto b = single_ball(c, 0.16);
    const double r = std::sqrt(0.16 / b.iso - kFieldSoftening);
    for (double theta : {0.0, 37.0, 90.0, 120.0}) {
      // Centre of the ball in the camera frame: R^T c.
      const double cs = std::cos(theta * std::numbers::pi / 180), sn = std::sin(theta * std::numbers::pi / 180);
      const double cy = -sn * c.x() + cs * c.y(), cz = c.z();
      const auto v = render_view(b, theta, h);
      for (int row = 0; row < h; ++row)
        for (int col = 0; col < h; ++col) {
          const double dist = std::hypot(pixel_coord(col, h) - cy, -pixel_coord(row, h) - cz);
          if (dist < r - px) CHECK(v.silhouette(row, col) == kObject);
          if (dist > r + px) CHECK(v.silhouette(row, col) == kBackground);
        }
    }
  }
}

TEST_CASE("a centred ball looks the same at 0 and 90 degrees") {
  const auto b = single_ball(Eigen::Vector3d::Zero(), 0.2);
  CHECK(render_view(b, 0.0, 24).silhouette == render_view(b, 90.0, 24).silhouette);
}

TEST_CASE("rendering is deterministic and shading stays on the silhouette") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto b = sample_blob(seed);
    const auto v = render_view(b, 17.5 * static_cast<double>(seed % 7), 32, {-1.0, 0.3, -0.2});
    const auto w = render_view(b, 17.5 * static_cast<double>(seed % 7), 32, {-1.0, 0.3, -0.2});
    CHECK(v.image == w.image);
    CHECK(v.silhouette == w.silhouette);
    CHECK((v.image.array() >= 0.0f).all());
    CHECK((v.image.array() <= 1.0f).all());
    CHECK(((v.image.array() > 0.0f) <= (v.silhouette.array() == kObject)).all());
    CHECK((v.image.array() > 0.0f).count() > 0);
  }
}

TEST_CASE("rendered silhouettes agree with projections of a voxelised copy") {
  // Nearest-neighbour rotation dilates oblique projections by about half a
  // voxel, so single views can dip; the mean must stay above 0.95 and the
  // axis-aligned views must agree almost exactly.
  const int d = 25;
  double total = 0.0;
  int views = 0;
  for (std::uint64_t o = 0; o < 20; ++o) {
    const auto obj = generate_object(derive_seed(5, {o}), 5, d);
    const auto vox = voxelize(obj.blob, d);
    for (const auto& v : obj.views) {
      const double value = iou(to_mask(project_at(vox, v.theta)), v.silhouette);
      CHECK(value >= 0.85);
      total += value;
      ++views;
    }
    for (double theta : {0.0, 90.0})
      CHECK(iou(to_mask(project_at(vox, theta)), render_view(obj.blob, theta, d).silhouette) >= 0.97);
  }
  CHECK(total / views >= 0.95);
}

TEST_CASE("carved hulls of generated objects re-project onto their silhouettes") {
  const int d = 25;
  double total = 0.0;
  int views = 0;
  for (std::uint64_t o = 0; o < 20; ++o) {
    const auto obj = generate_object(derive_seed(6, {o}), 5, d);
    std::vector<Silhouette> sils;
    for (const auto& v : obj.views) sils.push_back(v.silhouette);
    const auto hull = carve_hull(sils, obj.thetas);
    for (std::size_t m = 0; m < sils.size(); ++m) {
      total += iou(to_mask(project_at(hull, obj.thetas[m])), sils[m]);
      ++views;
    }
  }
  CHECK(total / views >= 0.98);
}

TEST_CASE("generated objects respect coverage and angle bounds") {
  for (std::uint64_t o = 0; o < 30; ++o) {
    const auto obj = generate_object(derive_seed(7, {o}), 5, 32);
    REQUIRE(obj.views.size() == 5);
    for (std::size_t m = 0; m < 5; ++m) {
      CHECK(obj.thetas[m] >= 0.0);
      CHECK(obj.thetas[m] <= 120.0);
      CHECK(obj.views[m].theta == obj.thetas[m]);
      CHECK(coverage(obj.views[m].silhouette) >= 0.05);
      CHECK(coverage(obj.views[m].silhouette) <= 0.70);
    }
  }
}

TEST_CASE("PGM files round-trip") {
  Rng rng(3);
  Gray8 img(7, 5);
  for (Eigen::Index n = 0; n < img.size(); ++n) img.data()[n] = static_cast<std::uint8_t>(rng.below(256));
  const auto dir = scratch("pgm");
  fs::create_directories(dir);
  write_pgm(dir / "a.pgm", img);
  CHECK(read_pgm(dir / "a.pgm") == img);

  std::ofstream(dir / "comment.pgm", std::ios::binary) << "P5\n# note\n2 1\n255\n\x07\x09";
  const auto c = read_pgm(dir / "comment.pgm");
  CHECK(c.rows() == 1);
  CHECK(c(0, 1) == 9);

  std::ofstream(dir / "bad.pgm") << "P2\n1 1\n255\n0\n";
  CHECK_THROWS_AS(read_pgm(dir / "bad.pgm"), Error);
  std::ofstream(dir / "short.pgm", std::ios::binary) << "P5\n4 4\n255\nab";
  CHECK_THROWS_AS(read_pgm(dir / "short.pgm"), Error);

  Silhouette s = Silhouette::Constant(3, 3, kBackground);
  s(1, 2) = kObject;
  const auto g = silhouette_to_gray8(s);
  CHECK(g(1, 2) == 0);
  CHECK(g(0, 0) == 255);
  CHECK(silhouette_from_gray8(g) == s);
  fs::remove_all(dir);
}

TEST_CASE("split counts follow 75/10/15") {
  const auto c = split_counts(20);
  CHECK(c.train == 15);
  CHECK(c.val == 2);
  CHECK(c.test == 3);
  const auto big = split_counts(600);
  CHECK(big.train == 450);
  CHECK(big.val == 60);
  CHECK(big.test == 90);
}

TEST_CASE("build_dataset writes a reproducible manifest") {
  const auto a = scratch("ds_a"), b = scratch("ds_b");
  const auto ma = build_dataset(20, 5, 16, 77, a, 1);
  build_dataset(20, 5, 16, 77, b, 3);
  CHECK(ma.split("train").size() == 15);
  CHECK(ma.split("val").size() == 2);
  CHECK(ma.split("test").size() == 3);

  for (const auto& entry : fs::recursive_directory_iterator(a)) {
    if (!entry.is_regular_file()) continue;
    const auto rel = fs::relative(entry.path(), a);
    CHECK(slurp(entry.path()) == slurp(b / rel));
  }

  const auto loaded = load_manifest(a);
  REQUIRE(loaded.objects.size() == 20);
  CHECK(loaded.h == 16);
  for (std::size_t o = 0; o < 20; ++o) {
    CHECK(loaded.objects[o].id == ma.objects[o].id);
    CHECK(loaded.objects[o].split == ma.objects[o].split);
    CHECK(loaded.objects[o].seed == ma.objects[o].seed);
    for (std::size_t m = 0; m < 5; ++m) CHECK(loaded.objects[o].views[m].theta == ma.objects[o].views[m].theta);
  }
  // The stored blob seed and angle rebuild the stored silhouette.
  const auto& first = loaded.objects[0];
  CHECK(render_view(sample_blob(first.seed), first.views[0].theta, 16).silhouette == loaded.silhouette(first, 0));

  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("view angles are uniform on [0, 120]") {
  const auto dir = scratch("ks");
  const auto m = build_dataset(100, 5, 16, 2024, dir, 2);
  std::vector<double> thetas;
  for (const auto& o : m.objects)
    for (const auto& v : o.views) thetas.push_back(v.theta);
  REQUIRE(thetas.size() == 500);
  std::sort(thetas.begin(), thetas.end());
  double dmax = 0.0;
  const double n = static_cast<double>(thetas.size());
  for (std::size_t i = 0; i < thetas.size(); ++i) {
    const double cdf = thetas[i] / 120.0;
    dmax = std::max({dmax, std::abs(cdf - static_cast<double>(i) / n), std::abs(static_cast<double>(i + 1) / n - cdf)});
  }
  // Asymptotic Kolmogorov critical value at alpha = 0.01.
  CHECK(dmax < 1.628 / std::sqrt(n));
  fs::remove_all(dir);
}

TEST_CASE("build_dataset rejections") {
  CHECK_THROWS_AS(build_dataset(9, 5, 16, 1, scratch("few"), 1), Error);
  const auto dir = scratch("blocked");
  fs::create_directories(dir);
  std::ofstream(dir / "file") << "x";
  CHECK_THROWS_AS(build_dataset(10, 5, 16, 1, dir / "file" / "out", 1), Error);
  fs::remove_all(dir);
  CHECK_THROWS_AS(load_manifest(scratch("missing")), Error);
}
