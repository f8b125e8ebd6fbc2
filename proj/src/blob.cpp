#include "silcarve/blob.hpp"

#include <cmath>
#include <string>

#include "silcarve/rng.hpp"
#include "silcarve/tensor.hpp"
#include "silcarve/voxel.hpp"

namespace silcarve {

namespace {

constexpr int kMaxAttempts = 1000;
constexpr double kCenterRadius = 0.4;
constexpr double kMinWeight = 0.04;
constexpr double kMaxWeight = 0.09;

Eigen::Vector3d sample_in_ball(Rng& rng, double radius) {
  for (;;) {
    Eigen::Vector3d p(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));
    if (p.squaredNorm() <= 1.0) return radius * p;
  }
}

}  // namespace

double field(const BlobSpec& blob, const Eigen::Vector3d& x) {
  double f = 0.0;
  for (std::size_t k = 0; k < blob.centers.size(); ++k)
    f += blob.weights[k] / ((x - blob.centers[k]).squaredNorm() + kFieldSoftening);
  return f;
}

Eigen::Vector3d field_gradient(const BlobSpec& blob, const Eigen::Vector3d& x) {
  Eigen::Vector3d g = Eigen::Vector3d::Zero();
  for (std::size_t k = 0; k < blob.centers.size(); ++k) {
    const Eigen::Vector3d r = x - blob.centers[k];
    const double q = r.squaredNorm() + kFieldSoftening;
    g -= 2.0 * blob.weights[k] / (q * q) * r;
  }
  return g;
}

bool fits_in_extent(const BlobSpec& blob) {
  double bound = 0.0;
  for (std::size_t k = 0; k < blob.centers.size(); ++k) {
    const double gap = kBlobExtent - blob.centers[k].norm();
    if (gap <= 0.0) return false;
    bound += blob.weights[k] / (gap * gap);
  }
  return !blob.centers.empty() && bound < blob.iso;
}

BlobSpec sample_blob(std::uint64_t seed) {
  Rng rng(seed);
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    BlobSpec blob;
    blob.seed = seed;
    const int count = rng.range(3, 8);
    for (int k = 0; k < count; ++k) {
      blob.centers.push_back(sample_in_ball(rng, kCenterRadius));
      blob.weights.push_back(rng.uniform(kMinWeight, kMaxWeight));
    }
    if (fits_in_extent(blob)) return blob;
  }
  throw Error("sample_blob: no blob fits the extent after " + std::to_string(kMaxAttempts) + " attempts (seed " +
              std::to_string(seed) + ")");
}

RenderedView render_view(const BlobSpec& blob, double theta, int h, const Eigen::Vector3d& light) {
  if (h < 16) throw Error("render_view: image size must be at least 16, got " + std::to_string(h));
  const double cs = cos_deg(theta), sn = sin_deg(theta);
  // Camera point p samples the object at R p.
  Eigen::Matrix3d rot;
  rot << cs, -sn, 0, sn, cs, 0, 0, 0, 1;
  const Eigen::Vector3d l = light.normalized();
  const double step = 1.0 / h;
  const int samples = 2 * h + 1;

  RenderedView out{GrayImage::Zero(h, h), Silhouette::Constant(h, h, kBackground), theta};
  for (int row = 0; row < h; ++row) {
    const double z = -pixel_coord(row, h);
    for (int col = 0; col < h; ++col) {
      const double y = pixel_coord(col, h);
      auto f_at = [&](double x) { return field(blob, rot * Eigen::Vector3d(x, y, z)) - blob.iso; };
      double prev_x = -1.0;
      bool hit = f_at(prev_x) >= 0.0;
      double hit_x = prev_x;
      for (int s = 1; s < samples && !hit; ++s) {
        const double x = -1.0 + s * step;
        const double f = f_at(x);
        if (f >= 0.0) {
          hit = true;
          const double mid = 0.5 * (prev_x + x);
          hit_x = f_at(mid) >= 0.0 ? mid : x;
        }
        prev_x = x;
      }
      if (!hit) continue;
      out.silhouette(row, col) = kObject;
      const Eigen::Vector3d q = rot * Eigen::Vector3d(hit_x, y, z);
      const Eigen::Vector3d n = -(rot.transpose() * field_gradient(blob, q));
      const double norm = n.norm();
      if (norm > 0.0) out.image(row, col) = static_cast<float>(std::max(0.0, n.dot(l) / norm));
    }
  }
  return out;
}

RenderedView render_view(const BlobSpec& blob, double theta, int h) {
  return render_view(blob, theta, h, Eigen::Vector3d(-1.0, 0.0, 0.0));
}

double coverage(const Silhouette& s) {
  return static_cast<double>((s.array() == kObject).count()) / static_cast<double>(s.size());
}

}  // namespace silcarve
