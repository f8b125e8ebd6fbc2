#pragma once

// Metaball solids and their orthographic renderings.
//
// World coordinates live in [-1, 1]^3 with z vertical. A view at angle
// theta rotates the object about z and looks along +x; image column j maps
// to y and image row r to z (row 0 at the top).

#include <cstdint>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "silcarve/image.hpp"

namespace silcarve {

inline constexpr double kFieldSoftening = 1e-6;
inline constexpr double kBlobExtent = 0.9;

struct BlobSpec {
  std::uint64_t seed = 0;
  std::vector<Eigen::Vector3d> centers;
  std::vector<double> weights;
  double iso = 1.0;
};

/// Sum of w_k / (|x - c_k|^2 + 1e-6).
double field(const BlobSpec& blob, const Eigen::Vector3d& x);
Eigen::Vector3d field_gradient(const BlobSpec& blob, const Eigen::Vector3d& x);

/// Sufficient test that the solid lies strictly inside the 0.9 ball: the
/// field bound sum w_k / (0.9 - |c_k|)^2 on the sphere stays below iso.
bool fits_in_extent(const BlobSpec& blob);

/// Deterministic in seed. Rejection-samples until the solid fits; gives up
/// after 1000 attempts.
BlobSpec sample_blob(std::uint64_t seed);

struct RenderedView {
  GrayImage image;
  Silhouette silhouette;
  double theta = 0.0;
};

/// Pixel centre coordinate along one image axis.
inline double pixel_coord(int index, int h) { return (index - (h - 1) / 2.0) * 2.0 / h; }

/// March every pixel ray from x = -1 to 1 in steps of 1/h, refine the first
/// iso-crossing by one bisection, and shade it with max(0, n . light).
/// light is in camera coordinates and need not be normalised.
RenderedView render_view(const BlobSpec& blob, double theta, int h, const Eigen::Vector3d& light);
RenderedView render_view(const BlobSpec& blob, double theta, int h);

/// Fraction of object pixels in a silhouette.
double coverage(const Silhouette& s);

}  // namespace silcarve
