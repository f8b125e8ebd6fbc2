#pragma once

// Voxel-grid geometry: nearest-neighbour rotation about the vertical axis,
// orthographic min-projection, and discrete visual-hull carving.
//
// Grid cells are addressed (i, j, k): i is depth toward the camera at
// theta = 0, j the horizontal image axis, k the vertical (rotation) axis.
// A projected pixel (j, k) is stored at image row k, column j.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <numbers>
#include <string>
#include <vector>

#include "silcarve/graph.hpp"
#include "silcarve/image.hpp"

namespace silcarve {

/// cos/sin of an angle in degrees; exact at multiples of 90.
inline double cos_deg(double theta) {
  const double r = std::fmod(theta, 360.0);
  if (r == 0.0) return 1.0;
  if (std::abs(r) == 180.0) return -1.0;
  if (std::abs(r) == 90.0 || std::abs(r) == 270.0) return 0.0;
  return std::cos(theta * std::numbers::pi / 180.0);
}

inline double sin_deg(double theta) {
  const double r = std::fmod(theta, 360.0);
  if (r == 0.0 || std::abs(r) == 180.0) return 0.0;
  if (r == 90.0 || r == -270.0) return 1.0;
  if (r == -90.0 || r == 270.0) return -1.0;
  return std::sin(theta * std::numbers::pi / 180.0);
}

/// Occupancy field, 0 = occupied and 1 = empty.
template <typename Scalar>
struct VoxelGrid {
  int d = 0;
  std::vector<Scalar> values;

  VoxelGrid() = default;
  explicit VoxelGrid(int side, Scalar fill = Scalar(1))
      : d(side), values(static_cast<std::size_t>(side) * side * side, fill) {}

  std::size_t index(int i, int j, int k) const { return (static_cast<std::size_t>(i) * d + j) * d + k; }
  Scalar& operator()(int i, int j, int k) { return values[index(i, j, k)]; }
  const Scalar& operator()(int i, int j, int k) const { return values[index(i, j, k)]; }

  Tensor<Scalar> tensor() const { return Tensor<Scalar>({d, d, d}, values); }
  static VoxelGrid from_tensor(const Tensor<Scalar>& t) {
    if (t.rank() != 3 || t.dim(0) != t.dim(1) || t.dim(1) != t.dim(2))
      throw Error("voxel grid needs a cubic [d, d, d] tensor, got " + to_string(t.shape));
    VoxelGrid g;
    g.d = t.dim(0);
    g.values = t.data;
    return g;
  }
};

/// For every output cell of a rotated grid, the flat source index it reads,
/// or -1 when the source lies outside the grid (reads the empty fill).
inline std::vector<std::int32_t> rotation_source_map(int d, double theta) {
  const double c = (d - 1) / 2.0;
  const double cs = cos_deg(theta), sn = sin_deg(theta);
  std::vector<std::int32_t> map(static_cast<std::size_t>(d) * d * d);
  std::size_t out = 0;
  for (int i = 0; i < d; ++i) {
    const double ic = i - c;
    for (int j = 0; j < d; ++j) {
      const double jc = j - c;
      const auto si = static_cast<long>(std::floor(cs * ic - sn * jc + 0.5 + c));
      const auto sj = static_cast<long>(std::floor(sn * ic + cs * jc + 0.5 + c));
      const bool inside = si >= 0 && si < d && sj >= 0 && sj < d;
      for (int k = 0; k < d; ++k, ++out)
        map[out] = inside ? static_cast<std::int32_t>((si * d + sj) * d + k) : -1;
    }
  }
  return map;
}

template <typename Scalar>
VoxelGrid<Scalar> rotate_z(const VoxelGrid<Scalar>& v, double theta) {
  const auto map = rotation_source_map(v.d, theta);
  VoxelGrid<Scalar> out(v.d);
  for (std::size_t n = 0; n < map.size(); ++n) out.values[n] = map[n] >= 0 ? v.values[map[n]] : Scalar(1);
  return out;
}

template <typename Scalar>
Image<Scalar> project_min(const VoxelGrid<Scalar>& v) {
  const int d = v.d;
  Image<Scalar> img = Image<Scalar>::Constant(d, d, std::numeric_limits<Scalar>::infinity());
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j)
      for (int k = 0; k < d; ++k) img(k, j) = std::min(img(k, j), v(i, j, k));
  return img;
}

template <typename Scalar>
Image<Scalar> project_at(const VoxelGrid<Scalar>& v, double theta) {
  return project_min(rotate_z(v, theta));
}

// ---------------------------------------------------------------------------
// Differentiable versions over a [d, d, d] tensor.

template <typename Scalar>
Var<Scalar> rotate_z(Var<Scalar> grid, double theta) {
  const auto& gv = grid.value();
  if (gv.rank() != 3 || gv.dim(0) != gv.dim(1) || gv.dim(1) != gv.dim(2))
    throw Error("rotate_z: expected a cubic [d, d, d] grid, got " + to_string(gv.shape));
  auto map = std::make_shared<std::vector<std::int32_t>>(rotation_source_map(gv.dim(0), theta));
  Tensor<Scalar> out(gv.shape);
  for (std::size_t n = 0; n < map->size(); ++n) out[n] = (*map)[n] >= 0 ? gv[(*map)[n]] : Scalar(1);
  return grid.graph->record("rotate_z", std::move(out), {grid}, [map](Graph<Scalar>& g, std::size_t self) {
    Scalar* gin = g.in_grad(self, 0);
    const auto& gy = g.out_grad(self);
    for (std::size_t n = 0; n < map->size(); ++n)
      if ((*map)[n] >= 0) gin[(*map)[n]] += gy[n];
  });
}

/// Depth-min projection to a [d, d] image (row k, column j). The subgradient
/// goes to the first (smallest i) argmin of each column.
template <typename Scalar>
Var<Scalar> project_min(Var<Scalar> grid) {
  const auto& gv = grid.value();
  if (gv.rank() != 3 || gv.dim(0) != gv.dim(1) || gv.dim(1) != gv.dim(2))
    throw Error("project_min: expected a cubic [d, d, d] grid, got " + to_string(gv.shape));
  const int d = gv.dim(0);
  const std::size_t dd = static_cast<std::size_t>(d) * d;
  auto argmin = std::make_shared<std::vector<std::size_t>>(dd);
  Tensor<Scalar> out({d, d});
  for (int k = 0; k < d; ++k)
    for (int j = 0; j < d; ++j) {
      std::size_t best = static_cast<std::size_t>(j) * d + k;
      for (int i = 1; i < d; ++i) {
        const std::size_t n = (static_cast<std::size_t>(i) * d + j) * d + k;
        if (gv[n] < gv[best]) best = n;
      }
      const std::size_t px = static_cast<std::size_t>(k) * d + j;
      out[px] = gv[best];
      (*argmin)[px] = best;
    }
  return grid.graph->record("project_min", std::move(out), {grid}, [argmin](Graph<Scalar>& g, std::size_t self) {
    Scalar* gin = g.in_grad(self, 0);
    const auto& gy = g.out_grad(self);
    for (std::size_t px = 0; px < gy.size(); ++px) gin[(*argmin)[px]] += gy[px];
  });
}

template <typename Scalar>
Var<Scalar> project_at(Var<Scalar> grid, double theta) {
  return project_min(rotate_z(grid, theta));
}

// ---------------------------------------------------------------------------

/// Discrete visual hull: the largest grid whose projection at every angle
/// stays inside the matching silhouette. A voxel is carved away as soon as
/// some rotated cell reading it lands on a background pixel.
VoxelGrid<float> carve_hull(const std::vector<Silhouette>& silhouettes, const std::vector<double>& angles);

/// Text format: "VOX <d>" then d^3 values in (i, j, k) row-major order.
void write_vox(const std::filesystem::path& path, const VoxelGrid<float>& grid);
VoxelGrid<float> read_vox(const std::filesystem::path& path);

}  // namespace silcarve
