#include "silcarve/voxel.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

namespace silcarve {

VoxelGrid<float> carve_hull(const std::vector<Silhouette>& silhouettes, const std::vector<double>& angles) {
  if (silhouettes.empty()) throw Error("carve_hull: at least one silhouette is required");
  if (silhouettes.size() != angles.size())
    throw Error("carve_hull: " + std::to_string(silhouettes.size()) + " silhouettes but " +
                std::to_string(angles.size()) + " angles");
  const int d = static_cast<int>(silhouettes[0].rows());
  for (const auto& s : silhouettes)
    if (s.rows() != d || s.cols() != d) throw Error("carve_hull: silhouettes must all be d x d");

  const double c = (d - 1) / 2.0;
  const std::size_t cells = static_cast<std::size_t>(d) * d * d;
  std::vector<char> carved(cells, 0);
  std::vector<char> read(cells);
  for (std::size_t m = 0; m < silhouettes.size(); ++m) {
    const auto map = rotation_source_map(d, angles[m]);
    const auto& sil = silhouettes[m];
    std::fill(read.begin(), read.end(), 0);
    std::size_t n = 0;
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j)
        for (int k = 0; k < d; ++k, ++n) {
          if (map[n] < 0) continue;
          const auto src = static_cast<std::size_t>(map[n]);
          read[src] = 1;
          if (sil(k, j) != kObject) carved[src] = 1;
        }
    // Voxels no rotated cell reads are judged by the four pixel columns
    // around their forward-rotated position; columns outside the frame
    // count as background.
    const double cs = cos_deg(angles[m]), sn = sin_deg(angles[m]);
    n = 0;
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) {
        const double fwd = -sn * (i - c) + cs * (j - c) + c;
        const auto lo = static_cast<long>(std::floor(fwd));
        for (int k = 0; k < d; ++k, ++n) {
          if (read[n] || carved[n]) continue;
          bool seen = false;
          for (long col = lo - 1; col <= lo + 2; ++col)
            seen = seen || (col >= 0 && col < d && sil(k, col) == kObject);
          if (!seen) carved[n] = 1;
        }
      }
  }
  VoxelGrid<float> hull(d);
  for (std::size_t n = 0; n < carved.size(); ++n) hull.values[n] = carved[n] ? 1.0f : 0.0f;
  return hull;
}

void write_vox(const std::filesystem::path& path, const VoxelGrid<float>& grid) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "VOX " << grid.d << '\n' << std::setprecision(std::numeric_limits<float>::max_digits10);
  std::size_t n = 0;
  for (int i = 0; i < grid.d; ++i)
    for (int j = 0; j < grid.d; ++j) {
      for (int k = 0; k < grid.d; ++k, ++n) out << (k ? " " : "") << grid.values[n];
      out << '\n';
    }
  if (!out) throw Error("failed writing " + path.string());
}

VoxelGrid<float> read_vox(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  std::string magic;
  int d = 0;
  if (!(in >> magic >> d) || magic != "VOX" || d <= 0) throw Error(path.string() + ": bad VOX header");
  VoxelGrid<float> grid(d);
  for (auto& v : grid.values)
    if (!(in >> v)) throw Error(path.string() + ": truncated VOX payload");
  return grid;
}

}  // namespace silcarve
