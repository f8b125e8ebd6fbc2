#pragma once

// Evaluation protocol, the tower-count experiment matrix and the
// visual-hull consistency check.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "silcarve/dataset.hpp"
#include "silcarve/silnet.hpp"

namespace silcarve {

inline constexpr std::uint64_t kEvalSeed = 0x5eed'e7a1ULL;

/// Target view and ordered input pool for one object, fixed by the object id
/// so every model and every tower count sees the same choices. k towers use
/// the first k entries of the pool.
struct EvalSelection {
  std::size_t target = 0;
  std::vector<std::size_t> pool;
};
EvalSelection eval_selection(const ObjectRecord& obj);

struct IoUReport {
  std::vector<std::string> ids;
  std::vector<double> ious;
  double mean = 0.0;
  std::size_t count = 0;
  int n_towers_test = 0;
  Pooling pooling = Pooling::max;
  Mode mode = Mode::d2;
  std::map<std::string, std::string> info;  // training metadata of the checkpoint
};

/// Mean IoU of binarised predictions over a split.
IoUReport evaluate_params(const ModelParams<float>& params, const DatasetManifest& manifest,
                          const std::string& split, int n_towers_test, Mode mode, int threads);
IoUReport evaluate(const std::filesystem::path& checkpoint, const DatasetManifest& manifest,
                   const std::string& split, int n_towers_test, std::optional<Mode> mode, int threads);

struct MatrixVariant {
  std::string name;
  std::filesystem::path checkpoint;
};

/// Mean IoU per (variant, tested tower count); absent cells are nullopt.
struct ExperimentMatrix {
  std::vector<std::string> variants;
  std::vector<int> towers;
  std::vector<std::vector<std::optional<double>>> cells;

  std::string text() const;
  std::string json() const;
};

ExperimentMatrix run_matrix(const std::vector<MatrixVariant>& variants, const std::vector<int>& towers,
                            const DatasetManifest& manifest, const std::string& split, int threads);

struct CarveReport {
  std::vector<std::string> ids;
  std::vector<std::vector<double>> view_ious;  // per object, per view
  double mean = 0.0;
};

/// Carves each object's hull from its stored silhouettes (voxel side = image
/// side) and re-projects it at every view angle.
CarveReport carve_check(const DatasetManifest& manifest, const std::string& split, int n_objects, int threads);
double carve_reprojection_iou(const std::vector<Silhouette>& silhouettes, const std::vector<double>& thetas,
                              std::vector<double>* per_view = nullptr);

/// Writes prob<i>.pgm and mask<i>.pgm for every theta_out (and grid.vox in 3D mode).
/// Returns the number of images written.
std::size_t render_outputs(const std::filesystem::path& checkpoint, const std::vector<View>& views,
                           const std::vector<double>& thetas_out, Mode mode, const std::filesystem::path& out_dir);

}  // namespace silcarve
