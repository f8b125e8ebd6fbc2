#pragma once

// The blobby-object dataset on disk:
//   out_dir/objects/<id>/view<m>.pgm, sil<m>.pgm
//   out_dir/manifest.jsonl, one object record per line.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "silcarve/blob.hpp"
#include "silcarve/image.hpp"

namespace silcarve {

inline constexpr double kMaxTheta = 120.0;
inline constexpr double kMinCoverage = 0.05;
inline constexpr double kMaxCoverage = 0.70;

struct ViewRecord {
  double theta = 0.0;
  std::string image;       // relative to the dataset root
  std::string silhouette;  // relative to the dataset root
};

struct ObjectRecord {
  std::string id;
  std::string split;
  std::uint64_t seed = 0;  // blob seed: sample_blob(seed) rebuilds the solid
  std::vector<ViewRecord> views;
};

struct DatasetManifest {
  std::filesystem::path root;
  int h = 0;
  std::vector<ObjectRecord> objects;

  std::vector<const ObjectRecord*> split(const std::string& name) const;
  GrayImage image(const ObjectRecord& obj, std::size_t view) const;
  Silhouette silhouette(const ObjectRecord& obj, std::size_t view) const;
};

/// A blob with its view angles and per-view light directions, chosen so
/// every view's coverage lies in [5%, 70%].
struct GeneratedObject {
  BlobSpec blob;
  std::vector<double> thetas;
  std::vector<RenderedView> views;
};

GeneratedObject generate_object(std::uint64_t object_seed, int n_views, int h);

/// Train/val/test counts: round(0.75 n), round(0.10 n), remainder.
struct SplitCounts {
  int train = 0, val = 0, test = 0;
};
SplitCounts split_counts(int n_objects);

DatasetManifest build_dataset(int n_objects, int n_views, int h, std::uint64_t seed,
                              const std::filesystem::path& out_dir, int threads);

DatasetManifest load_manifest(const std::filesystem::path& dir);

}  // namespace silcarve
