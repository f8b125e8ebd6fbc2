#include "silcarve/dataset.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "silcarve/parallel.hpp"
#include "silcarve/pgm.hpp"
#include "silcarve/rng.hpp"
#include "silcarve/tensor.hpp"

namespace silcarve {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kMaxObjectAttempts = 1000;
constexpr double kLightSpread = 0.6;
constexpr std::uint64_t kSplitStream = 0x5350'4c49'54ULL;

std::string object_id(std::size_t index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "obj%05zu", index);
  return buf;
}

json to_json(const ObjectRecord& obj, int h) {
  json views = json::array();
  for (const auto& v : obj.views) views.push_back({{"theta", v.theta}, {"image", v.image}, {"silhouette", v.silhouette}});
  return {{"id", obj.id}, {"split", obj.split}, {"seed", obj.seed}, {"h", h}, {"views", views}};
}

}  // namespace

std::vector<const ObjectRecord*> DatasetManifest::split(const std::string& name) const {
  std::vector<const ObjectRecord*> out;
  for (const auto& o : objects)
    if (o.split == name) out.push_back(&o);
  return out;
}

GrayImage DatasetManifest::image(const ObjectRecord& obj, std::size_t view) const {
  return from_gray8(read_pgm(root / obj.views.at(view).image));
}

Silhouette DatasetManifest::silhouette(const ObjectRecord& obj, std::size_t view) const {
  return silhouette_from_gray8(read_pgm(root / obj.views.at(view).silhouette));
}

GeneratedObject generate_object(std::uint64_t object_seed, int n_views, int h) {
  Rng rng(derive_seed(object_seed, {0}));
  GeneratedObject obj;
  std::vector<Eigen::Vector3d> lights;
  for (int m = 0; m < n_views; ++m) {
    obj.thetas.push_back(rng.uniform(0.0, kMaxTheta));
    lights.emplace_back(-1.0, rng.uniform(-kLightSpread, kLightSpread), rng.uniform(-kLightSpread, kLightSpread));
  }
  for (int attempt = 0; attempt < kMaxObjectAttempts; ++attempt) {
    obj.blob = sample_blob(derive_seed(object_seed, {1, static_cast<std::uint64_t>(attempt)}));
    obj.views.clear();
    bool ok = true;
    for (int m = 0; m < n_views && ok; ++m) {
      obj.views.push_back(render_view(obj.blob, obj.thetas[m], h, lights[m]));
      const double c = coverage(obj.views.back().silhouette);
      ok = c >= kMinCoverage && c <= kMaxCoverage;
    }
    if (ok) return obj;
  }
  throw Error("generate_object: no blob met the coverage bounds after " + std::to_string(kMaxObjectAttempts) +
              " attempts");
}

SplitCounts split_counts(int n_objects) {
  SplitCounts c;
  c.train = static_cast<int>(std::lround(0.75 * n_objects));
  c.val = static_cast<int>(std::lround(0.10 * n_objects));
  c.test = n_objects - c.train - c.val;
  return c;
}

DatasetManifest build_dataset(int n_objects, int n_views, int h, std::uint64_t seed, const fs::path& out_dir,
                              int threads) {
  if (n_objects < 10) throw Error("build_dataset: need at least 10 objects, got " + std::to_string(n_objects));
  if (n_views < 1) throw Error("build_dataset: need at least one view per object");
  try {
    fs::create_directories(out_dir / "objects");
  } catch (const fs::filesystem_error& e) {
    throw Error("build_dataset: cannot create " + out_dir.string() + ": " + e.what());
  }

  const auto n = static_cast<std::size_t>(n_objects);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng split_rng(derive_seed(seed, {kSplitStream}));
  for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[split_rng.below(i + 1)]);
  const auto counts = split_counts(n_objects);
  std::vector<std::string> split(n);
  for (std::size_t r = 0; r < n; ++r) {
    const auto rank = static_cast<int>(r);
    split[order[r]] = rank < counts.train ? "train" : rank < counts.train + counts.val ? "val" : "test";
  }

  DatasetManifest manifest{out_dir, h, std::vector<ObjectRecord>(n)};
  parallel_for(n, threads, [&](std::size_t o) {
    const auto gen = generate_object(derive_seed(seed, {o}), n_views, h);
    ObjectRecord rec{object_id(o), split[o], gen.blob.seed, {}};
    const fs::path dir = out_dir / "objects" / rec.id;
    fs::create_directories(dir);
    for (int m = 0; m < n_views; ++m) {
      const auto& v = gen.views[static_cast<std::size_t>(m)];
      ViewRecord vr{v.theta, "objects/" + rec.id + "/view" + std::to_string(m) + ".pgm",
                    "objects/" + rec.id + "/sil" + std::to_string(m) + ".pgm"};
      write_pgm(out_dir / vr.image, to_gray8(v.image));
      write_pgm(out_dir / vr.silhouette, silhouette_to_gray8(v.silhouette));
      rec.views.push_back(std::move(vr));
    }
    manifest.objects[o] = std::move(rec);
  });

  std::ofstream out(out_dir / "manifest.jsonl", std::ios::binary);
  if (!out) throw Error("build_dataset: cannot write " + (out_dir / "manifest.jsonl").string());
  for (const auto& obj : manifest.objects) out << to_json(obj, h).dump() << '\n';
  if (!out) throw Error("build_dataset: failed writing the manifest");
  return manifest;
}

DatasetManifest load_manifest(const fs::path& dir) {
  const fs::path path = dir / "manifest.jsonl";
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  DatasetManifest m;
  m.root = dir;
  std::string line;
  for (int lineno = 1; std::getline(in, line); ++lineno) {
    if (line.empty()) continue;
    try {
      const auto j = json::parse(line);
      ObjectRecord rec{j.at("id"), j.at("split"), j.at("seed"), {}};
      const int h = j.at("h");
      if (m.h && h != m.h) throw Error("mixed image sizes " + std::to_string(m.h) + " and " + std::to_string(h));
      m.h = h;
      for (const auto& v : j.at("views")) rec.views.push_back({v.at("theta"), v.at("image"), v.at("silhouette")});
      m.objects.push_back(std::move(rec));
    } catch (const json::exception& e) {
      throw Error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const Error& e) {
      throw Error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (m.objects.empty()) throw Error(path.string() + ": no objects");
  return m;
}

}  // namespace silcarve
