#include "silcarve/evaluate.hpp"

#include <cstdio>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "silcarve/metrics.hpp"
#include "silcarve/parallel.hpp"
#include "silcarve/pgm.hpp"
#include "silcarve/voxel.hpp"

namespace silcarve {

namespace fs = std::filesystem;

EvalSelection eval_selection(const ObjectRecord& obj) {
  Rng rng(derive_seed(kEvalSeed, {fnv1a(obj.id)}));
  std::vector<std::size_t> order(obj.views.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  if (order.empty()) throw Error("object " + obj.id + " has no views");
  return {order[0], std::vector<std::size_t>(order.begin() + 1, order.end())};
}

IoUReport evaluate_params(const ModelParams<float>& params, const DatasetManifest& manifest, const std::string& split,
                          int n_towers_test, Mode mode, int threads) {
  if (n_towers_test < 1) throw Error("evaluate: need at least one tower");
  const auto objects = manifest.split(split);
  if (objects.empty()) throw Error("evaluate: split '" + split + "' is empty");
  const auto k = static_cast<std::size_t>(n_towers_test);
  for (const auto* obj : objects)
    if (obj->views.size() < k + 1)
      throw Error("evaluate: object " + obj->id + " has " + std::to_string(obj->views.size()) +
                  " views, testing with " + std::to_string(k) + " towers needs " + std::to_string(k + 1));

  IoUReport report;
  report.n_towers_test = n_towers_test;
  report.pooling = params.config.pooling;
  report.mode = mode;
  report.ious.resize(objects.size());
  parallel_for(objects.size(), threads, [&](std::size_t o) {
    const auto& obj = *objects[o];
    const auto sel = eval_selection(obj);
    std::vector<View> views;
    for (std::size_t i = 0; i < k; ++i) views.push_back({manifest.image(obj, sel.pool[i]), obj.views[sel.pool[i]].theta});
    const auto prob = predict(params, views, obj.views[sel.target].theta, mode);
    report.ious[o] = iou(binarize(prob), manifest.silhouette(obj, sel.target));
  });
  for (const auto* obj : objects) report.ids.push_back(obj->id);
  report.count = report.ious.size();
  double sum = 0.0;
  for (double v : report.ious) sum += v;
  report.mean = sum / static_cast<double>(report.count);
  return report;
}

IoUReport evaluate(const fs::path& checkpoint, const DatasetManifest& manifest, const std::string& split,
                   int n_towers_test, std::optional<Mode> mode, int threads) {
  if (!fs::exists(checkpoint)) throw Error("evaluate: checkpoint " + checkpoint.string() + " does not exist");
  const auto ck = load_checkpoint(checkpoint);
  Mode m = Mode::d2;
  if (mode) m = *mode;
  else if (auto it = ck.info.find("mode"); it != ck.info.end()) m = parse_mode(it->second);
  auto report = evaluate_params(ck.params, manifest, split, n_towers_test, m, threads);
  report.info = ck.info;
  return report;
}

std::string ExperimentMatrix::text() const {
  std::size_t width = 8;
  for (const auto& v : variants) width = std::max(width, v.size() + 2);
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(width)) << "variant";
  for (int k : towers) os << std::right << std::setw(9) << ("k=" + std::to_string(k));
  os << '\n';
  for (std::size_t r = 0; r < variants.size(); ++r) {
    os << std::left << std::setw(static_cast<int>(width)) << variants[r];
    for (const auto& cell : cells[r]) {
      os << std::right << std::setw(9);
      if (cell) os << std::fixed << std::setprecision(4) << *cell;
      else os << "-";
    }
    os << '\n';
  }
  return os.str();
}

std::string ExperimentMatrix::json() const {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (std::size_t r = 0; r < variants.size(); ++r) {
    auto& row = j[variants[r]];
    row = nlohmann::ordered_json::object();
    for (std::size_t c = 0; c < towers.size(); ++c) {
      const std::string key = std::to_string(towers[c]);
      if (cells[r][c]) row[key] = *cells[r][c];
      else row[key] = nullptr;
    }
  }
  return j.dump(2);
}

ExperimentMatrix run_matrix(const std::vector<MatrixVariant>& variants, const std::vector<int>& towers,
                            const DatasetManifest& manifest, const std::string& split, int threads) {
  ExperimentMatrix m;
  m.towers = towers;
  for (const auto& v : variants) {
    m.variants.push_back(v.name);
    auto& row = m.cells.emplace_back(towers.size());
    std::optional<Checkpoint> ck;
    try {
      ck = load_checkpoint(v.checkpoint);
    } catch (const Error& e) {
      std::cerr << "matrix: variant " << v.name << " unavailable: " << e.what() << '\n';
      continue;
    }
    Mode mode = Mode::d2;
    if (auto it = ck->info.find("mode"); it != ck->info.end()) mode = parse_mode(it->second);
    for (std::size_t c = 0; c < towers.size(); ++c) {
      try {
        row[c] = evaluate_params(ck->params, manifest, split, towers[c], mode, threads).mean;
      } catch (const Error& e) {
        std::cerr << "matrix: " << v.name << " at k=" << towers[c] << ": " << e.what() << '\n';
      }
    }
  }
  return m;
}

double carve_reprojection_iou(const std::vector<Silhouette>& silhouettes, const std::vector<double>& thetas,
                              std::vector<double>* per_view) {
  const auto hull = carve_hull(silhouettes, thetas);
  double sum = 0.0;
  for (std::size_t m = 0; m < silhouettes.size(); ++m) {
    const double v = iou(binarize(project_at(hull, thetas[m])), silhouettes[m]);
    if (per_view) per_view->push_back(v);
    sum += v;
  }
  return sum / static_cast<double>(silhouettes.size());
}

CarveReport carve_check(const DatasetManifest& manifest, const std::string& split, int n_objects, int threads) {
  auto objects = manifest.split(split);
  if (n_objects > 0 && static_cast<std::size_t>(n_objects) < objects.size()) objects.resize(static_cast<std::size_t>(n_objects));
  if (objects.empty()) throw Error("carve_check: split '" + split + "' is empty");
  CarveReport report;
  report.view_ious.resize(objects.size());
  std::vector<double> means(objects.size());
  parallel_for(objects.size(), threads, [&](std::size_t o) {
    const auto& obj = *objects[o];
    std::vector<Silhouette> sils;
    std::vector<double> thetas;
    for (std::size_t m = 0; m < obj.views.size(); ++m) {
      sils.push_back(manifest.silhouette(obj, m));
      thetas.push_back(obj.views[m].theta);
    }
    means[o] = carve_reprojection_iou(sils, thetas, &report.view_ious[o]);
  });
  double sum = 0.0;
  for (std::size_t o = 0; o < objects.size(); ++o) {
    report.ids.push_back(objects[o]->id);
    sum += means[o];
  }
  report.mean = sum / static_cast<double>(objects.size());
  return report;
}

std::size_t render_outputs(const fs::path& checkpoint, const std::vector<View>& views,
                           const std::vector<double>& thetas_out, Mode mode, const fs::path& out_dir) {
  const auto ck = load_checkpoint(checkpoint);
  try {
    fs::create_directories(out_dir);
  } catch (const fs::filesystem_error& e) {
    throw Error("render: cannot create " + out_dir.string() + ": " + e.what());
  }
  if (thetas_out.empty()) return 0;
  std::size_t written = 0;
  for (std::size_t i = 0; i < thetas_out.size(); ++i) {
    const auto prob = predict(ck.params, views, thetas_out[i], mode);
    write_pgm(out_dir / ("prob" + std::to_string(i) + ".pgm"), to_gray8(prob));
    write_pgm(out_dir / ("mask" + std::to_string(i) + ".pgm"), silhouette_to_gray8(binarize(prob)));
    written += 2;
  }
  if (mode == Mode::d3) {
    std::vector<Tensor<float>> feats;
    for (const auto& v : views) feats.push_back(encode_view(ck.params, v));
    write_vox(out_dir / "grid.vox", decode3d(ck.params, fuse(ck.params, feats)));
  }
  return written;
}

}  // namespace silcarve
