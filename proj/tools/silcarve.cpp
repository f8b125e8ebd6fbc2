// silcarve: dataset generation, training, evaluation and rendering.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "silcarve/dataset.hpp"
#include "silcarve/evaluate.hpp"
#include "silcarve/parallel.hpp"
#include "silcarve/train.hpp"

using namespace silcarve;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Values from --config fill every option the command line left unset.
void apply_config(CLI::App& sub, const std::string& path) {
  if (path.empty()) return;
  std::ifstream in(path);
  if (!in) throw Error("cannot read config " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw Error("config " + path + ": " + e.what());
  }
  if (!j.is_object()) throw Error("config " + path + ": expected a JSON object");
  for (const auto& [key, value] : j.items()) {
    CLI::Option* opt = sub.get_option_no_throw("--" + key);
    if (!opt) throw Error("config " + path + ": unknown key '" + key + "' for " + sub.get_name());
    if (opt->count() > 0) continue;
    auto add = [&](const json& v) { opt->add_result(v.is_string() ? v.get<std::string>() : v.dump()); };
    if (value.is_array())
      for (const auto& v : value) add(v);
    else
      add(value);
    opt->run_callback();
  }
}

std::vector<double> parse_angles(const std::string& spec) {
  std::vector<double> out;
  if (spec.empty()) return out;
  if (spec.find(':') != std::string::npos) {
    double lo = 0, hi = 0, step = 0;
    char c1 = 0, c2 = 0;
    std::istringstream is(spec);
    if (!(is >> lo >> c1 >> hi >> c2 >> step) || c1 != ':' || c2 != ':' || step <= 0)
      throw Error("angle range must look like start:stop:step, got '" + spec + "'");
    for (int i = 0; lo + i * step <= hi + 1e-9; ++i) out.push_back(lo + i * step);
    return out;
  }
  std::istringstream is(spec);
  for (std::string tok; std::getline(is, tok, ',');) out.push_back(std::stod(tok));
  return out;
}

int threads() { return default_threads(); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-view silhouette prediction on procedural blobby objects"};
  app.require_subcommand(1);
  std::string config;

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate the blobby-object dataset");
  int n_objects = 600, n_views = 5, size = 32;
  std::uint64_t gen_seed = 2024;
  std::string gen_out;
  gen->add_option("--objects", n_objects, "Number of objects")->capture_default_str();
  gen->add_option("--views", n_views, "Views per object")->capture_default_str();
  gen->add_option("--size", size, "Image side in pixels")->capture_default_str();
  gen->add_option("--seed", gen_seed, "Dataset seed")->capture_default_str();
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--config", config, "JSON file with option values; flags win");

  // train
  auto* tr = app.add_subcommand("train", "Train a model and save its best-validation checkpoint");
  TrainConfig tc;
  std::string data_dir, ckpt_out, log_path, pooling = "max", mode = "2d", optimizer = "sgd", pretrained;
  tr->add_option("--data", data_dir, "Dataset directory")->required();
  tr->add_option("--out", ckpt_out, "Checkpoint path")->required();
  tr->add_option("--towers", tc.n_towers, "Input views per example")->capture_default_str();
  tr->add_option("--pooling", pooling, "max or avg")->capture_default_str();
  tr->add_option("--mode", mode, "2d or 3d decoder")->capture_default_str();
  tr->add_option("--epochs", tc.epochs)->capture_default_str();
  tr->add_option("--batch", tc.batch_size)->capture_default_str();
  tr->add_option("--steps-per-epoch", tc.steps_per_epoch, "0 = objects x views / batch")->capture_default_str();
  tr->add_option("--optimizer", optimizer, "sgd or adam")->capture_default_str();
  tr->add_option("--lr", tc.optimizer.lr)->capture_default_str();
  tr->add_option("--momentum", tc.optimizer.momentum)->capture_default_str();
  tr->add_option("--weight-decay", tc.optimizer.weight_decay)->capture_default_str();
  tr->add_option("--seed", tc.seed)->capture_default_str();
  tr->add_option("--features", tc.model.features)->capture_default_str();
  tr->add_option("--voxels", tc.model.d, "Voxel grid side for the 3D decoder")->capture_default_str();
  tr->add_option("--pretrained", pretrained, "Warm-start checkpoint");
  tr->add_flag("--freeze-encoder", tc.freeze_encoder, "Keep encoder weights fixed");
  tr->add_option("--log", log_path, "Append per-epoch JSON lines here (default stdout)");
  tr->add_option("--config", config, "JSON file with option values; flags win");

  // eval
  auto* ev = app.add_subcommand("eval", "Mean IoU of a checkpoint on a split");
  std::string ev_ckpt, ev_data, split = "test", ev_mode, ev_json;
  int ev_towers = 2;
  ev->add_option("--checkpoint", ev_ckpt)->required();
  ev->add_option("--data", ev_data)->required();
  ev->add_option("--split", split)->capture_default_str();
  ev->add_option("--towers", ev_towers)->capture_default_str();
  ev->add_option("--mode", ev_mode, "Override the checkpoint's mode");
  ev->add_option("--out", ev_json, "Write the per-object report as JSON");
  ev->add_option("--seed", gen_seed, "Unused; evaluation choices are fixed per object");
  ev->add_option("--config", config, "JSON file with option values; flags win");

  // matrix
  auto* mx = app.add_subcommand("matrix", "Evaluate several checkpoints at several tower counts");
  std::vector<std::string> variants;
  std::vector<int> towers{1, 2, 3};
  std::string mx_data, mx_out;
  mx->add_option("--variant", variants, "name=checkpoint, repeatable")->required();
  mx->add_option("--towers", towers, "Tower counts to test")->delimiter(',')->capture_default_str();
  mx->add_option("--data", mx_data)->required();
  mx->add_option("--split", split)->capture_default_str();
  mx->add_option("--out", mx_out, "Write <out>.txt and <out>.json");
  mx->add_option("--seed", gen_seed, "Unused; evaluation choices are fixed per object");
  mx->add_option("--config", config, "JSON file with option values; flags win");

  // carve-check
  auto* cc = app.add_subcommand("carve-check", "Re-projection IoU of visual hulls carved from the dataset");
  std::string cc_data, cc_out;
  int cc_objects = 20;
  cc->add_option("--data", cc_data)->required();
  cc->add_option("--split", split)->capture_default_str();
  cc->add_option("--objects", cc_objects, "0 = whole split")->capture_default_str();
  cc->add_option("--out", cc_out, "Write the report as JSON");
  cc->add_option("--seed", gen_seed, "Unused");
  cc->add_option("--config", config, "JSON file with option values; flags win");

  // render
  auto* rd = app.add_subcommand("render", "Write predicted silhouettes for a sweep of output angles");
  std::string rd_ckpt, rd_data, rd_object, rd_out, rd_mode, rd_angles = "0:120:15";
  std::vector<std::size_t> rd_views{0, 1};
  rd->add_option("--checkpoint", rd_ckpt)->required();
  rd->add_option("--data", rd_data)->required();
  rd->add_option("--object", rd_object, "Object id (default: first test object)");
  rd->add_option("--views", rd_views, "Input view indices")->delimiter(',')->capture_default_str();
  rd->add_option("--theta-out", rd_angles, "start:stop:step or a comma list")->capture_default_str();
  rd->add_option("--mode", rd_mode, "Override the checkpoint's mode");
  rd->add_option("--out", rd_out)->required();
  rd->add_option("--seed", gen_seed, "Unused");
  rd->add_option("--config", config, "JSON file with option values; flags win");

  try {
    app.parse(argc, argv);
    for (auto* sub : app.get_subcommands()) apply_config(*sub, config);

    if (*gen) {
      const auto m = build_dataset(n_objects, n_views, size, gen_seed, gen_out, threads());
      const auto c = split_counts(n_objects);
      std::cout << "wrote " << m.objects.size() << " objects (" << c.train << " train, " << c.val << " val, "
                << c.test << " test) to " << gen_out << '\n';
    } else if (*tr) {
      const auto manifest = load_manifest(data_dir);
      tc.model.pooling = parse_pooling(pooling);
      tc.mode = parse_mode(mode);
      if (optimizer == "adam") tc.optimizer.kind = OptimizerKind::adam;
      else if (optimizer != "sgd") throw Error("unknown optimizer '" + optimizer + "'");
      if (!pretrained.empty()) tc.pretrained = pretrained;
      tc.checkpoint = ckpt_out;
      tc.threads = threads();
      std::ofstream log_file;
      if (!log_path.empty()) {
        log_file.open(log_path, std::ios::app);
        if (!log_file) throw Error("cannot write log " + log_path);
      }
      const auto r = train(tc, manifest, log_path.empty() ? &std::cout : &log_file);
      std::cout << "best epoch " << r.best_epoch << ", val IoU " << r.best_val_iou << ", saved " << ckpt_out << '\n';
    } else if (*ev) {
      const auto manifest = load_manifest(ev_data);
      std::optional<Mode> m;
      if (!ev_mode.empty()) m = parse_mode(ev_mode);
      const auto r = evaluate(ev_ckpt, manifest, split, ev_towers, m, threads());
      std::cout << "mean IoU " << r.mean << " over " << r.count << " objects (" << split << ", k=" << ev_towers
                << ", " << to_string(r.mode) << ")\n";
      if (!ev_json.empty()) {
        json j = {{"mean", r.mean}, {"count", r.count}, {"towers", ev_towers}, {"split", split},
                  {"mode", to_string(r.mode)}, {"pooling", to_string(r.pooling)}, {"info", r.info}};
        for (std::size_t i = 0; i < r.ids.size(); ++i) j["objects"][r.ids[i]] = r.ious[i];
        std::ofstream(ev_json) << j.dump(2) << '\n';
      }
    } else if (*mx) {
      const auto manifest = load_manifest(mx_data);
      std::vector<MatrixVariant> vs;
      for (const auto& v : variants) {
        const auto eq = v.find('=');
        if (eq == std::string::npos) throw Error("--variant expects name=checkpoint, got '" + v + "'");
        vs.push_back({v.substr(0, eq), v.substr(eq + 1)});
      }
      const auto m = run_matrix(vs, towers, manifest, split, threads());
      std::cout << m.text();
      if (!mx_out.empty()) {
        std::ofstream(mx_out + ".txt") << m.text();
        std::ofstream(mx_out + ".json") << m.json() << '\n';
      }
    } else if (*cc) {
      const auto manifest = load_manifest(cc_data);
      const auto r = carve_check(manifest, split, cc_objects, threads());
      for (std::size_t o = 0; o < r.ids.size(); ++o) {
        std::cout << r.ids[o];
        for (double v : r.view_ious[o]) std::cout << ' ' << v;
        std::cout << '\n';
      }
      std::cout << "mean re-projection IoU " << r.mean << " over " << r.ids.size() << " objects\n";
      if (!cc_out.empty()) {
        json j = {{"mean", r.mean}};
        for (std::size_t o = 0; o < r.ids.size(); ++o) j["objects"][r.ids[o]] = r.view_ious[o];
        std::ofstream(cc_out) << j.dump(2) << '\n';
      }
    } else if (*rd) {
      const auto manifest = load_manifest(rd_data);
      const ObjectRecord* obj = nullptr;
      for (const auto& o : manifest.objects)
        if (rd_object.empty() ? o.split == "test" : o.id == rd_object) {
          obj = &o;
          break;
        }
      if (!obj) throw Error("no object " + (rd_object.empty() ? std::string("in the test split") : rd_object));
      std::vector<View> views;
      for (std::size_t v : rd_views) {
        if (v >= obj->views.size()) throw Error("object " + obj->id + " has no view " + std::to_string(v));
        views.push_back({manifest.image(*obj, v), obj->views[v].theta});
      }
      Mode m = Mode::d2;
      if (!rd_mode.empty()) m = parse_mode(rd_mode);
      else if (auto ck = load_checkpoint(rd_ckpt); ck.info.count("mode")) m = parse_mode(ck.info.at("mode"));
      const auto n = render_outputs(rd_ckpt, views, parse_angles(rd_angles), m, rd_out);
      std::cout << "wrote " << n << " images to " << rd_out << '\n';
    }
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "silcarve: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
