#include "silcarve/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>

#include <nlohmann/json.hpp>

#include "silcarve/evaluate.hpp"
#include "silcarve/parallel.hpp"

namespace silcarve {

std::vector<BatchItem> make_batch(const std::vector<std::size_t>& view_counts, int n_towers, int batch_size,
                                  Rng& rng) {
  if (view_counts.empty()) throw Error("make_batch: no objects");
  if (n_towers < 1) throw Error("make_batch: need at least one tower");
  const auto need = static_cast<std::size_t>(n_towers) + 1;
  for (std::size_t c : view_counts)
    if (c < need)
      throw Error("make_batch: " + std::to_string(n_towers) + " towers need " + std::to_string(need) +
                  " views per object, an object has " + std::to_string(c));
  std::vector<BatchItem> batch;
  std::vector<std::size_t> order;
  for (int b = 0; b < batch_size; ++b) {
    BatchItem item;
    item.object = rng.below(view_counts.size());
    order.resize(view_counts[item.object]);
    for (std::size_t v = 0; v < order.size(); ++v) order[v] = v;
    for (std::size_t k = 0; k < need; ++k) std::swap(order[k], order[k + rng.below(order.size() - k)]);
    item.target = order[0];
    item.inputs.assign(order.begin() + 1, order.begin() + static_cast<std::ptrdiff_t>(need));
    batch.push_back(std::move(item));
  }
  return batch;
}

GrayImage shift_rows(const GrayImage& image, int offset) {
  GrayImage out = GrayImage::Zero(image.rows(), image.cols());
  for (Eigen::Index r = 0; r < image.rows(); ++r) {
    const Eigen::Index src = r - offset;
    if (src >= 0 && src < image.rows()) out.row(r) = image.row(src);
  }
  return out;
}

Tensor<float> augment(const GrayImage& image, const Tensor<float>& mean, int max_shift, Rng& rng) {
  if (mean.shape != Shape{static_cast<int>(image.rows()), static_cast<int>(image.cols())})
    throw Error("augment: mean image " + to_string(mean.shape) + " does not match the input");
  const GrayImage shifted = max_shift > 0 ? shift_rows(image, rng.range(-max_shift, max_shift)) : image;
  Tensor<float> out(mean.shape);
  for (std::size_t n = 0; n < out.size(); ++n) out[n] = shifted.data()[n] - mean[n];
  return out;
}

GrayImage mean_image(const std::vector<GrayImage>& images) {
  if (images.empty()) throw Error("mean_image: no images");
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(images[0].rows(), images[0].cols());
  for (const auto& img : images) {
    if (img.rows() != acc.rows() || img.cols() != acc.cols()) throw Error("mean_image: images differ in size");
    acc += img.cast<double>();
  }
  return (acc / static_cast<double>(images.size())).cast<float>();
}

namespace {

struct Preloaded {
  std::vector<std::vector<GrayImage>> images;
  std::vector<std::vector<Tensor<float>>> targets;  // 1 = background
  std::vector<std::vector<double>> thetas;
  std::vector<std::size_t> view_counts;
};

Preloaded preload(const DatasetManifest& manifest, const std::vector<const ObjectRecord*>& objects) {
  Preloaded p;
  for (const auto* obj : objects) {
    auto& imgs = p.images.emplace_back();
    auto& tgts = p.targets.emplace_back();
    auto& ths = p.thetas.emplace_back();
    for (std::size_t m = 0; m < obj->views.size(); ++m) {
      imgs.push_back(manifest.image(*obj, m));
      const auto sil = manifest.silhouette(*obj, m);
      Tensor<float> t({static_cast<int>(sil.rows()), static_cast<int>(sil.cols())});
      for (std::size_t n = 0; n < t.size(); ++n) t[n] = sil.data()[n] == kObject ? 0.0f : 1.0f;
      tgts.push_back(std::move(t));
      ths.push_back(obj->views[m].theta);
    }
    p.view_counts.push_back(obj->views.size());
  }
  return p;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

TrainResult train(const TrainConfig& config, const DatasetManifest& manifest, std::ostream* log) {
  if (config.batch_size < 1 || config.epochs < 1) throw Error("train: batch size and epochs must be positive");
  const auto train_objects = manifest.split("train");
  if (train_objects.empty()) throw Error("train: the dataset has no training objects");
  const Preloaded data = preload(manifest, train_objects);

  ModelParams<float> params;
  if (config.pretrained) {
    params = load_checkpoint(*config.pretrained).params;
  } else {
    auto model = config.model;
    model.h = manifest.h;
    params = init_params<float>(model, derive_seed(config.seed, {0}));
    std::vector<GrayImage> all;
    for (const auto& views : data.images) all.insert(all.end(), views.begin(), views.end());
    const GrayImage mean = mean_image(all);
    params.mean_image = Tensor<float>({manifest.h, manifest.h}, std::vector<float>(mean.data(), mean.data() + mean.size()));
  }
  if (params.config.h != manifest.h)
    throw Error("train: model expects " + std::to_string(params.config.h) + " px images, dataset has " +
                std::to_string(manifest.h));

  std::size_t total_views = 0;
  for (std::size_t c : data.view_counts) total_views += c;
  const long steps = config.steps_per_epoch > 0
                         ? config.steps_per_epoch
                         : static_cast<long>((total_views + static_cast<std::size_t>(config.batch_size) - 1) /
                                             static_cast<std::size_t>(config.batch_size));
  const int max_shift = jitter_range(manifest.h);
  const auto batch = static_cast<std::size_t>(config.batch_size);

  OptimizerState<float> opt{config.optimizer, {}, {}, 0};
  TrainResult result;
  result.initial = params;
  std::vector<float> losses(batch);
  std::vector<GradMap<float>> item_grads(batch);
  long global_step = 0;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    double loss_sum = 0.0;
    for (long s = 0; s < steps; ++s, ++global_step) {
      const auto gs = static_cast<std::uint64_t>(global_step);
      Rng batch_rng(derive_seed(config.seed, {1, gs}));
      const auto items = make_batch(data.view_counts, config.n_towers, config.batch_size, batch_rng);
      parallel_for(batch, config.threads, [&](std::size_t i) {
        const auto& it = items[i];
        Rng aug_rng(derive_seed(config.seed, {2, gs, i}));
        std::vector<Tensor<float>> imgs;
        std::vector<double> thetas;
        for (std::size_t v : it.inputs) {
          imgs.push_back(augment(data.images[it.object][v], params.mean_image, max_shift, aug_rng));
          thetas.push_back(data.thetas[it.object][v]);
        }
        Graph<float> g;
        SilNet<float> net(g, params, !config.freeze_encoder, true);
        auto loss = bce_loss(net.predict(imgs, thetas, data.thetas[it.object][it.target], config.mode),
                             data.targets[it.object][it.target]);
        g.backward(loss);
        losses[i] = loss.value()[0];
        item_grads[i] = net.gradients();
      });

      double step_loss = 0.0;
      for (float l : losses) step_loss += l;
      step_loss /= static_cast<double>(batch);
      if (!std::isfinite(step_loss))
        throw Error("train: non-finite loss at epoch " + std::to_string(epoch) + ", step " + std::to_string(s));
      if (global_step == 0) result.initial_loss = step_loss;
      loss_sum += step_loss;

      GradMap<float> grads = std::move(item_grads[0]);
      for (std::size_t i = 1; i < batch; ++i)
        for (auto& [name, g] : grads) {
          const auto& gi = item_grads[i].at(name);
          for (std::size_t j = 0; j < g.size(); ++j) g[j] += gi[j];
        }
      const float inv = 1.0f / static_cast<float>(batch);
      for (auto& [name, g] : grads)
        for (auto& x : g) x *= inv;
      optimizer_step(opt, params.tensors, grads);
    }

    const double val_iou =
        manifest.split("val").empty()
            ? 0.0
            : evaluate_params(params, manifest, "val", config.n_towers, config.mode, config.threads).mean;
    const double wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    result.log.push_back({epoch, loss_sum / static_cast<double>(steps), val_iou, wall_ms});
    if (log) {
      const nlohmann::json line = {{"epoch", epoch},
                                   {"train_loss", result.log.back().train_loss},
                                   {"val_iou", val_iou},
                                   {"wall_ms", std::lround(wall_ms)}};
      *log << line.dump() << std::endl;
    }
    if (val_iou > result.best_val_iou) {
      result.best_val_iou = val_iou;
      result.best_epoch = epoch;
      result.best = params;
    }
  }
  result.last = params;

  if (!config.checkpoint.empty()) {
    save_checkpoint(config.checkpoint, result.best,
                    {{"mode", to_string(config.mode)},
                     {"n_towers", std::to_string(config.n_towers)},
                     {"epoch", std::to_string(result.best_epoch)},
                     {"val_iou", format_double(result.best_val_iou)},
                     {"seed", std::to_string(config.seed)},
                     {"freeze_encoder", config.freeze_encoder ? "true" : "false"}});
  }
  return result;
}

}  // namespace silcarve
