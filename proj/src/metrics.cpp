#include "silcarve/metrics.hpp"

#include "silcarve/tensor.hpp"

namespace silcarve {

namespace {

void check_same_shape(const char* op, Eigen::Index r0, Eigen::Index c0, Eigen::Index r1, Eigen::Index c1) {
  if (r0 != r1 || c0 != c1)
    throw Error(std::string(op) + ": shape mismatch " + std::to_string(r0) + "x" + std::to_string(c0) + " vs " +
                std::to_string(r1) + "x" + std::to_string(c1));
}

}  // namespace

Silhouette binarize(const Image<float>& prob) {
  return (prob.array() > 0.5f).select(Silhouette::Constant(prob.rows(), prob.cols(), kBackground),
                                      Silhouette::Constant(prob.rows(), prob.cols(), kObject));
}

double iou(const Silhouette& pred, const Silhouette& truth) {
  check_same_shape("iou", pred.rows(), pred.cols(), truth.rows(), truth.cols());
  const auto a = pred.array() == kObject;
  const auto b = truth.array() == kObject;
  const auto inter = (a && b).count();
  const auto uni = (a || b).count();
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

SoftIoU iou_soft(const Silhouette& pred, const Image<float>& truth) {
  check_same_shape("iou_soft", pred.rows(), pred.cols(), truth.rows(), truth.cols());
  double num = 0.0;
  long den = 0;
  for (Eigen::Index r = 0; r < pred.rows(); ++r)
    for (Eigen::Index c = 0; c < pred.cols(); ++c) {
      const double indicator = pred(r, c) == kObject ? 1.0 : 0.0;
      num += indicator * truth(r, c);
      den += indicator + truth(r, c) > 0.9;
    }
  if (den == 0) return {0.0, true};
  return {num / static_cast<double>(den), false};
}

}  // namespace silcarve
