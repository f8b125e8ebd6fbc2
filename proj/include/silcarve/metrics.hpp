#pragma once

// Silhouette metrics. Masks use 0 = object, 1 = non-object.

#include "silcarve/image.hpp"

namespace silcarve {

/// Pixel is non-object (1) iff prob > 0.5.
Silhouette binarize(const Image<float>& prob);

/// Intersection over union of object pixels. Two masks with no object
/// pixels at all score 1.
double iou(const Silhouette& pred, const Silhouette& truth);

struct SoftIoU {
  double value = 0.0;
  bool empty_denominator = false;
};

/// Sum(I(S) * truth) / count(I(S) + truth > 0.9), where I(S) is 1 on object
/// pixels of pred and truth is an object probability in [0, 1].
SoftIoU iou_soft(const Silhouette& pred, const Image<float>& truth);

}  // namespace silcarve
