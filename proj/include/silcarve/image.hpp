#pragma once

#include <cstdint>

#include <Eigen/Core>

namespace silcarve {

/// Row-major image. Row index is the vertical (z) axis, column the horizontal (y) axis.
template <typename Scalar>
using Image = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using GrayImage = Image<float>;

/// Binary mask: 0 = object, 1 = non-object.
using Silhouette = Image<std::uint8_t>;

inline constexpr std::uint8_t kObject = 0;
inline constexpr std::uint8_t kBackground = 1;

}  // namespace silcarve
