#pragma once

#include <cstddef>
#include <functional>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace silcarve {

/// Raised for every rejected input (shape mismatch, bad arguments, malformed files).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<int>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         [](std::size_t acc, int d) { return acc * static_cast<std::size_t>(d); });
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

template <typename Scalar>
using MatrixRM = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using MatrixMap = Eigen::Map<MatrixRM<Scalar>>;
template <typename Scalar>
using ConstMatrixMap = Eigen::Map<const MatrixRM<Scalar>>;

/// Dense row-major n-d array with an optional gradient slot.
template <typename Scalar>
struct Tensor {
  Shape shape;
  std::vector<Scalar> data;
  std::vector<Scalar> grad;
  bool requires_grad = false;

  Tensor() = default;
  explicit Tensor(Shape s, Scalar fill = Scalar(0)) : shape(std::move(s)), data(numel(shape), fill) {
    for (int d : shape)
      if (d <= 0) throw Error("tensor dimensions must be positive, got " + to_string(shape));
  }
  Tensor(Shape s, std::vector<Scalar> values) : shape(std::move(s)), data(std::move(values)) {
    if (data.size() != numel(shape))
      throw Error("tensor of shape " + to_string(shape) + " given " + std::to_string(data.size()) +
                  " values");
  }

  static Tensor scalar(Scalar v) { return Tensor({1}, std::vector<Scalar>{v}); }

  std::size_t size() const { return data.size(); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape.at(static_cast<std::size_t>(i)); }

  Scalar& operator[](std::size_t i) { return data[i]; }
  const Scalar& operator[](std::size_t i) const { return data[i]; }

  MatrixMap<Scalar> matrix(int rows, int cols) { return {data.data(), rows, cols}; }
  ConstMatrixMap<Scalar> matrix(int rows, int cols) const { return {data.data(), rows, cols}; }

  void zero_grad() { grad.assign(data.size(), Scalar(0)); }

  template <typename Other>
  Tensor<Other> cast() const {
    Tensor<Other> out;
    out.shape = shape;
    out.data.assign(data.begin(), data.end());
    out.requires_grad = requires_grad;
    return out;
  }
};

}  // namespace silcarve
