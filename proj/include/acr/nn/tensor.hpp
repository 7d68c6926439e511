#pragma once

#include <Eigen/Dense>

namespace acr {

/// Dense row-major matrix. One row per sample.
template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

template <typename T>
using RowVector = Eigen::Matrix<T, 1, Eigen::Dynamic>;

using MatrixD = Matrix<double>;
using VectorD = Vector<double>;

using Index = Eigen::Index;

}  // namespace acr
