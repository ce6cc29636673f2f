#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

namespace irtune {

using Index = Eigen::Index;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using MatrixXd = Matrix<double>;
using VectorXd = Vector<double>;

// Sorted, duplicate-free list of layer indices.
using LayerSet = std::vector<int>;

}  // namespace irtune
