#pragma once

#include <Eigen/Dense>

namespace textcam {

// Row-major storage matches the bundle layout, so tensors map onto these
// without transposition.
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

}  // namespace textcam
