#pragma once

#include <Eigen/Dense>

namespace floodcnn {

// Samples are rows throughout the library.
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

}  // namespace floodcnn
