#pragma once

#include <Eigen/Core>

#include <cstdint>

namespace otnas {

using Index = Eigen::Index;

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using RowMatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using ArrayX = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

using MatrixXd = MatrixX<double>;
using RowMatrixXd = RowMatrixX<double>;
using VectorXd = VectorX<double>;

using Seed = std::uint64_t;

}  // namespace otnas
