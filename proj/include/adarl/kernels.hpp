#pragma once

#include <Eigen/Dense>

namespace adarl {

/// Selects the OpenMP kernel or its serial reference. Both produce
/// bit-identical results; the serial path is kept for tests and benchmarks.
enum class Exec { serial, parallel };

namespace kernels {

/// Column means of a sample matrix (rows are samples).
Eigen::RowVectorXd column_means(const Eigen::MatrixXd& data, Exec exec = Exec::parallel);

/// Unbiased sample covariance of the columns of `data`.
/// Each entry is accumulated serially in row order, so the parallel
/// version only distributes entries and stays deterministic.
Eigen::MatrixXd covariance(const Eigen::MatrixXd& data, Exec exec = Exec::parallel);

/// tanh through the vectorized exponential, 1 - 2 / (exp(2x) + 1).
Eigen::ArrayXXd fast_tanh(const Eigen::ArrayXXd& x);

/// Dense layer y = tanh(x W + b) evaluated without a tape, in fixed
/// blocks of rows; the parallel version distributes the blocks.
Eigen::MatrixXd dense_tanh(const Eigen::MatrixXd& x, const Eigen::MatrixXd& w,
                           const Eigen::RowVectorXd& b, Exec exec = Exec::parallel);

}  // namespace kernels
}  // namespace adarl
