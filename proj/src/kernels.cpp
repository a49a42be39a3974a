#include "adarl/kernels.hpp"

#include <algorithm>
#include <cmath>

namespace adarl::kernels {

Eigen::RowVectorXd column_means(const Eigen::MatrixXd& data, Exec exec) {
  const Eigen::Index n = data.rows();
  const Eigen::Index c = data.cols();
  Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(c);
  if (n == 0) return mean;
  if (exec == Exec::parallel) {
#pragma omp parallel for schedule(static)
    for (Eigen::Index j = 0; j < c; ++j) {
      double s = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) s += data(i, j);
      mean(j) = s / static_cast<double>(n);
    }
  } else {
    for (Eigen::Index j = 0; j < c; ++j) {
      double s = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) s += data(i, j);
      mean(j) = s / static_cast<double>(n);
    }
  }
  return mean;
}

Eigen::MatrixXd covariance(const Eigen::MatrixXd& data, Exec exec) {
  const Eigen::Index n = data.rows();
  const Eigen::Index c = data.cols();
  const Eigen::RowVectorXd mean = column_means(data, exec);
  Eigen::MatrixXd centered = data.rowwise() - mean;
  Eigen::MatrixXd cov(c, c);
  const double denom = n > 1 ? static_cast<double>(n - 1) : 1.0;
  auto entry = [&](Eigen::Index a, Eigen::Index b) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) s += centered(i, a) * centered(i, b);
    return s / denom;
  };
  const Eigen::Index pairs = c * (c + 1) / 2;
  auto unpack = [c](Eigen::Index k, Eigen::Index& a, Eigen::Index& b) {
    a = 0;
    Eigen::Index row_len = c;
    while (k >= row_len) {
      k -= row_len;
      ++a;
      --row_len;
    }
    b = a + k;
  };
  if (exec == Exec::parallel) {
#pragma omp parallel for schedule(dynamic, 4)
    for (Eigen::Index k = 0; k < pairs; ++k) {
      Eigen::Index a = 0, b = 0;
      unpack(k, a, b);
      cov(a, b) = cov(b, a) = entry(a, b);
    }
  } else {
    for (Eigen::Index k = 0; k < pairs; ++k) {
      Eigen::Index a = 0, b = 0;
      unpack(k, a, b);
      cov(a, b) = cov(b, a) = entry(a, b);
    }
  }
  return cov;
}

Eigen::ArrayXXd fast_tanh(const Eigen::ArrayXXd& x) {
  return 1.0 - 2.0 / ((2.0 * x).exp() + 1.0);
}

namespace {

constexpr Eigen::Index kRowBlock = 16;

void dense_block(const Eigen::MatrixXd& x, const Eigen::MatrixXd& w, const Eigen::RowVectorXd& b,
                 Eigen::MatrixXd& out, Eigen::Index start) {
  const Eigen::Index n = std::min(kRowBlock, x.rows() - start);
  Eigen::MatrixXd z = x.middleRows(start, n) * w;
  z.rowwise() += b;
  out.middleRows(start, n) = fast_tanh(z.array()).matrix();
}

}  // namespace

Eigen::MatrixXd dense_tanh(const Eigen::MatrixXd& x, const Eigen::MatrixXd& w, const Eigen::RowVectorXd& b,
                           Exec exec) {
  Eigen::MatrixXd out(x.rows(), w.cols());
  const Eigen::Index blocks = (x.rows() + kRowBlock - 1) / kRowBlock;
  if (exec == Exec::parallel) {
#pragma omp parallel for schedule(static)
    for (Eigen::Index k = 0; k < blocks; ++k) dense_block(x, w, b, out, k * kRowBlock);
  } else {
    for (Eigen::Index k = 0; k < blocks; ++k) dense_block(x, w, b, out, k * kRowBlock);
  }
  return out;
}

}  // namespace adarl::kernels
