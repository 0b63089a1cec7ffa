#pragma once

#include "bipsda/common.hpp"

namespace bipsda {

// Mat-vecs for the 10-dimensional sampler inner loops, where the general GEMV
// dispatch costs more than the arithmetic. Shapes that occur in the benchmark
// problems get fully unrolled fixed-size kernels; anything else falls back to
// plain loops.

namespace detail {

template <int R, int C>
inline void gemv_fixed(const double* a, const double* x, double alpha, double beta, double* y) {
  Eigen::Map<const Eigen::Matrix<double, R, C>> am(a);
  Eigen::Map<const Eigen::Matrix<double, C, 1>> xm(x);
  Eigen::Map<Eigen::Matrix<double, R, 1>> ym(y);
  if (beta == 0.0) {
    ym.noalias() = alpha * am.lazyProduct(xm);
  } else {
    ym *= beta;
    ym.noalias() += alpha * am.lazyProduct(xm);
  }
}

template <int R, int C>
inline void gemv_t_fixed(const double* a, const double* x, double alpha, double beta, double* y) {
  Eigen::Map<const Eigen::Matrix<double, R, C>> am(a);
  Eigen::Map<const Eigen::Matrix<double, R, 1>> xm(x);
  Eigen::Map<Eigen::Matrix<double, C, 1>> ym(y);
  if (beta == 0.0) {
    ym.noalias() = alpha * am.transpose().lazyProduct(xm);
  } else {
    ym *= beta;
    ym.noalias() += alpha * am.transpose().lazyProduct(xm);
  }
}

}  // namespace detail

/// y = beta * y + alpha * A x
inline void gemv(const Matrix& a, const Vector& x, double alpha, double beta, Vector& y) {
  const Index rows = a.rows(), cols = a.cols();
  if (cols == 10) {
    switch (rows) {
      case 10: return detail::gemv_fixed<10, 10>(a.data(), x.data(), alpha, beta, y.data());
      case 8: return detail::gemv_fixed<8, 10>(a.data(), x.data(), alpha, beta, y.data());
      case 5: return detail::gemv_fixed<5, 10>(a.data(), x.data(), alpha, beta, y.data());
      case 15: return detail::gemv_fixed<15, 10>(a.data(), x.data(), alpha, beta, y.data());
      default: break;
    }
  }
  const double* __restrict ad = a.data();
  double* __restrict yd = y.data();
  if (beta == 0.0) {
    for (Index i = 0; i < rows; ++i) yd[i] = 0.0;
  } else if (beta != 1.0) {
    for (Index i = 0; i < rows; ++i) yd[i] *= beta;
  }
  for (Index j = 0; j < cols; ++j) {
    const double s = alpha * x[j];
    const double* __restrict col = ad + j * rows;
    for (Index i = 0; i < rows; ++i) yd[i] += s * col[i];
  }
}

/// y = beta * y + alpha * A^T x
inline void gemv_t(const Matrix& a, const Vector& x, double alpha, double beta, Vector& y) {
  const Index rows = a.rows(), cols = a.cols();
  if (cols == 10) {
    switch (rows) {
      case 10: return detail::gemv_t_fixed<10, 10>(a.data(), x.data(), alpha, beta, y.data());
      case 8: return detail::gemv_t_fixed<8, 10>(a.data(), x.data(), alpha, beta, y.data());
      case 5: return detail::gemv_t_fixed<5, 10>(a.data(), x.data(), alpha, beta, y.data());
      case 15: return detail::gemv_t_fixed<15, 10>(a.data(), x.data(), alpha, beta, y.data());
      default: break;
    }
  }
  const double* __restrict ad = a.data();
  const double* __restrict xd = x.data();
  double* __restrict yd = y.data();
  for (Index j = 0; j < cols; ++j) {
    const double* __restrict col = ad + j * rows;
    double acc = 0.0;
    for (Index i = 0; i < rows; ++i) acc += col[i] * xd[i];
    yd[j] = (beta == 0.0 ? 0.0 : beta * yd[j]) + alpha * acc;
  }
}

}  // namespace bipsda
