#pragma once

// Loss terms of the self-supervised objective as free functions over Eigen
// expressions. The autodiff ops in autodiff.hpp evaluate the same functions.

#include "eeg2rep/types.hpp"

#include <cmath>
#include <span>

namespace eeg2rep {

struct LossConfig {
  double lambda = 25.0;  // reconstruction weight
  double mu = 25.0;      // variance weight
  double gamma = 1.0;    // covariance weight
  double variance_target = 1.0;
  double eps = 1e-4;
};

void validate(const LossConfig& cfg);

struct LossBreakdown {
  double rec = 0.0;
  double var = 0.0;
  double cov = 0.0;
  double total = 0.0;
};

/// (1/M_eff) sum_i ||targets[i] - predictions[i]||_F^2 where each pair holds
/// the rows of one target block after overlap exclusion. Blocks with zero
/// rows do not count toward M_eff. Throws if every block is empty.
double reconstruction_loss(std::span<const Matrix> targets, std::span<const Matrix> predictions);

/// Mean over masked views of their reconstruction losses.
double multi_view_loss(std::span<const double> per_view);

LossBreakdown total_loss(double rec, double var, double cov, const LossConfig& cfg);

/// Batch standard deviation per column, population (1/n) convention.
template <class Derived>
RowVector column_std(const Eigen::MatrixBase<Derived>& r, double eps = 0.0) {
  const RowVector mean = r.colwise().mean();
  const Matrix centered = r.rowwise() - mean;
  const double n = static_cast<double>(r.rows());
  return ((centered.array().square().colwise().sum() / n) + eps).sqrt().matrix();
}

/// v(R) = (1/d) sum_dims max(0, target - sqrt(Var(dim) + eps)).
template <class Derived>
double variance_loss(const Eigen::MatrixBase<Derived>& r, double target, double eps) {
  const RowVector std = column_std(r, eps);
  return (target - std.array()).max(0.0).sum() / static_cast<double>(r.cols());
}

/// Batch covariance with mean-centering and 1/(n-1).
template <class Derived>
Matrix covariance(const Eigen::MatrixBase<Derived>& r) {
  const Matrix centered = r.rowwise() - r.colwise().mean();
  return centered.transpose() * centered / static_cast<double>(r.rows() - 1);
}

/// c(R) = (1/d) sum_{a != b} Cov(R)_{ab}^2.
template <class Derived>
double covariance_loss(const Eigen::MatrixBase<Derived>& r) {
  if (r.rows() < 2) throw Error("covariance_loss needs a batch of at least 2 rows");
  const Matrix c = covariance(r);
  return (c.array().square().sum() - c.diagonal().array().square().sum()) / static_cast<double>(r.cols());
}

/// Standardizes each row to zero mean and unit variance over its columns.
template <class Derived>
Matrix normalize_rows(const Eigen::MatrixBase<Derived>& x, double eps = 1e-5) {
  const Vector mean = x.rowwise().mean();
  Matrix centered = x.colwise() - mean;
  const Vector var = centered.array().square().rowwise().mean();
  for (Eigen::Index i = 0; i < centered.rows(); ++i) centered.row(i) /= std::sqrt(var(i) + eps);
  return centered;
}

}  // namespace eeg2rep
