#pragma once

// Similarity alignment of reconstructed canonical coordinates to the
// observed points, and object size recovery from the deformed prior.

#include "acrpose/autodiff/tensor.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>

namespace acrpose {

class DegenerateGeometryError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// x_camera = scale * rotation * x_canonical + translation
struct Pose {
  double scale = 1.0;
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  Matrix apply(const Matrix& canonical) const {
    Matrix out = scale * (canonical * rotation.transpose());
    out.rowwise() += translation.transpose();
    return out;
  }

  bool valid(double tol = 1e-9) const {
    return scale > 0.0 &&
           (rotation.transpose() * rotation - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() < tol &&
           std::abs(rotation.determinant() - 1.0) < tol;
  }
};

// Closed-form least-squares similarity (Umeyama 1991) minimizing
// sum_i |dst_i - (s R src_i + t)|^2 over corresponding rows.
inline Pose umeyama(const Matrix& src, const Matrix& dst) {
  if (src.cols() != 3 || dst.cols() != 3) throw ShapeError("umeyama: expected N x 3 clouds");
  if (src.rows() != dst.rows()) throw ShapeError("umeyama: clouds must have the same number of rows");
  if (src.rows() < 3) throw std::invalid_argument("umeyama: need at least 3 correspondences");
  const double n = static_cast<double>(src.rows());
  Eigen::RowVector3d mu_src = src.colwise().mean();
  Eigen::RowVector3d mu_dst = dst.colwise().mean();
  Matrix sc = src.rowwise() - mu_src;
  Matrix dc = dst.rowwise() - mu_dst;
  double var_src = sc.rowwise().squaredNorm().sum() / n;
  Eigen::Matrix3d cov = (dc.transpose() * sc) / n;

  Eigen::JacobiSVD<Eigen::Matrix3d> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Vector3d sigma = svd.singularValues();
  if (sigma(1) < 1e-12 || var_src < 1e-24) {
    throw DegenerateGeometryError("umeyama: rank-deficient cross-covariance (sigma2=" + std::to_string(sigma(1)) + ")");
  }
  Eigen::Matrix3d u = svd.matrixU();
  Eigen::Matrix3d v = svd.matrixV();
  Eigen::Vector3d d(1.0, 1.0, (u * v.transpose()).determinant() < 0.0 ? -1.0 : 1.0);

  Pose p;
  p.rotation = u * d.asDiagonal() * v.transpose();
  p.scale = sigma.dot(d) / var_src;
  p.translation = mu_dst.transpose() - p.scale * p.rotation * mu_src.transpose();
  return p;
}

inline double alignment_residual(const Pose& p, const Matrix& src, const Matrix& dst) {
  return (p.apply(src) - dst).rowwise().squaredNorm().sum();
}

enum class SizeMode { extents, mean_abs };

struct SizeEstimate {
  Eigen::Vector3d extents = Eigen::Vector3d::Zero();  // canonical units
  Eigen::Vector3d metric = Eigen::Vector3d::Zero();   // scale * extents
};

// Per-axis size of the deformed prior. `extents` is max - min per axis;
// `mean_abs` is twice the mean absolute deviation from the axis mean.
inline Eigen::Vector3d canonical_size(const Matrix& deformed, SizeMode mode = SizeMode::extents) {
  if (deformed.cols() != 3 || deformed.rows() < 1) throw ShapeError("recover_size: expected N x 3 cloud");
  if (mode == SizeMode::extents) {
    return (deformed.colwise().maxCoeff() - deformed.colwise().minCoeff()).transpose();
  }
  Eigen::RowVector3d mean = deformed.colwise().mean();
  return 2.0 * (deformed.rowwise() - mean).cwiseAbs().colwise().mean().transpose();
}

inline SizeEstimate recover_size(const Matrix& prior, const Matrix& deformation, double scale = 1.0,
                                 SizeMode mode = SizeMode::extents) {
  if (prior.rows() != deformation.rows() || prior.cols() != deformation.cols()) {
    throw ShapeError("recover_size: prior and deformation shapes differ");
  }
  SizeEstimate out;
  out.extents = canonical_size(prior + deformation, mode);
  out.metric = scale * out.extents;
  return out;
}

struct PoseSolution {
  Pose pose;
  SizeEstimate size;
};

// Aligns the reconstructed canonical coordinates (row i corresponds to
// observed point i) with the observation and sizes the deformed prior.
inline PoseSolution solve_pose(const Matrix& observed, const Matrix& nocs, const Matrix& prior,
                               const Matrix& deformation, SizeMode mode = SizeMode::extents) {
  PoseSolution s;
  s.pose = umeyama(nocs, observed);
  s.size = recover_size(prior, deformation, s.pose.scale, mode);
  return s;
}

}  // namespace acrpose
