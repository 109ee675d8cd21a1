#pragma once

// Geometric primitives on point clouds: centering, brute-force KNN, the
// eleven local rigid-invariant features used by the rotation-invariant
// convolution, and the chamfer distance (plain and differentiable).

#include "acrpose/autodiff/tape.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace acrpose {

enum class Frame { camera, canonical };

struct PointCloud {
  Matrix points;  // N x 3
  Frame frame = Frame::camera;

  PointCloud() = default;
  explicit PointCloud(Matrix pts, Frame f = Frame::camera) : points(std::move(pts)), frame(f) {
    if (points.cols() != 3) throw ShapeError("PointCloud: expected N x 3 points");
  }
  Eigen::Index size() const { return points.rows(); }
};

struct Centered {
  PointCloud cloud;
  Eigen::Vector3d centroid;
};

inline Centered center_points(const PointCloud& p) {
  if (p.size() < 1) throw std::invalid_argument("center_points: empty cloud");
  Eigen::RowVector3d c = p.points.colwise().mean();
  Matrix shifted = p.points.rowwise() - c;
  return {PointCloud(std::move(shifted), p.frame), c.transpose()};
}

// ------------------------------------------------------------------------ KNN

enum class NeighborMetric { euclid3d, feature_space };

// Row i lists the k nearest rows to i (self excluded), by ascending distance,
// ties broken by smaller index.
struct NeighborIndex {
  Eigen::Index n = 0;
  Eigen::Index k = 0;
  NeighborMetric metric = NeighborMetric::euclid3d;
  std::vector<int> indices;  // n*k, row-major

  std::span<const int> row(Eigen::Index i) const {
    return {indices.data() + i * k, static_cast<std::size_t>(k)};
  }
  // Center index of every (i, j) pair, i.e. i repeated k times.
  std::vector<int> centers() const {
    std::vector<int> out(indices.size());
    for (Eigen::Index i = 0; i < n; ++i) std::fill_n(out.begin() + i * k, k, static_cast<int>(i));
    return out;
  }
};

inline NeighborIndex knn(const Matrix& rows, Eigen::Index k,
                         NeighborMetric metric = NeighborMetric::euclid3d) {
  const Eigen::Index n = rows.rows();
  if (k < 1 || k >= n) {
    throw std::invalid_argument("knn: need 1 <= k < N (k=" + std::to_string(k) + ", N=" + std::to_string(n) + ")");
  }
  NeighborIndex out;
  out.n = n;
  out.k = k;
  out.metric = metric;
  out.indices.resize(static_cast<std::size_t>(n * k));
  std::vector<std::pair<double, int>> cand(static_cast<std::size_t>(n - 1));
  const Eigen::Index d = rows.cols();
  const double* base = rows.data();
  for (Eigen::Index i = 0; i < n; ++i) {
    std::size_t c = 0;
    const double* xi = base + i * d;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j == i) continue;
      const double* xj = base + j * d;
      double s = 0.0;
      for (Eigen::Index q = 0; q < d; ++q) {
        double t = xj[q] - xi[q];
        s += t * t;
      }
      cand[c++] = {s, static_cast<int>(j)};
    }
    std::partial_sort(cand.begin(), cand.begin() + k, cand.end());
    for (Eigen::Index j = 0; j < k; ++j) out.indices[static_cast<std::size_t>(i * k + j)] = cand[static_cast<std::size_t>(j)].second;
  }
  return out;
}

// ---------------------------------------------------- local invariant features

inline constexpr double kDegenerateNorm = 1e-9;
inline constexpr int kInvariantFeatureCount = 11;

// Unsigned angle in [0, pi]; 0 when either vector is degenerate.
inline double safe_angle(const Eigen::Vector3d& u, const Eigen::Vector3d& v) {
  if (u.norm() < kDegenerateNorm || v.norm() < kDegenerateNorm) return 0.0;
  return std::atan2(u.cross(v).norm(), u.dot(v));
}

inline double safe_cosine(const Eigen::Vector3d& u, const Eigen::Vector3d& v) {
  double nu = u.norm();
  double nv = v.norm();
  if (nu < kDegenerateNorm || nv < kDegenerateNorm) return 1.0;
  return std::clamp(u.dot(v) / (nu * nv), -1.0, 1.0);
}

// One row per (center i, neighbor j), ordered as nn.indices:
//   d1..d5, a1..a4, s1, s2
// using the neighborhood centroid c, nearest neighbor n and farthest neighbor f.
inline Matrix local_invariant_features(const Matrix& points, const NeighborIndex& nn) {
  if (points.cols() != 3) throw ShapeError("local_invariant_features: expected N x 3 points");
  if (nn.n != points.rows()) throw ShapeError("local_invariant_features: index built over a different cloud");
  Matrix out(nn.n * nn.k, kInvariantFeatureCount);
  for (Eigen::Index i = 0; i < nn.n; ++i) {
    auto row = nn.row(i);
    Eigen::Vector3d xi = points.row(i).transpose();
    Eigen::Vector3d c = Eigen::Vector3d::Zero();
    for (int j : row) c += points.row(j).transpose();
    c /= static_cast<double>(nn.k);
    Eigen::Vector3d near = points.row(row.front()).transpose();
    Eigen::Vector3d far = points.row(row.back()).transpose();
    Eigen::Vector3d pole = xi - c;
    for (Eigen::Index j = 0; j < nn.k; ++j) {
      Eigen::Vector3d xj = points.row(row[static_cast<std::size_t>(j)]).transpose();
      Eigen::Vector3d e = xj - xi;
      auto r = out.row(i * nn.k + j);
      r(0) = e.norm();
      r(1) = (xj - c).norm();
      r(2) = (xj - near).norm();
      r(3) = (xj - far).norm();
      r(4) = pole.norm();
      r(5) = safe_angle(e, c - xi);
      r(6) = safe_angle(e, near - xi);
      r(7) = safe_angle(e, far - xi);
      r(8) = safe_angle(xj - c, pole);
      r(9) = e.norm();
      r(10) = safe_cosine(e, pole);
    }
  }
  return out;
}

// ------------------------------------------------------------------- chamfer

namespace detail {
// For every row of a, the index of the nearest row of b (first on ties).
inline std::vector<int> nearest_rows(const Matrix& a, const Matrix& b, double& mean_sq) {
  if (a.cols() != b.cols()) throw ShapeError("chamfer_distance: dimension mismatch");
  std::vector<int> idx(static_cast<std::size_t>(a.rows()));
  double total = 0.0;
  const Eigen::Index dim = a.cols();
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    int arg = 0;
    const double* ai = a.data() + i * dim;
    for (Eigen::Index j = 0; j < b.rows(); ++j) {
      const double* bj = b.data() + j * dim;
      double d = 0.0;
      for (Eigen::Index q = 0; q < dim; ++q) {
        double t = ai[q] - bj[q];
        d += t * t;
      }
      if (d < best) {
        best = d;
        arg = static_cast<int>(j);
      }
    }
    idx[static_cast<std::size_t>(i)] = arg;
    total += best;
  }
  mean_sq = total / static_cast<double>(a.rows());
  return idx;
}
}  // namespace detail

// Symmetric mean squared nearest-neighbor distance.
inline double chamfer_distance(const Matrix& a, const Matrix& b) {
  if (a.rows() == 0 || b.rows() == 0) throw std::invalid_argument("chamfer_distance: empty cloud");
  double ab = 0.0;
  double ba = 0.0;
  detail::nearest_rows(a, b, ab);
  detail::nearest_rows(b, a, ba);
  return ab + ba;
}

// Differentiable chamfer distance; nearest-neighbor pairings are held fixed
// during the backward pass.
inline ad::Tensor chamfer_distance(ad::Tape& tape, const ad::Tensor& a, const ad::Tensor& b) {
  if (a.rows() == 0 || b.rows() == 0) throw std::invalid_argument("chamfer_distance: empty cloud");
  if (a.cols() != b.cols()) throw ShapeError("chamfer_distance: dimension mismatch");
  double ab = 0.0;
  double ba = 0.0;
  std::vector<int> a_to_b = detail::nearest_rows(a.value(), b.value(), ab);
  std::vector<int> b_to_a = detail::nearest_rows(b.value(), a.value(), ba);
  Matrix v(1, 1);
  v(0, 0) = ab + ba;
  return tape.record(std::move(v), {a, b}, [a, b, a_to_b = std::move(a_to_b), b_to_a = std::move(b_to_a)](const Matrix& g) {
    const Matrix& av = a.value();
    const Matrix& bv = b.value();
    Matrix ga = Matrix::Zero(av.rows(), av.cols());
    Matrix gb = Matrix::Zero(bv.rows(), bv.cols());
    double wa = 2.0 * g(0, 0) / static_cast<double>(av.rows());
    double wb = 2.0 * g(0, 0) / static_cast<double>(bv.rows());
    for (Eigen::Index i = 0; i < av.rows(); ++i) {
      int j = a_to_b[static_cast<std::size_t>(i)];
      Eigen::RowVectorXd d = av.row(i) - bv.row(j);
      ga.row(i) += wa * d;
      gb.row(j) -= wa * d;
    }
    for (Eigen::Index j = 0; j < bv.rows(); ++j) {
      int i = b_to_a[static_cast<std::size_t>(j)];
      Eigen::RowVectorXd d = bv.row(j) - av.row(i);
      gb.row(j) += wb * d;
      ga.row(i) -= wb * d;
    }
    if (a.requires_grad()) ad::Tape::accumulate(a, ga);
    if (b.requires_grad()) ad::Tape::accumulate(b, gb);
  });
}

// ------------------------------------------------------------------ rotations

// Uniform rotation on SO(3) from a normalized Gaussian quaternion.
template <class Rng>
Eigen::Matrix3d random_rotation(Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::Quaterniond q;
  do {
    q = Eigen::Quaterniond(n(rng), n(rng), n(rng), n(rng));
  } while (q.norm() < 1e-6);
  q.normalize();
  return q.toRotationMatrix();
}

// Applies x -> R x + t to every row.
inline Matrix rigid_transform(const Matrix& points, const Eigen::Matrix3d& r, const Eigen::Vector3d& t) {
  Matrix out = points * r.transpose();
  out.rowwise() += t.transpose();
  return out;
}

}  // namespace acrpose
