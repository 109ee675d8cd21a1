#pragma once

// Hand-rolled generators, finite-difference gradient checking and scalar
// reference implementations shared by the test binaries.

#include "acrpose/autodiff/adam.hpp"
#include "acrpose/autodiff/tape.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

namespace testing_support {

using acrpose::Matrix;
namespace ad = acrpose::ad;

struct Gen {
  std::mt19937_64 rng;
  explicit Gen(std::uint64_t seed) : rng(seed) {}

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
  double normal(double sigma = 1.0) { return std::normal_distribution<double>(0.0, sigma)(rng); }
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }
  bool coin() { return integer(0, 1) == 1; }

  Matrix matrix(Eigen::Index r, Eigen::Index c, double lo = -1.0, double hi = 1.0) {
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = uniform(lo, hi);
    return m;
  }

  // Entries bounded away from zero by `margin`, for ops with a kink at 0.
  Matrix away_from_zero(Eigen::Index r, Eigen::Index c, double margin = 0.05, double hi = 1.0) {
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = (coin() ? 1.0 : -1.0) * uniform(margin, hi);
    return m;
  }

  // Rows of a random matrix whose entries are pairwise separated, so argmax
  // selections are stable under small perturbations.
  Matrix separated(Eigen::Index r, Eigen::Index c, double gap = 0.05) {
    std::vector<double> vals(static_cast<std::size_t>(r * c));
    for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = gap * static_cast<double>(i) + uniform(0.0, 0.2 * gap);
    std::shuffle(vals.begin(), vals.end(), rng);
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = vals[static_cast<std::size_t>(i)] - 0.5 * gap * r * c;
    return m;
  }

  Matrix row_stochastic(Eigen::Index r, Eigen::Index c) {
    Matrix m = matrix(r, c, 0.05, 1.0);
    for (Eigen::Index i = 0; i < r; ++i) m.row(i) /= m.row(i).sum();
    return m;
  }

  Eigen::Matrix3d rotation() {
    Eigen::Quaterniond q(normal(), normal(), normal(), normal());
    q.normalize();
    return q.toRotationMatrix();
  }
};

// Scalar-valued function of a list of leaf tensors.
using ScalarFn = std::function<ad::Tensor(ad::Tape&, const std::vector<ad::Tensor>&)>;

struct GradCheck {
  double max_rel_err = 0.0;
  double max_abs_grad = 0.0;
};

// Relative error with a floor on the denominator for near-zero gradients.
inline double rel_err(double a, double b, double floor = 1e-4) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// Compares reverse-mode gradients of `fn` at `inputs` against central
// differences with step h.
inline GradCheck gradient_check(const ScalarFn& fn, const std::vector<Matrix>& inputs, double h = 1e-6) {
  std::vector<ad::Tensor> leaves;
  for (const auto& m : inputs) leaves.push_back(ad::Tensor::parameter(m));
  {
    ad::Tape tape;
    ad::Tensor out = fn(tape, leaves);
    tape.backward(out);
  }
  GradCheck res;
  for (auto& leaf : leaves) {
    Matrix analytic = leaf.grad();
    Matrix& v = leaf.mutable_value();
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      const double x0 = v.data()[i];
      v.data()[i] = x0 + h;
      double fp;
      {
        ad::Tape t(false);
        fp = fn(t, leaves).item();
      }
      v.data()[i] = x0 - h;
      double fm;
      {
        ad::Tape t(false);
        fm = fn(t, leaves).item();
      }
      v.data()[i] = x0;
      double numeric = (fp - fm) / (2.0 * h);
      res.max_rel_err = std::max(res.max_rel_err, rel_err(analytic.data()[i], numeric));
      res.max_abs_grad = std::max(res.max_abs_grad, std::abs(analytic.data()[i]));
    }
  }
  return res;
}

// Reduces a matrix-valued op to a scalar by a fixed random projection, so
// every output entry contributes a distinct weight.
inline ad::Tensor project(ad::Tape& t, const ad::Tensor& y, const Matrix& weights) {
  return t.sum(t.mul(y, ad::Tensor::constant(weights)));
}

// ----------------------------------------------------------- scalar oracles

inline Matrix naive_matmul(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (Eigen::Index k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      out(i, j) = s;
    }
  }
  return out;
}

inline double naive_chamfer(const Matrix& a, const Matrix& b) {
  auto one_way = [](const Matrix& x, const Matrix& y) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      double best = 1e300;
      for (Eigen::Index j = 0; j < y.rows(); ++j) {
        double d = 0.0;
        for (Eigen::Index c = 0; c < x.cols(); ++c) d += (x(i, c) - y(j, c)) * (x(i, c) - y(j, c));
        best = std::min(best, d);
      }
      total += best;
    }
    return total / static_cast<double>(x.rows());
  };
  return one_way(a, b) + one_way(b, a);
}

// Smallest gap between the nearest and second-nearest distance over all
// query rows in both directions; a chamfer pairing is stable under
// perturbations well below this gap.
inline double chamfer_margin(const Matrix& a, const Matrix& b) {
  auto one_way = [](const Matrix& x, const Matrix& y) {
    double margin = 1e300;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      std::vector<double> d;
      for (Eigen::Index j = 0; j < y.rows(); ++j) d.push_back((x.row(i) - y.row(j)).squaredNorm());
      std::sort(d.begin(), d.end());
      if (d.size() > 1) margin = std::min(margin, d[1] - d[0]);
    }
    return margin;
  };
  return std::min(one_way(a, b), one_way(b, a));
}

}  // namespace testing_support
