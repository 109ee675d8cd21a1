#pragma once

// Shape prior deformation: P_nocs = M_a (P_c + M_d).

#include "acrpose/autodiff/layers.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace acrpose {

struct DeformationOutputs {
  ad::Tensor deformation;  // M_d, N_c x 3
  ad::Tensor assignment;   // M_a, N_p x N_c, row-stochastic
};

struct SpdConfig {
  Eigen::Index channels = 16;
  Eigen::Index hidden = 64;
  Eigen::Index prior_points = 256;
};

class ShapePriorDeformation {
 public:
  ShapePriorDeformation() = default;
  ShapePriorDeformation(const SpdConfig& cfg, ad::Rng& rng)
      : cfg_(cfg),
        deform_({cfg.channels, cfg.hidden, 3}, rng),
        assign_({cfg.channels, cfg.hidden, cfg.prior_points}, rng) {
    // Output layers start near zero: training begins from the undeformed
    // prior and an almost uniform assignment.
    for (ad::Mlp* head : {&deform_, &assign_}) {
      head->layers.back().weight.mutable_value() *= kOutputInitScale;
      head->layers.back().bias.mutable_value() *= kOutputInitScale;
    }
  }

  static constexpr double kOutputInitScale = 0.01;

  // Two-layer MLP, linear output.
  ad::Tensor predict_deformation(ad::Tape& t, const ad::Tensor& f_d) const { return deform_.forward(t, f_d); }

  // Two-layer MLP to N_c logits per observed point, then row softmax.
  ad::Tensor predict_assignment(ad::Tape& t, const ad::Tensor& f_a) const {
    return t.softmax_rows(assign_.forward(t, f_a));
  }

  ad::Mlp& deformation_head() { return deform_; }
  ad::Mlp& assignment_head() { return assign_; }

  void collect(ad::ParameterSet& ps, const std::string& prefix) const {
    deform_.collect(ps, prefix + ".deformation_head");
    assign_.collect(ps, prefix + ".assignment_head");
  }

 private:
  SpdConfig cfg_;
  ad::Mlp deform_;
  ad::Mlp assign_;
};

inline ad::Tensor deformed_prior(ad::Tape& t, const ad::Tensor& prior, const ad::Tensor& deformation) {
  return t.add(prior, deformation);
}

inline void check_row_stochastic(const Matrix& m, double tol = 1e-6) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    double s = m.row(r).sum();
    if (std::abs(s - 1.0) > tol) {
      throw std::invalid_argument("reconstruct_nocs: assignment row " + std::to_string(r) + " sums to " +
                                  std::to_string(s));
    }
  }
}

// Row-by-row product accumulating over the shared index in ascending order,
// so results are reproducible independently of any BLAS blocking.
inline Matrix ordered_product(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index c = 0; c < b.cols(); ++c) {
      double s = 0.0;
      for (Eigen::Index j = 0; j < a.cols(); ++j) s += a(i, j) * b(j, c);
      out(i, c) = s;
    }
  }
  return out;
}

// Differentiable reconstruction of the observed points' canonical coordinates.
inline ad::Tensor reconstruct_nocs(ad::Tape& t, const ad::Tensor& prior, const DeformationOutputs& out) {
  check_row_stochastic(out.assignment.value());
  ad::Tensor deformed = deformed_prior(t, prior, out.deformation);
  const ad::Tensor& a = out.assignment;
  if (a.cols() != deformed.rows()) throw ShapeError("reconstruct_nocs: assignment width must equal N_c");
  return t.record(ordered_product(a.value(), deformed.value()), {a, deformed}, [a, deformed](const Matrix& g) {
    if (a.requires_grad()) ad::Tape::accumulate(a, g * deformed.value().transpose());
    if (deformed.requires_grad()) ad::Tape::accumulate(deformed, a.value().transpose() * g);
  });
}

inline Matrix reconstruct_nocs(const Matrix& prior, const Matrix& deformation, const Matrix& assignment) {
  if (prior.rows() != deformation.rows() || prior.cols() != 3 || deformation.cols() != 3) {
    throw ShapeError("reconstruct_nocs: prior and deformation must both be N_c x 3");
  }
  if (assignment.cols() != prior.rows()) throw ShapeError("reconstruct_nocs: assignment width must equal N_c");
  check_row_stochastic(assignment);
  return ordered_product(assignment, prior + deformation);
}

}  // namespace acrpose
