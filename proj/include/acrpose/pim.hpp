#pragma once

// Pose-irrelevant encoder: translation is removed by centering, rotation by
// feeding the convolution kernels only rigid-invariant local geometry.

#include "acrpose/autodiff/layers.hpp"
#include "acrpose/geometry.hpp"

#include <string>
#include <vector>

namespace acrpose {

struct PimConfig {
  Eigen::Index k = 8;              // 3-D neighborhood size
  Eigen::Index kernel_channels = 8;  // C_mid
  Eigen::Index kernel_hidden = 16;
  std::vector<Eigen::Index> widths = {16, 16, 16, 16, 16};  // lift width, then one per layer
  bool normalize_scale = true;
};

// Everything PIM needs from the raw positions. Depends only on the data, so
// it can be computed once per sample and reused across epochs.
struct PimGeometry {
  NeighborIndex nn;
  std::vector<int> centers;
  Matrix invariants;  // (N*k) x 11
  Matrix initial;     // N x 11, the invariant row of each point's first neighbor
  Matrix normalized;  // centered (and optionally RMS-scaled) positions
};

inline PimGeometry pim_geometry(const Matrix& positions, Eigen::Index k, bool normalize_scale = true) {
  if (positions.rows() < k + 1) {
    throw std::invalid_argument("pim: need at least k+1 points (N=" + std::to_string(positions.rows()) +
                                ", k=" + std::to_string(k) + ")");
  }
  PimGeometry g;
  g.normalized = center_points(PointCloud(positions)).cloud.points;
  if (normalize_scale) {
    double rms = std::sqrt(g.normalized.rowwise().squaredNorm().mean());
    if (rms > kDegenerateNorm) g.normalized /= rms;
  }
  g.nn = knn(g.normalized, k);
  g.centers = g.nn.centers();
  g.invariants = local_invariant_features(g.normalized, g.nn);
  g.initial.resize(positions.rows(), kInvariantFeatureCount);
  for (Eigen::Index i = 0; i < positions.rows(); ++i) g.initial.row(i) = g.invariants.row(i * k);
  return g;
}

// Kernel MLP on the invariant features, squeeze-excitation gate over the
// neighborhood, then PointConv-style aggregation mean_j w_ij (x) f_j and a
// linear projection.
struct RotInvConvLayer {
  ad::Mlp kernel;  // 11 -> hidden -> C_mid
  ad::Mlp gate;    // C_mid -> C_mid/2 -> C_mid, sigmoid applied after
  ad::Linear project;  // C_in*C_mid -> C_out, no bias
  Eigen::Index in_channels = 0;

  RotInvConvLayer() = default;
  RotInvConvLayer(Eigen::Index c_in, Eigen::Index c_out, const PimConfig& cfg, ad::Rng& rng)
      : kernel({kInvariantFeatureCount, cfg.kernel_hidden, cfg.kernel_channels}, rng),
        gate({cfg.kernel_channels, std::max<Eigen::Index>(1, cfg.kernel_channels / 2), cfg.kernel_channels}, rng),
        project(c_in * cfg.kernel_channels, c_out, rng, /*with_bias=*/false),
        in_channels(c_in) {}

  ad::Tensor forward(ad::Tape& t, const PimGeometry& g, const ad::Tensor& invariants,
                     const ad::Tensor& feats) const {
    if (feats.cols() != in_channels || feats.rows() != g.nn.n) {
      throw ShapeError("rotinv_conv: feature matrix shape does not match layer/geometry");
    }
    ad::Tensor w = kernel.forward(t, invariants);
    ad::Tensor squeeze = t.group_mean(w, g.nn.k);
    ad::Tensor gates = t.sigmoid(gate.forward(t, squeeze));
    w = t.mul(w, t.gather_rows(gates, g.centers));
    ad::Tensor neighbors = t.gather_rows(feats, g.nn.indices);
    // averaged rather than summed, so the activation scale does not grow with k
    ad::Tensor agg = t.scale(t.group_outer_sum(w, neighbors, g.nn.k), 1.0 / static_cast<double>(g.nn.k));
    return t.leaky_relu(project.forward(t, agg));
  }

  void collect(ad::ParameterSet& ps, const std::string& prefix) const {
    kernel.collect(ps, prefix + ".kernel");
    gate.collect(ps, prefix + ".gate");
    project.collect(ps, prefix + ".project");
  }
};

class Pim {
 public:
  Pim() = default;
  Pim(const PimConfig& cfg, ad::Rng& rng) : cfg_(cfg) {
    if (cfg.widths.size() != 5) throw std::invalid_argument("pim: widths must hold the lift width and 4 layer widths");
    lift_ = ad::Linear(kInvariantFeatureCount, cfg.widths[0], rng);
    for (std::size_t i = 0; i < 4; ++i) layers_.emplace_back(cfg.widths[i], cfg.widths[i + 1], cfg, rng);
  }

  const PimConfig& config() const { return cfg_; }
  Eigen::Index out_channels() const { return cfg_.widths.back(); }
  const std::vector<RotInvConvLayer>& layers() const { return layers_; }

  PimGeometry geometry(const Matrix& positions) const {
    return pim_geometry(positions, cfg_.k, cfg_.normalize_scale);
  }

  ad::Tensor forward(ad::Tape& t, const PimGeometry& g) const {
    ad::Tensor inv = ad::Tensor::constant(g.invariants);
    ad::Tensor h = t.leaky_relu(lift_.forward(t, ad::Tensor::constant(g.initial)));
    for (const auto& layer : layers_) h = layer.forward(t, g, inv, h);
    return h;
  }

  ad::Tensor forward(ad::Tape& t, const Matrix& positions) const { return forward(t, geometry(positions)); }

  void collect(ad::ParameterSet& ps, const std::string& prefix) const {
    lift_.collect(ps, prefix + ".lift");
    for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i].collect(ps, prefix + ".layer" + std::to_string(i));
  }

 private:
  PimConfig cfg_;
  ad::Linear lift_;
  std::vector<RotInvConvLayer> layers_;
};

// Ablation stand-in for PIM: a shared point-wise MLP on the centered
// coordinates. Not rotation invariant.
class PointMlpEncoder {
 public:
  PointMlpEncoder() = default;
  PointMlpEncoder(Eigen::Index channels, ad::Rng& rng) : mlp_({3, channels, channels}, rng, true) {}

  ad::Tensor forward(ad::Tape& t, const PimGeometry& g) const {
    return mlp_.forward(t, ad::Tensor::constant(g.normalized));
  }
  void collect(ad::ParameterSet& ps, const std::string& prefix) const { mlp_.collect(ps, prefix); }

 private:
  ad::Mlp mlp_;
};

}  // namespace acrpose
