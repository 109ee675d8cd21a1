#pragma once

#include "acrpose/pim.hpp"
#include "acrpose/rrm.hpp"
#include "acrpose/spd.hpp"

#include <cstdint>

namespace acrpose {

struct ModelConfig {
  Eigen::Index n_points = 256;   // N_p
  Eigen::Index n_prior = 256;    // N_c
  Eigen::Index channels = 16;    // C
  Eigen::Index k = 8;            // feature-graph and PIM neighborhood size
  Eigen::Index kernel_channels = 8;  // C_mid
  Eigen::Index appearance_dim = 16;  // A
  Eigen::Index head_hidden = 64;
  Eigen::Index disc_hidden = 32;
  bool use_pim = true;
  bool use_instance_branch = true;
  bool use_deformation_branch = true;
  bool use_assignment_branch = true;
  bool use_adversarial = true;

  PimConfig pim() const {
    PimConfig p;
    p.k = k;
    p.kernel_channels = kernel_channels;
    p.kernel_hidden = 2 * kernel_channels;
    p.widths = {channels, channels, channels, channels, channels};
    return p;
  }
  RrmConfig rrm() const {
    return {channels, k, appearance_dim, use_instance_branch, use_deformation_branch, use_assignment_branch};
  }
  SpdConfig spd() const { return {channels, head_hidden, n_prior}; }
};

struct ReconstructorOutputs {
  ad::Tensor nocs;         // P_nocs, N_p x 3
  ad::Tensor deformation;  // M_d
  ad::Tensor assignment;   // M_a
  ad::Tensor deformed;     // P_c + M_d
};

class Reconstructor {
 public:
  Reconstructor() = default;
  Reconstructor(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    ad::Rng rng(seed);
    // Every submodule is built regardless of the ablation flags so shared
    // layers get identical initial weights across configurations.
    pim_ = Pim(cfg.pim(), rng);
    point_mlp_ = PointMlpEncoder(cfg.channels, rng);
    rrm_ = Rrm(cfg.rrm(), rng);
    spd_ = ShapePriorDeformation(cfg.spd(), rng);
    if (cfg.use_pim) {
      pim_.collect(params_, "pim");
    } else {
      point_mlp_.collect(params_, "point_mlp");
    }
    rrm_.collect(params_, "rrm");
    spd_.collect(params_, "spd");
  }

  const ModelConfig& config() const { return cfg_; }
  const ad::ParameterSet& parameters() const { return params_; }
  ad::ParameterSet& parameters() { return params_; }
  const Pim& pim() const { return pim_; }
  const Rrm& rrm() const { return rrm_; }
  ShapePriorDeformation& spd() { return spd_; }

  PimGeometry geometry(const Matrix& observed) const {
    const PimConfig p = cfg_.pim();
    return pim_geometry(observed, p.k, p.normalize_scale);
  }

  ReconstructorOutputs forward(ad::Tape& t, const PimGeometry& g, const Matrix& appearance,
                               const Matrix& prior) const {
    if (appearance.rows() != g.nn.n) throw ShapeError("reconstructor: appearance rows differ from observed points");
    if (prior.rows() != cfg_.n_prior || prior.cols() != 3) throw ShapeError("reconstructor: prior must be N_c x 3");
    ad::Tensor f_p = cfg_.use_pim ? pim_.forward(t, g) : point_mlp_.forward(t, g);
    ad::Tensor prior_t = ad::Tensor::constant(prior);
    RelationalFeatures rel = rrm_.forward(t, f_p, ad::Tensor::constant(appearance), prior_t);
    DeformationOutputs d{spd_.predict_deformation(t, rel.f_d), spd_.predict_assignment(t, rel.f_a)};
    ReconstructorOutputs out;
    out.deformation = d.deformation;
    out.assignment = d.assignment;
    out.nocs = reconstruct_nocs(t, prior_t, d);
    out.deformed = t.add(prior_t, d.deformation);
    return out;
  }

 private:
  ModelConfig cfg_;
  Pim pim_;
  PointMlpEncoder point_mlp_;
  Rrm rrm_;
  ShapePriorDeformation spd_;
  ad::ParameterSet params_;
};

}  // namespace acrpose
