#pragma once

// Relational reconstruction: three feature-space graph branches that fuse
// point geometry, appearance and the category prior.

#include "acrpose/autodiff/layers.hpp"
#include "acrpose/geometry.hpp"

#include <string>

namespace acrpose {

// Edge MLP on [f_i, f_j - f_i] followed by a per-channel max over the k
// feature-space neighbors of each node.
struct EdgeConvLayer {
  ad::Linear edge;  // 2*C_in -> C_out
  double slope = 0.2;

  EdgeConvLayer() = default;
  EdgeConvLayer(Eigen::Index c_in, Eigen::Index c_out, ad::Rng& rng) : edge(2 * c_in, c_out, rng) {}

  ad::Tensor forward(ad::Tape& t, const ad::Tensor& feats, Eigen::Index k) const {
    if (feats.cols() * 2 != edge.in_features()) throw ShapeError("edge_conv: feature width does not match layer");
    NeighborIndex nn = knn(feats.value(), k, NeighborMetric::feature_space);
    return forward(t, feats, nn);
  }

  ad::Tensor forward(ad::Tape& t, const ad::Tensor& feats, const NeighborIndex& nn) const {
    std::vector<int> centers = nn.centers();
    ad::Tensor fi = t.gather_rows(feats, centers);
    ad::Tensor fj = t.gather_rows(feats, nn.indices);
    ad::Tensor e = t.concat_cols(fi, t.sub(fj, fi));
    return t.group_max(t.leaky_relu(edge.forward(t, e), slope), nn.k);
  }

  void collect(ad::ParameterSet& ps, const std::string& prefix) const { edge.collect(ps, prefix + ".edge"); }
};

struct RrmConfig {
  Eigen::Index channels = 16;  // C
  Eigen::Index k = 8;
  Eigen::Index appearance_dim = 16;
  bool use_instance_branch = true;
  bool use_deformation_branch = true;
  bool use_assignment_branch = true;
};

struct RelationalFeatures {
  ad::Tensor f_ins;  // N_p x 2C
  ad::Tensor f_d;    // N_c x C
  ad::Tensor f_a;    // N_p x C
  ad::Tensor v_ins;  // 1 x C
  ad::Tensor v_c;    // 1 x C
  ad::Tensor f_c;    // N_c x C, prior features
};

class Rrm {
 public:
  Rrm() = default;
  Rrm(const RrmConfig& cfg, ad::Rng& rng) : cfg_(cfg) {
    const Eigen::Index c = cfg.channels;
    appearance_encoder_ = ad::Mlp({cfg.appearance_dim, c, c}, rng, true);
    prior_encoder_ = ad::Mlp({3, c, c}, rng, true);
    instance_down_ = ad::Mlp({2 * c, c}, rng, true);
    instance_edge_ = EdgeConvLayer(c, c, rng);
    instance_up_ = ad::Mlp({c, 2 * c}, rng, true);
    embed_instance_ = ad::Mlp({2 * c, c}, rng, true);
    embed_prior_ = ad::Mlp({c, c}, rng, true);
    deformation_reduce_ = ad::Mlp({3 * c, c}, rng, true);
    deformation_edge_ = EdgeConvLayer(c, c, rng);
    assignment_reduce_ = ad::Mlp({4 * c, c}, rng, true);
    assignment_edge_ = EdgeConvLayer(c, c, rng);
  }

  const RrmConfig& config() const { return cfg_; }

  ad::Tensor encode_appearance(ad::Tape& t, const ad::Tensor& appearance) const {
    return appearance_encoder_.forward(t, appearance);
  }
  ad::Tensor encode_prior(ad::Tape& t, const ad::Tensor& prior) const { return prior_encoder_.forward(t, prior); }

  // [f_P | f_app] -> C -> graph -> 2C
  ad::Tensor instance_branch(ad::Tape& t, const ad::Tensor& f_p, const ad::Tensor& f_app) const {
    ad::Tensor h = instance_down_.forward(t, t.concat_cols(f_p, f_app));
    if (cfg_.use_instance_branch) h = instance_edge_.forward(t, h, cfg_.k);
    return instance_up_.forward(t, h);
  }

  // Row MLP then average over rows.
  static ad::Tensor global_embed(ad::Tape& t, const ad::Mlp& mlp, const ad::Tensor& f) {
    return t.mean_rows(mlp.forward(t, f));
  }
  ad::Tensor embed_instance(ad::Tape& t, const ad::Tensor& f_ins) const { return global_embed(t, embed_instance_, f_ins); }
  ad::Tensor embed_prior(ad::Tape& t, const ad::Tensor& f_c) const { return global_embed(t, embed_prior_, f_c); }

  ad::Tensor deformation_branch(ad::Tape& t, const ad::Tensor& f_c, const ad::Tensor& v_ins,
                                const ad::Tensor& v_c) const {
    const Eigen::Index n = f_c.rows();
    ad::Tensor h = deformation_reduce_.forward(
        t, t.concat_cols({f_c, t.broadcast_row(v_ins, n), t.broadcast_row(v_c, n)}));
    if (cfg_.use_deformation_branch) h = deformation_edge_.forward(t, h, cfg_.k);
    return h;
  }

  ad::Tensor assignment_branch(ad::Tape& t, const ad::Tensor& f_ins, const ad::Tensor& v_ins,
                               const ad::Tensor& v_c) const {
    const Eigen::Index n = f_ins.rows();
    ad::Tensor h = assignment_reduce_.forward(
        t, t.concat_cols({f_ins, t.broadcast_row(v_ins, n), t.broadcast_row(v_c, n)}));
    if (cfg_.use_assignment_branch) h = assignment_edge_.forward(t, h, cfg_.k);
    return h;
  }

  RelationalFeatures forward(ad::Tape& t, const ad::Tensor& f_p, const ad::Tensor& appearance,
                             const ad::Tensor& prior) const {
    RelationalFeatures out;
    ad::Tensor f_app = encode_appearance(t, appearance);
    out.f_c = encode_prior(t, prior);
    out.f_ins = instance_branch(t, f_p, f_app);
    out.v_ins = embed_instance(t, out.f_ins);
    out.v_c = embed_prior(t, out.f_c);
    out.f_d = deformation_branch(t, out.f_c, out.v_ins, out.v_c);
    out.f_a = assignment_branch(t, out.f_ins, out.v_ins, out.v_c);
    return out;
  }

  // Graph layers of disabled branches are not registered, so ablation
  // configurations carry distinct parameter sets.
  void collect(ad::ParameterSet& ps, const std::string& prefix) const {
    appearance_encoder_.collect(ps, prefix + ".appearance");
    prior_encoder_.collect(ps, prefix + ".prior");
    instance_down_.collect(ps, prefix + ".instance.down");
    if (cfg_.use_instance_branch) instance_edge_.collect(ps, prefix + ".instance.graph");
    instance_up_.collect(ps, prefix + ".instance.up");
    embed_instance_.collect(ps, prefix + ".embed_instance");
    embed_prior_.collect(ps, prefix + ".embed_prior");
    deformation_reduce_.collect(ps, prefix + ".deformation.reduce");
    if (cfg_.use_deformation_branch) deformation_edge_.collect(ps, prefix + ".deformation.graph");
    assignment_reduce_.collect(ps, prefix + ".assignment.reduce");
    if (cfg_.use_assignment_branch) assignment_edge_.collect(ps, prefix + ".assignment.graph");
  }

 private:
  RrmConfig cfg_;
  ad::Mlp appearance_encoder_;
  ad::Mlp prior_encoder_;
  ad::Mlp instance_down_;
  EdgeConvLayer instance_edge_;
  ad::Mlp instance_up_;
  ad::Mlp embed_instance_;
  ad::Mlp embed_prior_;
  ad::Mlp deformation_reduce_;
  EdgeConvLayer deformation_edge_;
  ad::Mlp assignment_reduce_;
  EdgeConvLayer assignment_edge_;
};

}  // namespace acrpose
