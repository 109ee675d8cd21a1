#pragma once

// Discriminator, the six loss terms, and the alternating
// discriminator/reconstructor update.

#include "acrpose/geometry.hpp"
#include "acrpose/reconstructor.hpp"

#include <array>
#include <cmath>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace acrpose {

// Point-wise MLP, global max pool, two fully connected layers, sigmoid.
class Discriminator {
 public:
  Discriminator() = default;
  Discriminator(Eigen::Index hidden, std::uint64_t seed) {
    ad::Rng rng(seed);
    point_mlp_ = ad::Mlp({3, hidden, hidden}, rng, true);
    fc1_ = ad::Linear(hidden, std::max<Eigen::Index>(1, hidden / 2), rng);
    fc2_ = ad::Linear(std::max<Eigen::Index>(1, hidden / 2), 1, rng);
    point_mlp_.collect(params_, "disc.point_mlp");
    fc1_.collect(params_, "disc.fc1");
    fc2_.collect(params_, "disc.fc2");
  }

  const ad::ParameterSet& parameters() const { return params_; }
  ad::ParameterSet& parameters() { return params_; }

  ad::Tensor forward(ad::Tape& t, const ad::Tensor& cloud) const {
    if (cloud.rows() < 1 || cloud.cols() != 3) throw ShapeError("discriminate: expected N x 3 cloud with N >= 1");
    ad::Tensor pooled = t.group_max(point_mlp_.forward(t, cloud), cloud.rows());
    ad::Tensor h = t.leaky_relu(fc1_.forward(t, pooled));
    return t.sigmoid(fc2_.forward(t, h));
  }

  double operator()(const Matrix& cloud) const {
    ad::Tape t(false);
    return forward(t, ad::Tensor::constant(cloud)).item();
  }

 private:
  ad::Mlp point_mlp_;
  ad::Linear fc1_;
  ad::Linear fc2_;
  ad::ParameterSet params_;
};

// --------------------------------------------------------------------- losses

struct LossWeights {
  std::array<double, 6> gamma = {0.1, 0.1, 1.0, 5.0, 0.0001, 0.01};
  double d() const { return gamma[0]; }
  double g() const { return gamma[1]; }
  double corr() const { return gamma[2]; }
  double cd() const { return gamma[3]; }
  double entro() const { return gamma[4]; }
  double reg() const { return gamma[5]; }
};

inline constexpr std::array<const char*, 6> kLossTermNames = {"L_d", "L_g", "L_corr", "L_cd", "L_entro", "L_reg"};

// Per-term values in objective order: d, g, corr, cd, entro, reg.
struct LossParts {
  std::array<double, 6> values{};
};

// (D(real) - 1)^2 + D(fake)^2, with the fake detached from its producer.
inline ad::Tensor loss_d(ad::Tape& t, const Discriminator& d, const ad::Tensor& fake, const ad::Tensor& real) {
  ad::Tensor real_term = t.square(t.add_scalar(d.forward(t, real), -1.0));
  ad::Tensor fake_term = t.square(d.forward(t, t.detach(fake)));
  return t.add(real_term, fake_term);
}

// (D(fake) - 1)^2; gradients reach the fake's producer.
inline ad::Tensor loss_g_adv(ad::Tape& t, const Discriminator& d, const ad::Tensor& fake) {
  return t.square(t.add_scalar(d.forward(t, fake), -1.0));
}

inline ad::Tensor loss_corr(ad::Tape& t, const ad::Tensor& pred, const ad::Tensor& gt, double delta = 1.0) {
  return t.mean(t.smooth_l1(t.sub(pred, gt), delta));
}

// Mean Shannon entropy of the assignment rows.
inline ad::Tensor loss_entro(ad::Tape& t, const ad::Tensor& assignment) {
  ad::Tensor plogp = t.sum(t.mul(assignment, t.log_clamped(assignment, 1e-12)));
  return t.scale(plogp, -1.0 / static_cast<double>(assignment.rows()));
}

inline ad::Tensor loss_reg(ad::Tape& t, const ad::Tensor& deformation) { return t.mean(t.square(deformation)); }

inline ad::Tensor loss_cd(ad::Tape& t, const ad::Tensor& deformed, const ad::Tensor& model) {
  return chamfer_distance(t, deformed, model);
}

inline double total_loss(const LossParts& parts, const LossWeights& w) {
  double total = 0.0;
  for (std::size_t i = 0; i < 6; ++i) {
    if (!std::isfinite(parts.values[i])) {
      throw ad::NumericError(std::string("total_loss: non-finite value in term ") + kLossTermNames[i]);
    }
    total += w.gamma[i] * parts.values[i];
  }
  return total;
}

// ------------------------------------------------------------------- training

// One preprocessed training instance. `geometry` is precomputed from the
// observed points so repeated epochs skip the 3-D neighborhood search.
struct TrainingExample {
  PimGeometry geometry;
  Matrix appearance;
  Matrix gt_nocs;
  Matrix canonical_model;
  std::shared_ptr<const Matrix> prior;
};

struct LrSchedule {
  double reconstructor_lr = 1e-4;
  double discriminator_lr = 1e-5;
  std::vector<int> decay_epochs = {10, 30, 40};
  std::vector<double> decay_factors = {0.5, 0.1, 0.01};

  // Multiplier on the initial rate at `epoch` (0-based).
  double factor(int epoch) const {
    double f = 1.0;
    for (std::size_t i = 0; i < decay_epochs.size() && i < decay_factors.size(); ++i) {
      if (epoch >= decay_epochs[i]) f = decay_factors[i];
    }
    return f;
  }
};

struct TrainOptions {
  LossWeights weights;
  double smooth_l1_delta = 1.0;
  bool adversarial = true;
};

struct TrainState {
  Reconstructor reconstructor;
  Discriminator discriminator;
  ad::AdamState reconstructor_opt;
  ad::AdamState discriminator_opt;
  LrSchedule schedule;
  TrainOptions options;
  long step = 0;
  int epoch = 0;

  TrainState(const ModelConfig& cfg, const LrSchedule& sched, const TrainOptions& opts, std::uint64_t seed)
      : reconstructor(cfg, seed),
        discriminator(cfg.disc_hidden, seed ^ 0x9e3779b97f4a7c15ULL),
        reconstructor_opt(reconstructor.parameters(), ad::AdamConfig{sched.reconstructor_lr}),
        discriminator_opt(discriminator.parameters(), ad::AdamConfig{sched.discriminator_lr}),
        schedule(sched),
        options(opts) {}

  void set_epoch(int e) {
    epoch = e;
    double f = schedule.factor(e);
    reconstructor_opt.config.lr = schedule.reconstructor_lr * f;
    discriminator_opt.config.lr = schedule.discriminator_lr * f;
  }
};

struct StepMetrics {
  long step = 0;
  LossParts parts;
  double total = 0.0;  // full weighted objective, all six terms
};

inline void check_finite(double v, const char* term) {
  if (!std::isfinite(v)) throw ad::NumericError(std::string("non-finite loss term ") + term);
}

// Mean L_d over the batch, then one Adam step on the discriminator only.
inline double discriminator_step(TrainState& s, std::span<const Matrix> fakes, std::span<const Matrix> reals) {
  if (fakes.empty() || fakes.size() != reals.size()) throw std::invalid_argument("discriminator_step: bad batch");
  auto& dparams = s.discriminator.parameters();
  dparams.zero_grad();
  ad::Tape t;
  ad::Tensor acc;
  for (std::size_t b = 0; b < fakes.size(); ++b) {
    ad::Tensor l = loss_d(t, s.discriminator, ad::Tensor::constant(fakes[b]), ad::Tensor::constant(reals[b]));
    check_finite(l.item(), "L_d");
    acc = acc.defined() ? t.add(acc, l) : l;
  }
  ad::Tensor mean = t.scale(acc, 1.0 / static_cast<double>(fakes.size()));
  t.backward(mean);
  ad::adam_step(dparams, s.discriminator_opt);
  return mean.item();
}

// Alternating update: discriminator on detached fakes from a single
// reconstructor forward, then the reconstructor on
// g*L_g + corr*L_corr + cd*L_cd + entro*L_entro + reg*L_reg.
inline StepMetrics train_step(TrainState& s, std::span<const TrainingExample* const> batch) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  const LossWeights& w = s.options.weights;
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  auto& rparams = s.reconstructor.parameters();
  auto& dparams = s.discriminator.parameters();

  ad::Tape rt;
  std::vector<ReconstructorOutputs> outs;
  outs.reserve(batch.size());
  for (const TrainingExample* ex : batch) {
    outs.push_back(s.reconstructor.forward(rt, ex->geometry, ex->appearance, *ex->prior));
  }

  StepMetrics m;
  std::vector<Matrix> fakes;
  std::vector<Matrix> reals;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    fakes.push_back(outs[b].nocs.value());
    reals.push_back(batch[b]->gt_nocs);
  }
  if (s.options.adversarial) {
    m.parts.values[0] = discriminator_step(s, fakes, reals);
  } else {
    ad::Tape probe(false);
    double acc = 0.0;
    for (std::size_t b = 0; b < batch.size(); ++b) {
      acc += loss_d(probe, s.discriminator, ad::Tensor::constant(fakes[b]), ad::Tensor::constant(reals[b])).item();
    }
    m.parts.values[0] = acc * inv_b;
  }

  rparams.zero_grad();
  const bool with_g = s.options.adversarial && w.g() != 0.0;
  ad::Tensor objective;
  std::array<double, 6> sums{};
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& o = outs[b];
    const TrainingExample& ex = *batch[b];
    ad::Tensor lg;
    if (with_g) {
      lg = loss_g_adv(rt, s.discriminator, o.nocs);
    } else {
      ad::Tape probe(false);
      lg = loss_g_adv(probe, s.discriminator, ad::Tensor::constant(o.nocs.value()));
    }
    ad::Tensor lcorr = loss_corr(rt, o.nocs, ad::Tensor::constant(ex.gt_nocs), s.options.smooth_l1_delta);
    ad::Tensor lcd = loss_cd(rt, o.deformed, ad::Tensor::constant(ex.canonical_model));
    ad::Tensor lent = loss_entro(rt, o.assignment);
    ad::Tensor lreg = loss_reg(rt, o.deformation);
    const std::array<const ad::Tensor*, 5> terms = {&lg, &lcorr, &lcd, &lent, &lreg};
    for (std::size_t i = 0; i < terms.size(); ++i) {
      check_finite(terms[i]->item(), kLossTermNames[i + 1]);
      sums[i + 1] += terms[i]->item();
    }
    ad::Tensor sample = rt.add(rt.add(rt.add(rt.scale(lcorr, w.corr()), rt.scale(lcd, w.cd())),
                                      rt.scale(lent, w.entro())),
                               rt.scale(lreg, w.reg()));
    if (with_g) sample = rt.add(rt.scale(lg, w.g()), sample);
    objective = objective.defined() ? rt.add(objective, sample) : sample;
  }
  objective = rt.scale(objective, inv_b);
  rt.backward(objective);
  dparams.zero_grad();
  ad::adam_step(rparams, s.reconstructor_opt);

  for (std::size_t i = 1; i < 6; ++i) m.parts.values[i] = sums[i] * inv_b;
  m.total = total_loss(m.parts, w);
  m.step = ++s.step;
  return m;
}

}  // namespace acrpose
