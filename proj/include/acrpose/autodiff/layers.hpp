#pragma once

#include "acrpose/autodiff/adam.hpp"
#include "acrpose/autodiff/tape.hpp"

#include <cmath>
#include <random>
#include <string>
#include <vector>

namespace acrpose::ad {

using Rng = std::mt19937_64;

inline Matrix uniform_matrix(Eigen::Index rows, Eigen::Index cols, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

// x * W + b with W: in x out, b: 1 x out. Weights use He-uniform
// initialization for leaky ReLU(0.2), bound sqrt(6 / ((1 + 0.2^2) in)), which
// keeps activation scale roughly constant through deep stacks; biases are
// uniform in +-1/sqrt(in).
inline double he_bound(Eigen::Index in, double slope = 0.2) {
  return std::sqrt(6.0 / ((1.0 + slope * slope) * static_cast<double>(in)));
}

struct Linear {
  Tensor weight;
  Tensor bias;  // undefined when the layer has no bias

  Linear() = default;
  Linear(Eigen::Index in, Eigen::Index out, Rng& rng, bool with_bias = true) {
    weight = Tensor::parameter(uniform_matrix(in, out, he_bound(in), rng));
    if (with_bias) bias = Tensor::parameter(uniform_matrix(1, out, 1.0 / std::sqrt(static_cast<double>(in)), rng));
  }

  Eigen::Index in_features() const { return weight.rows(); }
  Eigen::Index out_features() const { return weight.cols(); }

  Tensor forward(Tape& t, const Tensor& x) const {
    Tensor y = t.matmul(x, weight);
    if (bias.defined()) y = t.add(y, t.broadcast_row(bias, x.rows()));
    return y;
  }

  void collect(ParameterSet& ps, const std::string& prefix) const {
    ps.add(prefix + ".weight", weight);
    if (bias.defined()) ps.add(prefix + ".bias", bias);
  }
};

// Stack of Linear layers with leaky ReLU between them. The last layer is
// linear unless `activate_last` is set.
struct Mlp {
  std::vector<Linear> layers;
  bool activate_last = false;
  double slope = 0.2;

  Mlp() = default;
  Mlp(const std::vector<Eigen::Index>& widths, Rng& rng, bool activate_last_layer = false)
      : activate_last(activate_last_layer) {
    if (widths.size() < 2) throw std::invalid_argument("Mlp: need at least input and output width");
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) layers.emplace_back(widths[i], widths[i + 1], rng);
  }

  Eigen::Index in_features() const { return layers.front().in_features(); }
  Eigen::Index out_features() const { return layers.back().out_features(); }

  Tensor forward(Tape& t, const Tensor& x) const {
    if (x.cols() != in_features()) {
      throw ShapeError("Mlp: expected " + std::to_string(in_features()) + " input columns, got " +
                       std::to_string(x.cols()));
    }
    Tensor h = x;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      h = layers[i].forward(t, h);
      if (i + 1 < layers.size() || activate_last) h = t.leaky_relu(h, slope);
    }
    return h;
  }

  void collect(ParameterSet& ps, const std::string& prefix) const {
    for (std::size_t i = 0; i < layers.size(); ++i) layers[i].collect(ps, prefix + "." + std::to_string(i));
  }
};

}  // namespace acrpose::ad
