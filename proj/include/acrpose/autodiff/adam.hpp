#pragma once

#include "acrpose/autodiff/tensor.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace acrpose::ad {

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Ordered, named collection of trainable leaves. Order is registration order
// and defines checkpoint layout and optimizer state pairing.
class ParameterSet {
 public:
  struct Entry {
    std::string name;
    Tensor tensor;
  };

  void add(const std::string& name, const Tensor& t) {
    for (const auto& e : entries_) {
      if (e.name == name) throw std::invalid_argument("duplicate parameter name: " + name);
    }
    entries_.push_back({name, t});
  }
  void append(const ParameterSet& other) {
    for (const auto& e : other.entries_) add(e.name, e.tensor);
  }

  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  const Tensor* find(const std::string& name) const {
    for (const auto& e : entries_) {
      if (e.name == name) return &e.tensor;
    }
    return nullptr;
  }

  void zero_grad() {
    for (auto& e : entries_) e.tensor.zero_grad();
  }

  std::vector<Matrix> snapshot() const {
    std::vector<Matrix> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.push_back(e.tensor.value());
    return out;
  }

 private:
  std::vector<Entry> entries_;
};

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Per-parameter first/second moments plus the shared step counter.
struct AdamState {
  AdamConfig config;
  long step = 0;
  std::vector<Matrix> m;
  std::vector<Matrix> v;

  AdamState() = default;
  AdamState(const ParameterSet& params, AdamConfig cfg) : config(cfg) {
    for (const auto& e : params.entries()) {
      m.push_back(Matrix::Zero(e.tensor.rows(), e.tensor.cols()));
      v.push_back(Matrix::Zero(e.tensor.rows(), e.tensor.cols()));
    }
  }
};

// One bias-corrected Adam update of every parameter using its current grad.
// Parameters without an accumulated gradient are treated as zero-gradient.
inline void adam_step(const ParameterSet& params, AdamState& state) {
  if (state.m.size() != params.size()) throw std::logic_error("adam_step: optimizer state not initialized");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& e = params.entries()[i];
    if (e.tensor.has_grad() && !e.tensor.node()->grad.allFinite()) {
      throw NumericError("adam_step: non-finite gradient in parameter '" + e.name + "'");
    }
    if (state.m[i].rows() != e.tensor.rows() || state.m[i].cols() != e.tensor.cols()) {
      throw ShapeError("adam_step: moment shape differs for '" + e.name + "'");
    }
  }
  ++state.step;
  const auto& c = state.config;
  double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& e = params.entries()[i];
    if (!e.tensor.has_grad()) {
      state.m[i] *= c.beta1;
      state.v[i] *= c.beta2;
    } else {
      const Matrix& g = e.tensor.node()->grad;
      state.m[i] = c.beta1 * state.m[i] + (1.0 - c.beta1) * g;
      state.v[i] = c.beta2 * state.v[i] + (1.0 - c.beta2) * g.cwiseAbs2();
    }
    Matrix& w = e.tensor.node()->value;
    w.array() -= c.lr * (state.m[i].array() / bc1) / ((state.v[i].array() / bc2).sqrt() + c.eps);
  }
}

}  // namespace acrpose::ad
