#pragma once

#include "acrpose/autodiff/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace acrpose::ad {

class TapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Records differentiable operations in execution order and replays their
// adjoints in exact reverse order on `backward`. A tape built with
// `recording == false` only evaluates forward values (inference).
//
// No implicit broadcasting: every shape coercion is an explicit op.
class Tape {
 public:
  using Backward = std::function<void(const Matrix& out_grad)>;

  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }
  std::size_t size() const { return entries_.size(); }

  // Creates an output tensor and, when any parent needs a gradient, records
  // `backward` which must push the output adjoint into the parents via
  // `accumulate`. Public so other modules can add fused ops.
  Tensor record(Matrix value, std::initializer_list<Tensor> parents, Backward backward) {
    Tensor out = Tensor::constant(std::move(value));
    bool needs = false;
    for (const auto& p : parents) needs = needs || p.requires_grad();
    if (recording_ && needs) {
      out.node_->requires_grad = true;
      entries_.push_back({out.node_, std::move(backward)});
      consumed_ = false;
    }
    return out;
  }

  static void accumulate(const Tensor& t, const Matrix& g) { t.node()->accumulate(g); }

  void backward(const Tensor& loss) {
    if (loss.rows() != 1 || loss.cols() != 1) {
      throw ShapeError("backward: loss must be 1x1, got " + std::to_string(loss.rows()) + "x" +
                       std::to_string(loss.cols()));
    }
    if (consumed_) throw TapeError("backward: tape already consumed; record a new forward pass");
    if (!recording_) throw TapeError("backward: tape was created without recording");
    consumed_ = true;
    if (!loss.requires_grad()) {
      entries_.clear();
      return;
    }
    loss.node()->accumulate(Matrix::Ones(1, 1));
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
      const Node& out = *it->output;
      if (out.grad.size() == 0) continue;
      it->backward(out.grad);
    }
    entries_.clear();
  }

  // ---------------------------------------------------------------- linear algebra

  Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows()) {
      throw ShapeError("matmul: inner dimensions differ (" + dims(a) + " * " + dims(b) + ")");
    }
    Matrix v = a.value() * b.value();
    return record(std::move(v), {a, b}, [a, b](const Matrix& g) {
      if (a.requires_grad()) accumulate(a, g * b.value().transpose());
      if (b.requires_grad()) accumulate(b, a.value().transpose() * g);
    });
  }

  Tensor transpose(const Tensor& a) {
    return record(a.value().transpose(), {a},
                  [a](const Matrix& g) { accumulate(a, g.transpose()); });
  }

  Tensor add(const Tensor& a, const Tensor& b) {
    same_shape("add", a, b);
    return record(a.value() + b.value(), {a, b}, [a, b](const Matrix& g) {
      accumulate(a, g);
      accumulate(b, g);
    });
  }

  Tensor sub(const Tensor& a, const Tensor& b) {
    same_shape("sub", a, b);
    return record(a.value() - b.value(), {a, b}, [a, b](const Matrix& g) {
      accumulate(a, g);
      if (b.requires_grad()) accumulate(b, -g);
    });
  }

  Tensor mul(const Tensor& a, const Tensor& b) {
    same_shape("mul", a, b);
    Matrix v = a.value().cwiseProduct(b.value());
    return record(std::move(v), {a, b}, [a, b](const Matrix& g) {
      if (a.requires_grad()) accumulate(a, g.cwiseProduct(b.value()));
      if (b.requires_grad()) accumulate(b, g.cwiseProduct(a.value()));
    });
  }

  Tensor scale(const Tensor& a, double c) {
    return record(a.value() * c, {a}, [a, c](const Matrix& g) { accumulate(a, g * c); });
  }

  Tensor add_scalar(const Tensor& a, double c) {
    Matrix v = a.value().array() + c;
    return record(std::move(v), {a}, [a](const Matrix& g) { accumulate(a, g); });
  }

  // 1xC -> nxC by repeating the row.
  Tensor broadcast_row(const Tensor& v, Eigen::Index n) {
    if (v.rows() != 1) throw ShapeError("broadcast_row: expected a 1xC row, got " + dims(v));
    Matrix out = v.value().replicate(n, 1);
    return record(std::move(out), {v},
                  [v](const Matrix& g) { accumulate(v, g.colwise().sum()); });
  }

  // --------------------------------------------------------------- elementwise

  Tensor relu(const Tensor& x) { return leaky_relu(x, 0.0); }

  Tensor leaky_relu(const Tensor& x, double slope = 0.2) {
    Matrix v = x.value().unaryExpr([slope](double e) { return e > 0.0 ? e : slope * e; });
    return record(std::move(v), {x}, [x, slope](const Matrix& g) {
      Matrix d = x.value().unaryExpr([slope](double e) { return e > 0.0 ? 1.0 : slope; });
      accumulate(x, g.cwiseProduct(d));
    });
  }

  Tensor sigmoid(const Tensor& x) {
    Matrix v = x.value().unaryExpr([](double e) {
      return e >= 0.0 ? 1.0 / (1.0 + std::exp(-e)) : std::exp(e) / (1.0 + std::exp(e));
    });
    Matrix y = v;
    return record(std::move(v), {x}, [x, y = std::move(y)](const Matrix& g) {
      accumulate(x, g.cwiseProduct(y.cwiseProduct((1.0 - y.array()).matrix())));
    });
  }

  Tensor square(const Tensor& x) {
    Matrix v = x.value().cwiseAbs2();
    return record(std::move(v), {x},
                  [x](const Matrix& g) { accumulate(x, 2.0 * g.cwiseProduct(x.value())); });
  }

  // log(max(x, floor)); the gradient is zero where the clamp is active.
  Tensor log_clamped(const Tensor& x, double floor = 1e-12) {
    Matrix v = x.value().unaryExpr([floor](double e) { return std::log(std::max(e, floor)); });
    return record(std::move(v), {x}, [x, floor](const Matrix& g) {
      Matrix d = x.value().unaryExpr([floor](double e) { return e > floor ? 1.0 / e : 0.0; });
      accumulate(x, g.cwiseProduct(d));
    });
  }

  // Quadratic 0.5*x^2/delta below delta, linear |x| - 0.5*delta above.
  Tensor smooth_l1(const Tensor& x, double delta = 1.0) {
    Matrix v = x.value().unaryExpr([delta](double e) {
      double a = std::abs(e);
      return a < delta ? 0.5 * e * e / delta : a - 0.5 * delta;
    });
    return record(std::move(v), {x}, [x, delta](const Matrix& g) {
      Matrix d = x.value().unaryExpr([delta](double e) {
        if (std::abs(e) < delta) return e / delta;
        return e > 0.0 ? 1.0 : -1.0;
      });
      accumulate(x, g.cwiseProduct(d));
    });
  }

  // Row-wise softmax, max-shifted for stability.
  Tensor softmax_rows(const Tensor& x) {
    Matrix y(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      double m = x.value().row(r).maxCoeff();
      y.row(r) = (x.value().row(r).array() - m).exp();
      y.row(r) /= y.row(r).sum();
    }
    Matrix keep = y;
    return record(std::move(y), {x}, [x, y = std::move(keep)](const Matrix& g) {
      Matrix gx(y.rows(), y.cols());
      for (Eigen::Index r = 0; r < y.rows(); ++r) {
        double dot = g.row(r).dot(y.row(r));
        gx.row(r) = y.row(r).cwiseProduct((g.row(r).array() - dot).matrix());
      }
      accumulate(x, gx);
    });
  }

  // ----------------------------------------------------------------- structure

  Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no inputs");
    Eigen::Index n = parts.front().rows();
    Eigen::Index total = 0;
    for (const auto& p : parts) {
      if (p.rows() != n) throw ShapeError("concat_cols: row counts differ");
      total += p.cols();
    }
    Matrix v(n, total);
    Eigen::Index off = 0;
    for (const auto& p : parts) {
      v.middleCols(off, p.cols()) = p.value();
      off += p.cols();
    }
    Tensor out = Tensor::constant(std::move(v));
    bool needs = std::any_of(parts.begin(), parts.end(), [](const Tensor& p) { return p.requires_grad(); });
    if (recording_ && needs) {
      out.node_->requires_grad = true;
      entries_.push_back({out.node_, [parts](const Matrix& g) {
                            Eigen::Index o = 0;
                            for (const auto& p : parts) {
                              if (p.requires_grad()) accumulate(p, g.middleCols(o, p.cols()));
                              o += p.cols();
                            }
                          }});
      consumed_ = false;
    }
    return out;
  }

  Tensor concat_cols(const Tensor& a, const Tensor& b) { return concat_cols(std::vector<Tensor>{a, b}); }

  // out.row(r) = x.row(index[r]); backward scatter-adds.
  Tensor gather_rows(const Tensor& x, std::span<const int> index) {
    Matrix v(static_cast<Eigen::Index>(index.size()), x.cols());
    for (std::size_t r = 0; r < index.size(); ++r) {
      int i = index[r];
      if (i < 0 || i >= x.rows()) {
        throw std::out_of_range("gather_rows: index " + std::to_string(i) + " out of range for " +
                                std::to_string(x.rows()) + " rows");
      }
      v.row(static_cast<Eigen::Index>(r)) = x.value().row(i);
    }
    std::vector<int> idx(index.begin(), index.end());
    return record(std::move(v), {x}, [x, idx = std::move(idx)](const Matrix& g) {
      Matrix gx = Matrix::Zero(x.rows(), x.cols());
      for (std::size_t r = 0; r < idx.size(); ++r) gx.row(idx[r]) += g.row(static_cast<Eigen::Index>(r));
      accumulate(x, gx);
    });
  }

  Tensor slice_cols(const Tensor& x, Eigen::Index start, Eigen::Index count) {
    if (start < 0 || count < 0 || start + count > x.cols()) throw ShapeError("slice_cols: out of range");
    Matrix v = x.value().middleCols(start, count);
    return record(std::move(v), {x}, [x, start, count](const Matrix& g) {
      Matrix gx = Matrix::Zero(x.rows(), x.cols());
      gx.middleCols(start, count) = g;
      accumulate(x, gx);
    });
  }

  // ---------------------------------------------------------------- reductions

  Tensor sum(const Tensor& x) {
    Matrix v(1, 1);
    v(0, 0) = x.value().sum();
    return record(std::move(v), {x}, [x](const Matrix& g) {
      accumulate(x, Matrix::Constant(x.rows(), x.cols(), g(0, 0)));
    });
  }

  Tensor mean(const Tensor& x) {
    return scale(sum(x), 1.0 / static_cast<double>(x.value().size()));
  }

  // Average of the rows: NxC -> 1xC.
  Tensor mean_rows(const Tensor& x) {
    Matrix v = x.value().colwise().mean();
    return record(std::move(v), {x}, [x](const Matrix& g) {
      accumulate(x, (g / static_cast<double>(x.rows())).replicate(x.rows(), 1));
    });
  }

  // Maximum within each row: NxC -> Nx1. Ties go to the first column.
  Tensor max_rows(const Tensor& x) {
    std::vector<Eigen::Index> arg(static_cast<std::size_t>(x.rows()));
    Matrix v(x.rows(), 1);
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      Eigen::Index best = 0;
      for (Eigen::Index c = 1; c < x.cols(); ++c) {
        if (x.value()(r, c) > x.value()(r, best)) best = c;
      }
      arg[static_cast<std::size_t>(r)] = best;
      v(r, 0) = x.value()(r, best);
    }
    return record(std::move(v), {x}, [x, arg = std::move(arg)](const Matrix& g) {
      Matrix gx = Matrix::Zero(x.rows(), x.cols());
      for (Eigen::Index r = 0; r < x.rows(); ++r) gx(r, arg[static_cast<std::size_t>(r)]) = g(r, 0);
      accumulate(x, gx);
    });
  }

  // Maximum over consecutive blocks of `group` rows: (N*group)xC -> NxC.
  // group == rows gives global max pooling. Ties go to the first row.
  Tensor group_max(const Tensor& x, Eigen::Index group) {
    if (group <= 0 || x.rows() % group != 0) throw ShapeError("group_max: rows not divisible by group");
    Eigen::Index n = x.rows() / group;
    Eigen::Index c = x.cols();
    Matrix v(n, c);
    std::vector<Eigen::Index> arg(static_cast<std::size_t>(n * c));
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index ch = 0; ch < c; ++ch) {
        Eigen::Index best = i * group;
        for (Eigen::Index r = best + 1; r < (i + 1) * group; ++r) {
          if (x.value()(r, ch) > x.value()(best, ch)) best = r;
        }
        arg[static_cast<std::size_t>(i * c + ch)] = best;
        v(i, ch) = x.value()(best, ch);
      }
    }
    return record(std::move(v), {x}, [x, n, c, arg = std::move(arg)](const Matrix& g) {
      Matrix gx = Matrix::Zero(x.rows(), c);
      for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index ch = 0; ch < c; ++ch) gx(arg[static_cast<std::size_t>(i * c + ch)], ch) += g(i, ch);
      }
      accumulate(x, gx);
    });
  }

  // Mean over consecutive blocks of `group` rows: (N*group)xC -> NxC.
  Tensor group_mean(const Tensor& x, Eigen::Index group) {
    if (group <= 0 || x.rows() % group != 0) throw ShapeError("group_mean: rows not divisible by group");
    Eigen::Index n = x.rows() / group;
    Matrix v(n, x.cols());
    for (Eigen::Index i = 0; i < n; ++i) v.row(i) = x.value().middleRows(i * group, group).colwise().mean();
    return record(std::move(v), {x}, [x, n, group](const Matrix& g) {
      Matrix gx(x.rows(), x.cols());
      for (Eigen::Index i = 0; i < n; ++i) {
        gx.middleRows(i * group, group) = (g.row(i) / static_cast<double>(group)).replicate(group, 1);
      }
      accumulate(x, gx);
    });
  }

  // Per-group outer-product aggregation. With weights W of shape (N*K)xM and
  // features F of shape (N*K)xC, row i of the result is vec(F_i^T W_i), the
  // CxM matrix sum_j f_ij (x) w_ij flattened row-major (index c*M + m).
  Tensor group_outer_sum(const Tensor& weights, const Tensor& feats, Eigen::Index group) {
    if (weights.rows() != feats.rows()) throw ShapeError("group_outer_sum: row counts differ");
    if (group <= 0 || weights.rows() % group != 0) throw ShapeError("group_outer_sum: rows not divisible by group");
    Eigen::Index n = weights.rows() / group;
    Eigen::Index m = weights.cols();
    Eigen::Index c = feats.cols();
    Matrix v(n, c * m);
    for (Eigen::Index i = 0; i < n; ++i) {
      Matrix block = feats.value().middleRows(i * group, group).transpose() *
                     weights.value().middleRows(i * group, group);
      v.row(i) = Eigen::Map<const Eigen::RowVectorXd>(block.data(), c * m);
    }
    return record(std::move(v), {weights, feats}, [weights, feats, n, m, c, group](const Matrix& g) {
      Matrix gw(weights.rows(), m);
      Matrix gf(feats.rows(), c);
      for (Eigen::Index i = 0; i < n; ++i) {
        Eigen::Map<const Matrix> gi(g.row(i).data(), c, m);
        gw.middleRows(i * group, group) = feats.value().middleRows(i * group, group) * gi;
        gf.middleRows(i * group, group) = weights.value().middleRows(i * group, group) * gi.transpose();
      }
      if (weights.requires_grad()) accumulate(weights, gw);
      if (feats.requires_grad()) accumulate(feats, gf);
    });
  }

  // Copy that does not propagate gradients.
  Tensor detach(const Tensor& x) { return Tensor::constant(x.value()); }

 private:
  struct Entry {
    std::shared_ptr<Node> output;
    Backward backward;
  };

  static std::string dims(const Tensor& t) {
    return std::to_string(t.rows()) + "x" + std::to_string(t.cols());
  }
  static void same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
      throw ShapeError(std::string(op) + ": shapes differ (" + dims(a) + " vs " + dims(b) + ")");
    }
  }

  bool recording_;
  bool consumed_ = false;
  std::vector<Entry> entries_;
};

}  // namespace acrpose::ad
