#pragma once

// Pose accuracy metrics: rotation/translation errors with symmetry handling,
// oriented-box IoU, threshold accuracies, accuracy-vs-threshold curves and
// chamfer reconstruction quality.

#include "acrpose/geometry.hpp"
#include "acrpose/pose_solver.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace acrpose {

inline void check_rotation(const Eigen::Matrix3d& r, const char* what) {
  double ortho = (r.transpose() * r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  if (!(ortho < 1e-6) || !(std::abs(r.determinant() - 1.0) < 1e-6)) {
    throw std::invalid_argument(std::string(what) + ": not a rotation matrix");
  }
}

// Geodesic angle in degrees. For symmetric objects (revolution about the
// canonical y axis) only the mapped symmetry axes are compared.
inline double rotation_error(const Eigen::Matrix3d& pred, const Eigen::Matrix3d& gt, bool symmetric) {
  check_rotation(pred, "rotation_error(pred)");
  check_rotation(gt, "rotation_error(gt)");
  double rad = 0.0;
  if (symmetric) {
    Eigen::Vector3d a = pred.col(1);
    Eigen::Vector3d b = gt.col(1);
    rad = std::atan2(a.cross(b).norm(), std::clamp(a.dot(b), -1.0, 1.0));
  } else {
    Eigen::Quaterniond q(Eigen::Matrix3d(pred.transpose() * gt));
    rad = 2.0 * std::atan2(q.vec().norm(), std::abs(q.w()));
  }
  return std::clamp(rad * 180.0 / std::numbers::pi, 0.0, 180.0);
}

inline double translation_error(const Eigen::Vector3d& pred, const Eigen::Vector3d& gt) { return (pred - gt).norm(); }

struct PoseError {
  double rot_deg = 0.0;
  double trans = 0.0;
};

// ------------------------------------------------------------------------ IoU

struct OrientedBox {
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d half = Eigen::Vector3d::Constant(0.5);

  // Canonical box centered at the canonical origin, mapped by the pose.
  static OrientedBox from_pose(const Pose& p, const Eigen::Vector3d& metric_size) {
    return {p.translation, p.rotation, 0.5 * metric_size};
  }

  double volume() const { return 8.0 * half.prod(); }

  bool contains(const Eigen::Vector3d& x) const {
    Eigen::Vector3d local = rotation.transpose() * (x - center);
    return (local.cwiseAbs().array() <= half.array()).all();
  }

  std::array<Eigen::Vector3d, 8> corners() const {
    std::array<Eigen::Vector3d, 8> out;
    for (int i = 0; i < 8; ++i) {
      Eigen::Vector3d s((i & 1) ? 1.0 : -1.0, (i & 2) ? 1.0 : -1.0, (i & 4) ? 1.0 : -1.0);
      out[static_cast<std::size_t>(i)] = center + rotation * s.cwiseProduct(half);
    }
    return out;
  }
};

// Monte Carlo IoU over the axis-aligned bound of both boxes; exact when both
// boxes share a rotation.
inline double iou3d(const OrientedBox& a, const OrientedBox& b, int samples = 100000, std::uint64_t seed = 0) {
  if (!(a.volume() > 0.0) || !(b.volume() > 0.0)) throw std::invalid_argument("iou3d: zero-volume box");
  if ((a.rotation - b.rotation).cwiseAbs().maxCoeff() < 1e-12) {
    Eigen::Vector3d d = a.rotation.transpose() * (b.center - a.center);
    Eigen::Vector3d lo = (-a.half).cwiseMax(d - b.half);
    Eigen::Vector3d hi = a.half.cwiseMin(d + b.half);
    Eigen::Vector3d overlap = (hi - lo).cwiseMax(0.0);
    double inter = overlap.prod();
    return inter / (a.volume() + b.volume() - inter);
  }
  if (samples <= 0) throw std::invalid_argument("iou3d: samples must be positive");
  Eigen::Vector3d lo = Eigen::Vector3d::Constant(std::numeric_limits<double>::infinity());
  Eigen::Vector3d hi = -lo;
  for (const auto* box : {&a, &b}) {
    for (const auto& c : box->corners()) {
      lo = lo.cwiseMin(c);
      hi = hi.cwiseMax(c);
    }
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  long both = 0;
  long either = 0;
  for (int i = 0; i < samples; ++i) {
    Eigen::Vector3d x(lo.x() + (hi.x() - lo.x()) * u(rng), lo.y() + (hi.y() - lo.y()) * u(rng),
                      lo.z() + (hi.z() - lo.z()) * u(rng));
    bool in_a = a.contains(x);
    bool in_b = b.contains(x);
    both += (in_a && in_b) ? 1 : 0;
    either += (in_a || in_b) ? 1 : 0;
  }
  return either == 0 ? 0.0 : static_cast<double>(both) / static_cast<double>(either);
}

// ------------------------------------------------------------------ accuracy

struct EvalResult {
  PoseError error;
  double iou = 0.0;
  int category = 0;
  double chamfer = 0.0;
};

// Conjunctive threshold: rot <= max_rot_deg AND trans <= max_trans AND iou >= min_iou.
struct Threshold {
  std::string name;
  double max_rot_deg = std::numeric_limits<double>::infinity();
  double max_trans = std::numeric_limits<double>::infinity();
  double min_iou = 0.0;

  bool passes(const EvalResult& r) const {
    return r.error.rot_deg <= max_rot_deg && r.error.trans <= max_trans && r.iou >= min_iou;
  }
};

// IoU50, IoU75, 5deg2cm, 5deg5cm, 10deg2cm, 10deg5cm; `meter` is the
// translation unit (1.0 when translations are in meters).
inline std::vector<Threshold> standard_thresholds(double meter = 1.0) {
  const double inf = std::numeric_limits<double>::infinity();
  return {
      {"IoU50", inf, inf, 0.5},
      {"IoU75", inf, inf, 0.75},
      {"5deg2cm", 5.0, 0.02 * meter, 0.0},
      {"5deg5cm", 5.0, 0.05 * meter, 0.0},
      {"10deg2cm", 10.0, 0.02 * meter, 0.0},
      {"10deg5cm", 10.0, 0.05 * meter, 0.0},
  };
}

inline double threshold_accuracy(const std::vector<EvalResult>& results, const Threshold& th) {
  if (results.empty()) throw std::invalid_argument("threshold_accuracy: empty result set");
  long hits = 0;
  for (const auto& r : results) hits += th.passes(r) ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(results.size());
}

enum class CurveMetric { iou, rot, trans };

inline const char* curve_metric_name(CurveMetric m) {
  switch (m) {
    case CurveMetric::iou: return "iou";
    case CurveMetric::rot: return "rot";
    case CurveMetric::trans: return "trans";
  }
  return "?";
}

struct CurvePoint {
  double threshold = 0.0;
  double accuracy = 0.0;
};

// Accuracy at each grid threshold for a single metric: iou >= thr, or
// rot/trans <= thr.
inline std::vector<CurvePoint> ap_curve(const std::vector<EvalResult>& results, CurveMetric metric,
                                        const std::vector<double>& grid) {
  if (!std::is_sorted(grid.begin(), grid.end())) throw std::invalid_argument("ap_curve: grid must be ascending");
  std::vector<CurvePoint> out;
  out.reserve(grid.size());
  for (double thr : grid) {
    Threshold th{curve_metric_name(metric)};
    switch (metric) {
      case CurveMetric::iou: th.min_iou = thr; break;
      case CurveMetric::rot: th.max_rot_deg = thr; break;
      case CurveMetric::trans: th.max_trans = thr; break;
    }
    out.push_back({thr, results.empty() ? 0.0 : threshold_accuracy(results, th)});
  }
  return out;
}

// Mean chamfer distance per category over paired clouds.
inline std::map<int, double> recon_quality(const std::vector<Matrix>& predicted, const std::vector<Matrix>& reference,
                                           const std::vector<int>& categories) {
  if (predicted.size() != reference.size() || predicted.size() != categories.size()) {
    throw std::invalid_argument("recon_quality: input lengths differ");
  }
  std::map<int, double> sum;
  std::map<int, int> count;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    sum[categories[i]] += chamfer_distance(predicted[i], reference[i]);
    count[categories[i]] += 1;
  }
  for (auto& [cat, s] : sum) s /= static_cast<double>(count[cat]);
  return sum;
}

// -------------------------------------------------------------------- report

struct MetricReport {
  std::vector<std::pair<std::string, double>> accuracies;
  std::map<std::string, std::vector<CurvePoint>> curves;
  std::map<int, double> chamfer;

  double accuracy(const std::string& name) const {
    for (const auto& [n, v] : accuracies) {
      if (n == name) return v;
    }
    throw std::out_of_range("MetricReport: no accuracy named " + name);
  }

  std::string table() const {
    std::ostringstream os;
    os << std::fixed << std::setprecision(1);
    for (const auto& [n, v] : accuracies) os << std::setw(10) << n;
    os << "\n";
    for (const auto& [n, v] : accuracies) os << std::setw(10) << 100.0 * v;
    os << "\n";
    os << std::setprecision(6);
    for (const auto& [cat, cd] : chamfer) os << "chamfer[category " << cat << "] = " << cd << "\n";
    return os.str();
  }

  // Plot-ready CSV with columns metric, threshold, accuracy.
  std::string csv() const {
    std::ostringstream os;
    os << std::setprecision(17);
    os << "metric,threshold,accuracy\n";
    for (const auto& [name, curve] : curves) {
      for (const auto& p : curve) os << name << "," << p.threshold << "," << p.accuracy << "\n";
    }
    return os.str();
  }

  static std::map<std::string, std::vector<CurvePoint>> parse_csv(const std::string& text) {
    std::map<std::string, std::vector<CurvePoint>> out;
    std::istringstream is(text);
    std::string line;
    if (!std::getline(is, line) || line != "metric,threshold,accuracy") {
      throw std::runtime_error("curve csv: missing header");
    }
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      auto c1 = line.find(',');
      auto c2 = line.find(',', c1 + 1);
      if (c1 == std::string::npos || c2 == std::string::npos) throw std::runtime_error("curve csv: bad line: " + line);
      out[line.substr(0, c1)].push_back({std::stod(line.substr(c1 + 1, c2 - c1 - 1)), std::stod(line.substr(c2 + 1))});
    }
    return out;
  }
};

struct CurveGrids {
  std::vector<double> iou;
  std::vector<double> rot;
  std::vector<double> trans;

  static CurveGrids standard(double meter = 1.0) {
    CurveGrids g;
    for (int i = 0; i <= 20; ++i) g.iou.push_back(0.05 * i);
    for (int i = 0; i <= 60; ++i) g.rot.push_back(1.0 * i);
    for (int i = 0; i <= 50; ++i) g.trans.push_back(0.002 * i * meter);
    return g;
  }
};

inline MetricReport build_report(const std::vector<EvalResult>& results, const CurveGrids& grids, double meter = 1.0) {
  MetricReport rep;
  for (const auto& th : standard_thresholds(meter)) rep.accuracies.emplace_back(th.name, threshold_accuracy(results, th));
  rep.curves["iou"] = ap_curve(results, CurveMetric::iou, grids.iou);
  rep.curves["rot"] = ap_curve(results, CurveMetric::rot, grids.rot);
  rep.curves["trans"] = ap_curve(results, CurveMetric::trans, grids.trans);
  std::map<int, double> sum;
  std::map<int, int> count;
  for (const auto& r : results) {
    sum[r.category] += r.chamfer;
    count[r.category] += 1;
  }
  for (auto& [cat, s] : sum) rep.chamfer[cat] = s / static_cast<double>(count[cat]);
  return rep;
}

}  // namespace acrpose
