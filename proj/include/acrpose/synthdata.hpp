#pragma once

// Procedural object categories with exact ground truth. Three families stand
// in for real object classes: surfaces of revolution (symmetric about the
// canonical y axis), boxes, and cylinders with a handle.

#include "acrpose/geometry.hpp"
#include "acrpose/pose_solver.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace acrpose {

enum class Family { revolution, box, handled };

inline const char* family_name(Family f) {
  switch (f) {
    case Family::revolution: return "revolution";
    case Family::box: return "box";
    case Family::handled: return "handled";
  }
  return "?";
}

inline Family parse_family(const std::string& s) {
  if (s == "revolution") return Family::revolution;
  if (s == "box") return Family::box;
  if (s == "handled") return Family::handled;
  throw std::invalid_argument("unknown shape family: " + s);
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Seed for item `id` under a base seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t id) { return splitmix64(seed ^ id); }

using ParamRanges = std::vector<std::pair<double, double>>;

// revolution: height, radius at 0, 1/3, 2/3 and 1 of the height
// box:        width, height, depth
// handled:    body radius, body height, handle radius, handle tube radius
inline ParamRanges default_ranges(Family f) {
  switch (f) {
    case Family::revolution: return {{0.8, 1.2}, {0.25, 0.35}, {0.25, 0.35}, {0.10, 0.20}, {0.06, 0.12}};
    case Family::box: return {{0.6, 1.0}, {0.3, 0.6}, {0.4, 0.8}};
    case Family::handled: return {{0.30, 0.40}, {0.6, 0.9}, {0.15, 0.22}, {0.03, 0.05}};
  }
  return {};
}

inline std::size_t family_param_count(Family f) { return default_ranges(f).size(); }

inline void validate_ranges(Family f, const ParamRanges& r) {
  if (r.size() != family_param_count(f)) {
    throw std::invalid_argument(std::string("category ranges: wrong parameter count for family ") + family_name(f));
  }
  for (const auto& [lo, hi] : r) {
    if (!(lo > 0.0) || !(hi >= lo) || !std::isfinite(hi)) {
      throw std::invalid_argument("category ranges: each range needs 0 < lo <= hi");
    }
  }
  if (f == Family::handled) {
    // the handle arc must fit within the body height
    if (r[2].second + r[3].second >= 0.5 * r[1].first) {
      throw std::invalid_argument("category ranges: handle does not fit the body height");
    }
  }
}

// Point on the un-normalized surface for parametric coordinates in [0,1)^3.
inline Eigen::Vector3d surface_point(Family f, const std::vector<double>& p, double u, double v, double w) {
  const double two_pi = 2.0 * std::numbers::pi;
  switch (f) {
    case Family::revolution: {
      const double height = p[0];
      auto radius = [&](double t) {
        double s = std::clamp(t, 0.0, 1.0) * 3.0;
        int seg = std::min(2, static_cast<int>(s));
        double a = s - seg;
        return (1.0 - a) * p[1 + seg] + a * p[2 + seg];
      };
      double th = two_pi * v;
      if (u < 0.8) {
        double t = u / 0.8;
        double r = radius(t);
        return {r * std::cos(th), t * height, r * std::sin(th)};
      }
      bool top = u >= 0.9;
      double r = (top ? p[4] : p[1]) * std::sqrt(w);
      return {r * std::cos(th), top ? height : 0.0, r * std::sin(th)};
    }
    case Family::box: {
      int face = std::min(5, static_cast<int>(u * 6.0));
      Eigen::Vector3d half(0.5 * p[0], 0.5 * p[1], 0.5 * p[2]);
      int axis = face / 2;
      double sign = (face % 2 == 0) ? -1.0 : 1.0;
      Eigen::Vector3d x;
      int a1 = (axis + 1) % 3;
      int a2 = (axis + 2) % 3;
      x(axis) = sign * half(axis);
      x(a1) = (2.0 * v - 1.0) * half(a1);
      x(a2) = (2.0 * w - 1.0) * half(a2);
      return x;
    }
    case Family::handled: {
      const double radius = p[0];
      const double height = p[1];
      double th = two_pi * v;
      if (u < 0.7) {
        double t = u / 0.7;
        return {radius * std::cos(th), t * height, radius * std::sin(th)};
      }
      if (u < 0.8) {
        double r = radius * std::sqrt(w);
        return {r * std::cos(th), 0.0, r * std::sin(th)};
      }
      const double major = p[2];
      const double tube = p[3];
      double phi = -0.5 * std::numbers::pi + std::numbers::pi * v;
      double psi = two_pi * w;
      Eigen::Vector3d center(radius, 0.5 * height, 0.0);
      Eigen::Vector3d dir(std::cos(phi), std::sin(phi), 0.0);
      return center + (major + tube * std::cos(psi)) * dir + Eigen::Vector3d(0.0, 0.0, tube * std::sin(psi));
    }
  }
  return Eigen::Vector3d::Zero();
}

// Centers the bounding box at the origin and scales its diagonal to 1.
inline Matrix normalize_to_nocs(const Matrix& pts) {
  Eigen::RowVector3d lo = pts.colwise().minCoeff();
  Eigen::RowVector3d hi = pts.colwise().maxCoeff();
  double diag = (hi - lo).norm();
  if (!(diag > 0.0)) throw std::invalid_argument("normalize_to_nocs: degenerate extent");
  Matrix out = pts.rowwise() - 0.5 * (lo + hi);
  return out / diag;
}

using UvwPattern = std::vector<std::array<double, 3>>;

inline UvwPattern uvw_pattern(Eigen::Index n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  UvwPattern out(static_cast<std::size_t>(n));
  for (auto& p : out) p = {u(rng), u(rng), u(rng)};
  return out;
}

inline Matrix surface_points(Family f, const std::vector<double>& params, const UvwPattern& pattern) {
  Matrix pts(static_cast<Eigen::Index>(pattern.size()), 3);
  for (std::size_t i = 0; i < pattern.size(); ++i) {
    pts.row(static_cast<Eigen::Index>(i)) = surface_point(f, params, pattern[i][0], pattern[i][1], pattern[i][2]).transpose();
  }
  return pts;
}

struct CategorySpec {
  int id = 0;
  Family family = Family::revolution;
  bool symmetric = true;
  ParamRanges ranges;
  std::uint64_t seed = 0;
  Matrix prior;  // N_c x 3, canonical frame
};

inline std::vector<double> sample_params(const ParamRanges& ranges, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> p;
  for (const auto& [lo, hi] : ranges) p.push_back(lo + (hi - lo) * u(rng));
  return p;
}

inline constexpr int kPriorInstances = 64;

// The prior is the point-wise mean of kPriorInstances normalized instances
// evaluated on one shared parametric pattern, renormalized to the NOCS cube.
inline CategorySpec build_category(int id, Family family, const ParamRanges& ranges, Eigen::Index prior_points,
                                   std::uint64_t seed) {
  validate_ranges(family, ranges);
  if (prior_points < 1) throw std::invalid_argument("build_category: prior_points must be positive");
  CategorySpec c;
  c.id = id;
  c.family = family;
  c.symmetric = family == Family::revolution;
  c.ranges = ranges;
  c.seed = seed;
  UvwPattern pattern = uvw_pattern(prior_points, derive_seed(seed, 0xC0FFEE));
  Matrix acc = Matrix::Zero(prior_points, 3);
  for (int i = 0; i < kPriorInstances; ++i) {
    std::vector<double> p = sample_params(ranges, derive_seed(seed, 1000 + static_cast<std::uint64_t>(i)));
    acc += normalize_to_nocs(surface_points(family, p, pattern));
  }
  c.prior = normalize_to_nocs(acc / static_cast<double>(kPriorInstances));
  return c;
}

inline CategorySpec build_category(int id, Family family, Eigen::Index prior_points, std::uint64_t seed) {
  return build_category(id, family, default_ranges(family), prior_points, seed);
}

struct InstanceModel {
  std::vector<double> params;
  Matrix points;  // M x 3, canonical frame
};

inline InstanceModel sample_instance(const CategorySpec& cat, std::uint64_t seed, Eigen::Index model_points) {
  InstanceModel m;
  m.params = sample_params(cat.ranges, derive_seed(seed, 1));
  m.points = normalize_to_nocs(surface_points(cat.family, m.params, uvw_pattern(model_points, derive_seed(seed, 2))));
  return m;
}

// ---------------------------------------------------------------- observation

class DegenerateViewError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Uniform rotation, translation in a 1 m box in front of the camera, object
// scale in [0.1, 0.3] m.
template <class Rng>
Pose sample_pose(Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Pose p;
  p.rotation = random_rotation(rng);
  p.translation = Eigen::Vector3d(u(rng) - 0.5, u(rng) - 0.5, 0.5 + u(rng));
  p.scale = 0.1 + 0.2 * u(rng);
  return p;
}

struct Observation {
  Matrix observed;  // N_p x 3 camera frame
  Matrix gt_nocs;   // N_p x 3 canonical
  std::vector<int> source_rows;  // model row of each observed point
};

// Visible points are those whose centroid-outward direction faces the camera
// (negative dot product with the viewing direction); view_dir == nullptr
// keeps every point.
inline bool facing_camera(const Eigen::Vector3d& point, const Eigen::Vector3d& centroid, const Eigen::Vector3d& view_dir) {
  return (point - centroid).dot(view_dir) < 0.0;
}

inline Observation observe(const Matrix& model, const Pose& pose, const Eigen::Vector3d* view_dir, Eigen::Index n_points,
                           double noise_sigma, std::uint64_t seed) {
  if (!pose.valid(1e-6)) throw std::invalid_argument("observe: invalid pose");
  Matrix cam = pose.apply(model);
  Eigen::Vector3d centroid = cam.colwise().mean().transpose();
  std::vector<int> visible;
  for (Eigen::Index i = 0; i < cam.rows(); ++i) {
    if (view_dir == nullptr || facing_camera(cam.row(i).transpose(), centroid, *view_dir)) {
      visible.push_back(static_cast<int>(i));
    }
  }
  if (visible.size() < 8) {
    throw DegenerateViewError("observe: only " + std::to_string(visible.size()) + " visible points");
  }
  std::mt19937_64 rng(seed);
  std::vector<int> rows;
  const auto n = static_cast<std::size_t>(n_points);
  if (visible.size() >= n) {
    std::shuffle(visible.begin(), visible.end(), rng);
    rows.assign(visible.begin(), visible.begin() + static_cast<std::ptrdiff_t>(n));
  } else {
    rows = visible;
    std::uniform_int_distribution<std::size_t> pick(0, visible.size() - 1);
    while (rows.size() < n) rows.push_back(visible[pick(rng)]);
  }
  Observation o;
  o.observed.resize(n_points, 3);
  o.gt_nocs.resize(n_points, 3);
  o.source_rows = rows;
  std::normal_distribution<double> noise(0.0, 1.0);
  for (Eigen::Index i = 0; i < n_points; ++i) {
    int r = rows[static_cast<std::size_t>(i)];
    o.gt_nocs.row(i) = model.row(r);
    o.observed.row(i) = cam.row(r);
    if (noise_sigma > 0.0) {
      for (int c = 0; c < 3; ++c) o.observed(i, c) += noise_sigma * noise(rng);
    }
  }
  return o;
}

// ----------------------------------------------------------------- appearance

// Stand-in for per-pixel image features: random Fourier features of the
// canonical coordinate plus a per-category embedding and small noise. Bound
// to canonical identity, so independent of the pose.
struct AppearanceModel {
  Matrix frequencies;  // A x 3
  Eigen::RowVectorXd phases;
  std::vector<Eigen::RowVectorXd> category_embeddings;

  AppearanceModel() = default;
  // Frequency magnitudes are drawn from [freq_lo, freq_hi] * pi.
  AppearanceModel(Eigen::Index dims, int categories, std::uint64_t seed, double freq_lo = 0.5, double freq_hi = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    frequencies.resize(dims, 3);
    phases.resize(dims);
    for (Eigen::Index k = 0; k < dims; ++k) {
      Eigen::Vector3d dir(n(rng), n(rng), n(rng));
      dir.normalize();
      double mag = std::numbers::pi * (freq_lo + (freq_hi - freq_lo) * u(rng));
      frequencies.row(k) = mag * dir.transpose();
      phases(k) = 2.0 * std::numbers::pi * u(rng);
    }
    for (int c = 0; c < categories; ++c) {
      Eigen::RowVectorXd e(dims);
      for (Eigen::Index k = 0; k < dims; ++k) e(k) = u(rng) - 0.5;
      category_embeddings.push_back(e);
    }
  }

  Eigen::Index dims() const { return frequencies.rows(); }
};

inline Matrix appearance_features(const AppearanceModel& am, const Matrix& nocs, int category, double noise_sigma,
                                  std::uint64_t seed) {
  if (category < 0 || static_cast<std::size_t>(category) >= am.category_embeddings.size()) {
    throw std::out_of_range("appearance_features: unknown category " + std::to_string(category));
  }
  Matrix out = nocs * am.frequencies.transpose();
  out.rowwise() += am.phases;
  out = out.array().sin().matrix();
  out.rowwise() += am.category_embeddings[static_cast<std::size_t>(category)];
  if (noise_sigma > 0.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, noise_sigma);
    for (Eigen::Index i = 0; i < out.size(); ++i) out.data()[i] += n(rng);
  }
  return out;
}

// ------------------------------------------------------------------- samples

struct SampleRecord {
  Matrix observed;         // N_p x 3, camera frame, meters
  Matrix appearance;       // N_p x A
  Matrix gt_nocs;          // N_p x 3
  Pose gt_pose;
  int category = 0;
  Matrix canonical_model;  // M x 3
};

struct DatasetConfig {
  int n_train = 600;
  int n_val = 100;
  Eigen::Index n_points = 256;
  Eigen::Index n_prior = 256;
  Eigen::Index appearance_dim = 16;
  Eigen::Index model_points = 1024;
  double noise_sigma = 0.001;       // meters
  double appearance_noise = 0.02;
  double appearance_freq_lo = 0.5;  // multiples of pi
  double appearance_freq_hi = 1.0;
  std::vector<Family> families = {Family::revolution, Family::box, Family::handled};
  std::uint64_t seed = 7;
};

struct Dataset {
  DatasetConfig config;
  std::vector<CategorySpec> categories;
  std::vector<SampleRecord> train;
  std::vector<SampleRecord> val;

  bool symmetric(int category) const { return categories.at(static_cast<std::size_t>(category)).symmetric; }
};

inline std::vector<CategorySpec> build_categories(const DatasetConfig& cfg) {
  std::vector<CategorySpec> out;
  for (std::size_t i = 0; i < cfg.families.size(); ++i) {
    out.push_back(build_category(static_cast<int>(i), cfg.families[i], cfg.n_prior, derive_seed(cfg.seed, 0xCA7 + i)));
  }
  return out;
}

inline AppearanceModel appearance_model(const DatasetConfig& cfg) {
  return AppearanceModel(cfg.appearance_dim, static_cast<int>(cfg.families.size()), derive_seed(cfg.seed, 0xA99),
                         cfg.appearance_freq_lo, cfg.appearance_freq_hi);
}

// Sample `id` is a pure function of (config, id). Views that leave too few
// visible points are redrawn.
inline SampleRecord generate_sample(const DatasetConfig& cfg, const std::vector<CategorySpec>& cats,
                                    const AppearanceModel& am, std::uint64_t id) {
  std::uint64_t s = derive_seed(cfg.seed, 0x5A3B1E00ULL + id);
  std::mt19937_64 rng(s);
  SampleRecord r;
  r.category = static_cast<int>(id % cats.size());
  const CategorySpec& cat = cats[static_cast<std::size_t>(r.category)];
  InstanceModel inst = sample_instance(cat, rng(), cfg.model_points);
  r.canonical_model = inst.points;
  for (int attempt = 0;; ++attempt) {
    r.gt_pose = sample_pose(rng);
    Eigen::Vector3d view = r.gt_pose.translation.normalized();
    try {
      Observation o = observe(inst.points, r.gt_pose, &view, cfg.n_points, cfg.noise_sigma, rng());
      r.observed = std::move(o.observed);
      r.gt_nocs = std::move(o.gt_nocs);
      break;
    } catch (const DegenerateViewError&) {
      if (attempt > 16) throw;
    }
  }
  r.appearance = appearance_features(am, r.gt_nocs, r.category, cfg.appearance_noise, rng());
  return r;
}

inline Dataset generate_dataset(const DatasetConfig& cfg) {
  if (cfg.n_train < 0 || cfg.n_val < 0) throw std::invalid_argument("generate_dataset: negative sample count");
  if (cfg.families.empty()) throw std::invalid_argument("generate_dataset: no categories");
  Dataset ds;
  ds.config = cfg;
  ds.categories = build_categories(cfg);
  AppearanceModel am = appearance_model(cfg);
  for (int i = 0; i < cfg.n_train + cfg.n_val; ++i) {
    SampleRecord r = generate_sample(cfg, ds.categories, am, static_cast<std::uint64_t>(i));
    (i < cfg.n_train ? ds.train : ds.val).push_back(std::move(r));
  }
  return ds;
}

}  // namespace acrpose
