#pragma once

// On-disk dataset: a `manifest` (INI text) plus little-endian f32 binaries,
// one per sample under train/ and val/, and one per category prior.

#include "acrpose/binary_io.hpp"
#include "acrpose/synthdata.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>

namespace acrpose {

inline constexpr std::uint32_t kDatasetFormatVersion = 1;
inline constexpr char kSampleMagic[8] = {'A', 'C', 'R', 'S', 'M', 'P', 'L', '\0'};
inline constexpr char kPriorMagic[8] = {'A', 'C', 'R', 'P', 'R', 'I', 'O', 'R'};

namespace fs = std::filesystem;

inline std::string sample_filename(std::size_t index) {
  std::ostringstream os;
  os << std::setw(6) << std::setfill('0') << index << ".bin";
  return os.str();
}

inline std::string prior_filename(int category) { return "prior_" + std::to_string(category) + ".bin"; }

// Rounds every stored field to f32 so the in-memory record equals what a
// reader gets back from disk.
inline void round_to_f32(SampleRecord& r) {
  for (Matrix* m : {&r.observed, &r.appearance, &r.gt_nocs, &r.canonical_model}) *m = io::round_f32(*m);
  r.gt_pose.scale = io::round_f32(r.gt_pose.scale);
  r.gt_pose.rotation = r.gt_pose.rotation.unaryExpr([](double v) { return io::round_f32(v); }).eval();
  r.gt_pose.translation = r.gt_pose.translation.unaryExpr([](double v) { return io::round_f32(v); }).eval();
}

// generate_dataset with every stored quantity rounded to f32.
inline Dataset generate_stored_dataset(const DatasetConfig& cfg) {
  Dataset ds = generate_dataset(cfg);
  for (auto& c : ds.categories) c.prior = io::round_f32(c.prior);
  for (auto* split : {&ds.train, &ds.val}) {
    for (auto& r : *split) round_to_f32(r);
  }
  return ds;
}

inline void write_sample(const fs::path& path, const SampleRecord& r) {
  io::Writer w(path, kSampleMagic, kDatasetFormatVersion);
  w.matrix(r.observed);
  w.matrix(r.appearance);
  w.matrix(r.gt_nocs);
  w.f32(r.gt_pose.scale);
  for (Eigen::Index i = 0; i < 3; ++i) {
    for (Eigen::Index j = 0; j < 3; ++j) w.f32(r.gt_pose.rotation(i, j));
  }
  for (Eigen::Index i = 0; i < 3; ++i) w.f32(r.gt_pose.translation(i));
  w.i32(r.category);
  w.matrix(r.canonical_model);
  w.close();
}

inline SampleRecord read_sample(const fs::path& path, Eigen::Index n_points, Eigen::Index appearance_dim,
                                Eigen::Index model_points) {
  io::Reader rd(path, kSampleMagic, kDatasetFormatVersion);
  SampleRecord r;
  r.observed = rd.matrix(n_points, 3);
  r.appearance = rd.matrix(n_points, appearance_dim);
  r.gt_nocs = rd.matrix(n_points, 3);
  r.gt_pose.scale = rd.f32();
  for (Eigen::Index i = 0; i < 3; ++i) {
    for (Eigen::Index j = 0; j < 3; ++j) r.gt_pose.rotation(i, j) = rd.f32();
  }
  for (Eigen::Index i = 0; i < 3; ++i) r.gt_pose.translation(i) = rd.f32();
  r.category = rd.i32();
  r.canonical_model = rd.matrix(model_points, 3);
  rd.expect_end();
  return r;
}

inline std::string manifest_text(const Dataset& ds) {
  const DatasetConfig& c = ds.config;
  std::ostringstream os;
  os << std::setprecision(17);
  os << "[dataset]\n";
  os << "format_version = " << kDatasetFormatVersion << "\n";
  os << "seed = " << c.seed << "\n";
  os << "n_train = " << ds.train.size() << "\n";
  os << "n_val = " << ds.val.size() << "\n";
  os << "n_points = " << c.n_points << "\n";
  os << "n_prior = " << c.n_prior << "\n";
  os << "appearance_dim = " << c.appearance_dim << "\n";
  os << "model_points = " << c.model_points << "\n";
  os << "noise_sigma = " << c.noise_sigma << "\n";
  os << "appearance_noise = " << c.appearance_noise << "\n";
  os << "appearance_freq_lo = " << c.appearance_freq_lo << "\n";
  os << "appearance_freq_hi = " << c.appearance_freq_hi << "\n";
  os << "categories = " << ds.categories.size() << "\n";
  for (const auto& cat : ds.categories) {
    os << "\n[category" << cat.id << "]\n";
    os << "family = " << family_name(cat.family) << "\n";
    os << "symmetric = " << (cat.symmetric ? "true" : "false") << "\n";
    os << "prior = " << prior_filename(cat.id) << "\n";
  }
  return os.str();
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f << text;
  if (!f) throw IoError("write failed: " + path.string());
}

inline std::string read_text(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

inline void write_dataset(const Dataset& ds, const fs::path& dir) {
  std::error_code ec;
  for (const auto& sub : {dir, dir / "train", dir / "val"}) {
    fs::create_directories(sub, ec);
    if (ec) throw IoError("cannot create " + sub.string() + ": " + ec.message());
  }
  write_text(dir / "manifest", manifest_text(ds));
  for (const auto& cat : ds.categories) {
    io::Writer w(dir / prior_filename(cat.id), kPriorMagic, kDatasetFormatVersion);
    w.i32(static_cast<std::int32_t>(cat.prior.rows()));
    w.matrix(cat.prior);
    w.close();
  }
  for (std::size_t i = 0; i < ds.train.size(); ++i) write_sample(dir / "train" / sample_filename(i), ds.train[i]);
  for (std::size_t i = 0; i < ds.val.size(); ++i) write_sample(dir / "val" / sample_filename(i), ds.val[i]);
}

struct Manifest {
  DatasetConfig config;
  std::size_t n_train = 0;
  std::size_t n_val = 0;
  std::vector<bool> symmetric;
};

inline Manifest read_manifest(const fs::path& dir) {
  const fs::path path = dir / "manifest";
  boost::property_tree::ptree tree;
  std::istringstream is(read_text(path));
  try {
    boost::property_tree::read_ini(is, tree);
    Manifest m;
    auto version = tree.get<std::uint32_t>("dataset.format_version");
    if (version != kDatasetFormatVersion) {
      throw IoError(path.string() + ": format version " + std::to_string(version) + ", expected " +
                    std::to_string(kDatasetFormatVersion));
    }
    DatasetConfig& c = m.config;
    c.seed = tree.get<std::uint64_t>("dataset.seed");
    m.n_train = tree.get<std::size_t>("dataset.n_train");
    m.n_val = tree.get<std::size_t>("dataset.n_val");
    c.n_train = static_cast<int>(m.n_train);
    c.n_val = static_cast<int>(m.n_val);
    c.n_points = tree.get<Eigen::Index>("dataset.n_points");
    c.n_prior = tree.get<Eigen::Index>("dataset.n_prior");
    c.appearance_dim = tree.get<Eigen::Index>("dataset.appearance_dim");
    c.model_points = tree.get<Eigen::Index>("dataset.model_points");
    c.noise_sigma = tree.get<double>("dataset.noise_sigma");
    c.appearance_noise = tree.get<double>("dataset.appearance_noise");
    c.appearance_freq_lo = tree.get<double>("dataset.appearance_freq_lo");
    c.appearance_freq_hi = tree.get<double>("dataset.appearance_freq_hi");
    auto ncat = tree.get<int>("dataset.categories");
    c.families.clear();
    for (int i = 0; i < ncat; ++i) {
      std::string sec = "category" + std::to_string(i);
      c.families.push_back(parse_family(tree.get<std::string>(sec + ".family")));
      m.symmetric.push_back(tree.get<std::string>(sec + ".symmetric") == "true");
    }
    return m;
  } catch (const boost::property_tree::ptree_error& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

// Reads everything back. Category parameter ranges are rebuilt from the
// family defaults; the prior comes from disk.
inline Dataset read_dataset(const fs::path& dir) {
  Manifest m = read_manifest(dir);
  Dataset ds;
  ds.config = m.config;
  for (std::size_t i = 0; i < m.config.families.size(); ++i) {
    CategorySpec cat;
    cat.id = static_cast<int>(i);
    cat.family = m.config.families[i];
    cat.symmetric = m.symmetric[i];
    cat.ranges = default_ranges(cat.family);
    io::Reader rd(dir / prior_filename(cat.id), kPriorMagic, kDatasetFormatVersion);
    auto rows = rd.i32();
    if (rows != m.config.n_prior) {
      throw IoError((dir / prior_filename(cat.id)).string() + ": prior has " + std::to_string(rows) + " rows, manifest says " +
                    std::to_string(m.config.n_prior));
    }
    cat.prior = rd.matrix(rows, 3);
    rd.expect_end();
    ds.categories.push_back(std::move(cat));
  }
  const auto& c = m.config;
  for (std::size_t i = 0; i < m.n_train; ++i) {
    ds.train.push_back(read_sample(dir / "train" / sample_filename(i), c.n_points, c.appearance_dim, c.model_points));
  }
  for (std::size_t i = 0; i < m.n_val; ++i) {
    ds.val.push_back(read_sample(dir / "val" / sample_filename(i), c.n_points, c.appearance_dim, c.model_points));
  }
  for (const auto* split : {&ds.train, &ds.val}) {
    for (const auto& r : *split) {
      if (r.category < 0 || static_cast<std::size_t>(r.category) >= ds.categories.size()) {
        throw IoError(dir.string() + ": sample with unknown category " + std::to_string(r.category));
      }
    }
  }
  return ds;
}

}  // namespace acrpose
