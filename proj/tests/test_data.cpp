#include "acrpose/dataset_io.hpp"
#include "acrpose/geometry.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <set>
#include <unistd.h>
#include <numbers>

using namespace testing_support;
using namespace acrpose;

namespace fs = std::filesystem;

namespace {

DatasetConfig small_config() {
  DatasetConfig c;
  c.n_train = 9;
  c.n_val = 3;
  c.n_points = 48;
  c.n_prior = 40;
  c.appearance_dim = 5;
  c.model_points = 300;
  c.seed = 11;
  return c;
}

fs::path scratch_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("acrpose_test_data_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  return p;
}

bool in_cube(const Matrix& m, double tol = 1e-12) { return m.cwiseAbs().maxCoeff() <= 0.5 + tol; }

bool same_record(const SampleRecord& a, const SampleRecord& b) {
  return a.observed == b.observed && a.appearance == b.appearance && a.gt_nocs == b.gt_nocs &&
         a.gt_pose.scale == b.gt_pose.scale && a.gt_pose.rotation == b.gt_pose.rotation &&
         a.gt_pose.translation == b.gt_pose.translation && a.category == b.category &&
         a.canonical_model == b.canonical_model;
}

// ----------------------------------------------------------------- shapes

TEST(Shapes, NormalizedInstancesHaveUnitDiagonal) {
  for (Family f : {Family::revolution, Family::box, Family::handled}) {
    CategorySpec cat = build_category(0, f, 64, 5);
    for (std::uint64_t s = 0; s < 10; ++s) {
      Matrix p = sample_instance(cat, s, 200).points;
      Eigen::RowVector3d lo = p.colwise().minCoeff(), hi = p.colwise().maxCoeff();
      EXPECT_NEAR((hi - lo).norm(), 1.0, 1e-9);
      EXPECT_LT((lo + hi).cwiseAbs().maxCoeff(), 1e-12);
      EXPECT_TRUE(in_cube(p));
    }
  }
}

TEST(Shapes, PriorsFitTheCubeAndSymmetryFollowsFamily) {
  for (Family f : {Family::revolution, Family::box, Family::handled}) {
    CategorySpec c = build_category(2, f, 128, 9);
    EXPECT_EQ(c.prior.rows(), 128);
    EXPECT_TRUE(in_cube(c.prior));
    EXPECT_EQ(c.symmetric, f == Family::revolution);
    EXPECT_EQ(c.id, 2);
  }
}

TEST(Shapes, RevolutionInstanceIsYawInvariantAsASet) {
  CategorySpec cat = build_category(0, Family::revolution, 64, 5);
  Matrix p = sample_instance(cat, 3, 4000).points;
  for (double a : {0.3, 1.7, 4.0}) {
    Matrix q = p * Eigen::AngleAxisd(a, Eigen::Vector3d::UnitY()).toRotationMatrix().transpose();
    EXPECT_LT(chamfer_distance(p, q), 1e-3) << a;
  }
}

TEST(Shapes, DistinctSeedsGiveDistinctInstances) {
  for (Family f : {Family::revolution, Family::box, Family::handled}) {
    CategorySpec cat = build_category(0, f, 64, 5);
    Matrix a = sample_instance(cat, 1, 2000).points;
    Matrix b = sample_instance(cat, 2, 2000).points;
    EXPECT_GT(chamfer_distance(a, b), 1e-3) << family_name(f);
  }
}

TEST(Shapes, InvalidRangesAreErrors) {
  EXPECT_THROW(build_category(0, Family::box, {{0.5, 1.0}}, 10, 1), std::invalid_argument);
  EXPECT_THROW(build_category(0, Family::box, {{0.5, 0.4}, {0.3, 0.6}, {0.4, 0.8}}, 10, 1), std::invalid_argument);
  EXPECT_THROW(build_category(0, Family::box, {{-0.5, 0.4}, {0.3, 0.6}, {0.4, 0.8}}, 10, 1), std::invalid_argument);
  EXPECT_THROW(build_category(0, Family::handled, {{0.3, 0.4}, {0.2, 0.3}, {0.15, 0.22}, {0.03, 0.05}}, 10, 1),
               std::invalid_argument);
  EXPECT_THROW(parse_family("sphere"), std::invalid_argument);
}

// -------------------------------------------------------------- observation

TEST(Observe, NoiseFreeObservationIsExactlyThePosedModel) {
  Gen g(200);
  CategorySpec cat = build_category(0, Family::handled, 32, 4);
  for (int i = 0; i < 20; ++i) {
    Matrix model = sample_instance(cat, static_cast<std::uint64_t>(i), 400).points;
    Pose pose;
    pose.rotation = g.rotation();
    pose.scale = g.uniform(0.1, 0.3);
    pose.translation = Eigen::Vector3d(g.uniform(-0.5, 0.5), g.uniform(-0.5, 0.5), g.uniform(0.5, 1.5));
    Eigen::Vector3d view = pose.translation.normalized();
    Observation o = observe(model, pose, &view, 100, 0.0, 7);
    EXPECT_LT((pose.apply(o.gt_nocs) - o.observed).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_EQ(o.observed.rows(), 100);
    EXPECT_TRUE(in_cube(o.gt_nocs));
    // partial: some model points are hidden
    std::set<int> rows(o.source_rows.begin(), o.source_rows.end());
    EXPECT_LT(rows.size(), static_cast<std::size_t>(model.rows()));
  }
}

TEST(Observe, TooFewVisiblePointsIsADegenerateView) {
  Matrix model(6, 3);
  model.setRandom();
  Eigen::Vector3d view(0, 0, 1);
  EXPECT_THROW(observe(model, Pose{}, &view, 10, 0.0, 1), DegenerateViewError);
}

TEST(Observe, ResamplesWithReplacementWhenShort) {
  Gen g(201);
  Matrix model = g.matrix(20, 3, -0.5, 0.5);
  Observation o = observe(model, Pose{}, nullptr, 64, 0.0, 3);
  EXPECT_EQ(o.observed.rows(), 64);
  EXPECT_EQ(o.observed, o.gt_nocs);
}

TEST(Appearance, DependsOnCanonicalIdentityOnly) {
  DatasetConfig c = small_config();
  AppearanceModel am = appearance_model(c);
  Gen g(202);
  Matrix nocs = g.matrix(30, 3, -0.5, 0.5);
  Matrix a = appearance_features(am, nocs, 1, 0.0, 1);
  EXPECT_EQ(a, appearance_features(am, nocs, 1, 0.0, 99));
  EXPECT_NE(a, appearance_features(am, nocs, 2, 0.0, 1));
  EXPECT_EQ(a.cols(), c.appearance_dim);
  EXPECT_THROW(appearance_features(am, nocs, 5, 0.0, 1), std::out_of_range);
}

// ------------------------------------------------------------------ dataset

TEST(Dataset, GroundTruthConsistency) {
  DatasetConfig c = small_config();
  c.noise_sigma = 0.0;
  Dataset ds = generate_dataset(c);
  for (const auto& r : ds.train) {
    EXPECT_LT((r.gt_pose.apply(r.gt_nocs) - r.observed).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_TRUE(in_cube(r.gt_nocs));
    EXPECT_TRUE(r.gt_pose.valid(1e-9));
    EXPECT_GE(r.gt_pose.scale, 0.1);
    EXPECT_LE(r.gt_pose.scale, 0.3);
  }
  c.noise_sigma = 0.002;
  Dataset noisy = generate_dataset(c);
  for (const auto& r : noisy.train) {
    double worst = (r.gt_pose.apply(r.gt_nocs) - r.observed).rowwise().norm().maxCoeff();
    // per-point norm of 3-D Gaussian noise; 3 sigma per axis bounds it loosely
    EXPECT_LE(worst, 3.0 * std::sqrt(3.0) * c.noise_sigma * 1.5);
  }
  for (const auto& cat : ds.categories) EXPECT_TRUE(in_cube(cat.prior));
}

TEST(Dataset, CountsAndCategoriesMatchConfig) {
  DatasetConfig c = small_config();
  Dataset ds = generate_dataset(c);
  EXPECT_EQ(ds.train.size(), 9u);
  EXPECT_EQ(ds.val.size(), 3u);
  EXPECT_EQ(ds.categories.size(), 3u);
  for (std::size_t i = 0; i < ds.train.size(); ++i) EXPECT_EQ(ds.train[i].category, static_cast<int>(i % 3));
  for (const auto& r : ds.val) {
    EXPECT_EQ(r.observed.rows(), c.n_points);
    EXPECT_EQ(r.appearance.cols(), c.appearance_dim);
    EXPECT_EQ(r.canonical_model.rows(), c.model_points);
  }
}

TEST(Dataset, PureFunctionOfConfigAndSeed) {
  DatasetConfig c = small_config();
  Dataset a = generate_dataset(c);
  Dataset b = generate_dataset(c);
  for (std::size_t i = 0; i < a.train.size(); ++i) EXPECT_TRUE(same_record(a.train[i], b.train[i]));
  c.seed += 1;
  Dataset d = generate_dataset(c);
  EXPECT_FALSE(same_record(a.train[0], d.train[0]));
}

// Sample i does not depend on how many samples come after it.
TEST(Dataset, SampleDoesNotDependOnCounts) {
  DatasetConfig c = small_config();
  Dataset a = generate_dataset(c);
  c.n_train = 4;
  c.n_val = 0;
  Dataset b = generate_dataset(c);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_TRUE(same_record(a.train[i], b.train[i]));
}

// ----------------------------------------------------------------------- io

TEST(DatasetIo, RoundTripIsExact) {
  fs::path dir = scratch_dir("roundtrip");
  Dataset ds = generate_stored_dataset(small_config());
  write_dataset(ds, dir);
  Dataset back = read_dataset(dir);
  ASSERT_EQ(back.train.size(), ds.train.size());
  ASSERT_EQ(back.val.size(), ds.val.size());
  for (std::size_t i = 0; i < ds.train.size(); ++i) EXPECT_TRUE(same_record(ds.train[i], back.train[i])) << i;
  for (std::size_t i = 0; i < ds.val.size(); ++i) EXPECT_TRUE(same_record(ds.val[i], back.val[i])) << i;
  for (std::size_t c = 0; c < ds.categories.size(); ++c) {
    EXPECT_EQ(ds.categories[c].prior, back.categories[c].prior);
    EXPECT_EQ(ds.categories[c].symmetric, back.categories[c].symmetric);
    EXPECT_EQ(ds.categories[c].family, back.categories[c].family);
  }
  fs::remove_all(dir);
}

TEST(DatasetIo, ManifestFieldsParseBack) {
  fs::path dir = scratch_dir("manifest");
  DatasetConfig c = small_config();
  c.families = {Family::box, Family::handled};
  c.noise_sigma = 0.0025;
  write_dataset(generate_stored_dataset(c), dir);
  Manifest m = read_manifest(dir);
  EXPECT_EQ(m.n_train, 9u);
  EXPECT_EQ(m.n_val, 3u);
  EXPECT_EQ(m.config.seed, c.seed);
  EXPECT_EQ(m.config.n_points, c.n_points);
  EXPECT_EQ(m.config.n_prior, c.n_prior);
  EXPECT_EQ(m.config.appearance_dim, c.appearance_dim);
  EXPECT_EQ(m.config.model_points, c.model_points);
  EXPECT_EQ(m.config.noise_sigma, c.noise_sigma);
  EXPECT_EQ(m.config.families, c.families);
  EXPECT_EQ(m.symmetric, (std::vector<bool>{false, false}));
  fs::remove_all(dir);
}

std::string file_bytes(const fs::path& p) { return read_text(p); }

TEST(DatasetIo, RegenerationIsByteIdentical) {
  fs::path a = scratch_dir("regen_a"), b = scratch_dir("regen_b");
  write_dataset(generate_stored_dataset(small_config()), a);
  write_dataset(generate_stored_dataset(small_config()), b);
  int files = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    fs::path rel = fs::relative(e.path(), a);
    EXPECT_EQ(file_bytes(e.path()), file_bytes(b / rel)) << rel;
    ++files;
  }
  EXPECT_EQ(files, 1 + 3 + 9 + 3);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(DatasetIo, CorruptFilesAreReportedWithPath) {
  fs::path dir = scratch_dir("corrupt");
  write_dataset(generate_stored_dataset(small_config()), dir);
  fs::path f = dir / "train" / sample_filename(2);
  std::string bytes = file_bytes(f);
  write_text(f, bytes.substr(0, bytes.size() - 7));
  try {
    read_dataset(dir);
    FAIL() << "truncated sample was accepted";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find(f.string()), std::string::npos);
  }
  std::string bumped = bytes;
  bumped[8] = 9;  // version field
  write_text(f, bumped);
  EXPECT_THROW(read_dataset(dir), VersionError);
  write_text(f, "XXXXXXXX" + bytes.substr(8));
  EXPECT_THROW(read_dataset(dir), IoError);
  fs::remove(dir / "manifest");
  EXPECT_THROW(read_dataset(dir), IoError);
  fs::remove_all(dir);
}

TEST(BinaryIo, ScalarsAndStringsRoundTrip) {
  fs::path dir = scratch_dir("binary");
  fs::create_directories(dir);
  const char magic[8] = {'T', 'E', 'S', 'T', 'M', 'A', 'G', 'C'};
  {
    io::Writer w(dir / "x.bin", magic, 3);
    w.u32(0xDEADBEEF);
    w.u64(1ULL << 40);
    w.i32(-5);
    w.f64(0.1);
    w.f32(0.1);
    w.str("hello");
    w.close();
  }
  EXPECT_FALSE(fs::exists(dir / "x.bin.tmp"));
  io::Reader r(dir / "x.bin", magic, 3);
  EXPECT_EQ(r.u32(), 0xDEADBEEFu);
  EXPECT_EQ(r.u64(), 1ULL << 40);
  EXPECT_EQ(r.i32(), -5);
  EXPECT_EQ(r.f64(), 0.1);
  EXPECT_EQ(r.f32(), static_cast<double>(0.1f));
  EXPECT_EQ(r.str(), "hello");
  r.expect_end();
  EXPECT_THROW(io::Reader(dir / "x.bin", magic, 4), VersionError);
  EXPECT_THROW(io::Reader(dir / "missing.bin", magic, 3), IoError);
  fs::remove_all(dir);
}

}  // namespace
