#pragma once

// Versioned checkpoints: config snapshot, named f32 parameter tensors for
// both networks, Adam moments and the epoch/step counters.

#include "acrpose/adversarial.hpp"
#include "acrpose/binary_io.hpp"
#include "acrpose/config.hpp"

#include <cstdio>
#include <filesystem>
#include <string>
#include <unistd.h>
#include <vector>

namespace acrpose {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[8] = {'A', 'C', 'R', 'C', 'K', 'P', 'T', '\0'};

struct NamedTensor {
  std::string name;
  Matrix value;
};

struct OptimizerSnapshot {
  double lr = 0.0;
  long step = 0;
  std::vector<Matrix> m;
  std::vector<Matrix> v;
};

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::string config;  // INI text
  int epoch = 0;       // epochs completed
  long step = 0;
  std::vector<NamedTensor> reconstructor;
  std::vector<NamedTensor> discriminator;
  OptimizerSnapshot reconstructor_opt;
  OptimizerSnapshot discriminator_opt;
};

namespace detail {

inline std::vector<NamedTensor> named(const ad::ParameterSet& ps) {
  std::vector<NamedTensor> out;
  for (const auto& e : ps.entries()) out.push_back({e.name, e.tensor.value()});
  return out;
}

inline OptimizerSnapshot snapshot(const ad::AdamState& s) { return {s.config.lr, s.step, s.m, s.v}; }

inline void write_tensors(io::Writer& w, const std::vector<NamedTensor>& ts) {
  w.u32(static_cast<std::uint32_t>(ts.size()));
  for (const auto& t : ts) {
    w.str(t.name);
    w.u32(static_cast<std::uint32_t>(t.value.rows()));
    w.u32(static_cast<std::uint32_t>(t.value.cols()));
    w.matrix(t.value);
  }
}

inline std::vector<NamedTensor> read_tensors(io::Reader& r) {
  std::vector<NamedTensor> out(r.u32());
  for (auto& t : out) {
    t.name = r.str();
    auto rows = r.u32();
    auto cols = r.u32();
    t.value = r.matrix(rows, cols);
  }
  return out;
}

inline void write_optimizer(io::Writer& w, const OptimizerSnapshot& s) {
  w.f64(s.lr);
  w.u64(static_cast<std::uint64_t>(s.step));
  w.u32(static_cast<std::uint32_t>(s.m.size()));
  for (std::size_t i = 0; i < s.m.size(); ++i) {
    w.u32(static_cast<std::uint32_t>(s.m[i].rows()));
    w.u32(static_cast<std::uint32_t>(s.m[i].cols()));
    w.matrix(s.m[i]);
    w.matrix(s.v[i]);
  }
}

inline OptimizerSnapshot read_optimizer(io::Reader& r) {
  OptimizerSnapshot s;
  s.lr = r.f64();
  s.step = static_cast<long>(r.u64());
  auto n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    auto rows = r.u32();
    auto cols = r.u32();
    s.m.push_back(r.matrix(rows, cols));
    s.v.push_back(r.matrix(rows, cols));
  }
  return s;
}

inline void restore_parameters(ad::ParameterSet& ps, const std::vector<NamedTensor>& ts, const std::string& what) {
  if (ts.size() != ps.size()) {
    throw IoError("checkpoint: " + what + " has " + std::to_string(ts.size()) + " tensors, model expects " +
                  std::to_string(ps.size()));
  }
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const auto& e = ps.entries()[i];
    if (e.name != ts[i].name) throw IoError("checkpoint: expected tensor '" + e.name + "', found '" + ts[i].name + "'");
    if (e.tensor.rows() != ts[i].value.rows() || e.tensor.cols() != ts[i].value.cols()) {
      throw IoError("checkpoint: shape mismatch for '" + e.name + "'");
    }
    e.tensor.node()->value = ts[i].value;
  }
}

inline void restore_optimizer(ad::AdamState& s, const OptimizerSnapshot& snap, const std::string& what) {
  if (snap.m.size() != s.m.size()) throw IoError("checkpoint: " + what + " optimizer state size mismatch");
  for (std::size_t i = 0; i < snap.m.size(); ++i) {
    if (snap.m[i].rows() != s.m[i].rows() || snap.m[i].cols() != s.m[i].cols()) {
      throw IoError("checkpoint: " + what + " optimizer moment shape mismatch at " + std::to_string(i));
    }
  }
  s.config.lr = snap.lr;
  s.step = snap.step;
  s.m = snap.m;
  s.v = snap.v;
}

}  // namespace detail

inline Checkpoint make_checkpoint(const RunConfig& cfg, const TrainState& s, int epochs_done) {
  Checkpoint c;
  c.config = to_ini(cfg);
  c.epoch = epochs_done;
  c.step = s.step;
  c.reconstructor = detail::named(s.reconstructor.parameters());
  c.discriminator = detail::named(s.discriminator.parameters());
  c.reconstructor_opt = detail::snapshot(s.reconstructor_opt);
  c.discriminator_opt = detail::snapshot(s.discriminator_opt);
  return c;
}

inline void write_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  io::Writer w(path, kCheckpointMagic, c.version);
  w.str(c.config);
  w.i32(c.epoch);
  w.u64(static_cast<std::uint64_t>(c.step));
  detail::write_tensors(w, c.reconstructor);
  detail::write_tensors(w, c.discriminator);
  detail::write_optimizer(w, c.reconstructor_opt);
  detail::write_optimizer(w, c.discriminator_opt);
  w.close();
}

inline Checkpoint read_checkpoint(const std::filesystem::path& path) {
  io::Reader r(path, kCheckpointMagic, kCheckpointVersion);
  Checkpoint c;
  c.config = r.str();
  c.epoch = r.i32();
  c.step = static_cast<long>(r.u64());
  c.reconstructor = detail::read_tensors(r);
  c.discriminator = detail::read_tensors(r);
  c.reconstructor_opt = detail::read_optimizer(r);
  c.discriminator_opt = detail::read_optimizer(r);
  r.expect_end();
  return c;
}

inline RunConfig checkpoint_config(const Checkpoint& c) {
  RunConfig cfg;
  apply_ini_text(cfg, c.config);
  return cfg;
}

// Loads weights, optimizer moments and counters into a state built from the
// checkpoint's own config.
inline void restore(TrainState& s, const Checkpoint& c) {
  detail::restore_parameters(s.reconstructor.parameters(), c.reconstructor, "reconstructor");
  detail::restore_parameters(s.discriminator.parameters(), c.discriminator, "discriminator");
  detail::restore_optimizer(s.reconstructor_opt, c.reconstructor_opt, "reconstructor");
  detail::restore_optimizer(s.discriminator_opt, c.discriminator_opt, "discriminator");
  s.step = c.step;
  s.epoch = c.epoch;
}

// Exclusive ownership of a checkpoint directory for one training process.
class DirectoryLock {
 public:
  explicit DirectoryLock(const std::filesystem::path& dir) : path_(dir / "LOCK") {
    std::FILE* f = std::fopen(path_.c_str(), "wx");
    if (f == nullptr) {
      throw IoError("checkpoint directory " + dir.string() + " is locked (" + path_.string() +
                    " exists; remove it if no training process owns it)");
    }
    std::fprintf(f, "%ld\n", static_cast<long>(::getpid()));
    std::fclose(f);
  }
  ~DirectoryLock() {
    std::error_code ec;
    std::filesystem::remove(path_, ec);
  }
  DirectoryLock(const DirectoryLock&) = delete;
  DirectoryLock& operator=(const DirectoryLock&) = delete;

 private:
  std::filesystem::path path_;
};

}  // namespace acrpose
