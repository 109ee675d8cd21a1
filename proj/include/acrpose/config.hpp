#pragma once

// Run configuration: presets, INI files (key = value, one section per
// module) and command-line overrides. Precedence is CLI > file > preset.

#include "acrpose/adversarial.hpp"
#include "acrpose/evalmetrics.hpp"
#include "acrpose/synthdata.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <cstdint>
#include <fstream>
#include <functional>
#include <optional>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace acrpose {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  std::string preset = "desk";
  std::string dataset = "data";
  DatasetConfig data;
  ModelConfig model;
  LossWeights weights;
  double smooth_l1_delta = 1.0;
  LrSchedule schedule;
  int batch_size = 16;
  int epochs = 30;
  int checkpoint_every = 1;  // epochs between checkpoints
  std::uint64_t seed = 1;
  double meter = 1.0;  // translation unit for the cm thresholds
  std::string size_mode = "extents";  // or mean_abs
  int iou_samples = 100000;
  CurveGrids grids = CurveGrids::standard();

  TrainOptions train_options() const {
    TrainOptions o;
    o.weights = weights;
    o.smooth_l1_delta = smooth_l1_delta;
    o.adversarial = model.use_adversarial;
    return o;
  }

  void validate() const;
};

// Full-scale settings.
inline RunConfig paper_preset() {
  RunConfig c;
  c.preset = "paper";
  c.data.n_points = 1024;
  c.data.n_prior = 1024;
  c.data.appearance_dim = 64;
  c.data.model_points = 2048;
  c.model.n_points = 1024;
  c.model.n_prior = 1024;
  c.model.channels = 64;
  c.model.k = 36;
  c.model.kernel_channels = 8;
  c.model.appearance_dim = 64;
  c.model.head_hidden = 512;
  c.model.disc_hidden = 128;
  c.weights.gamma = {0.1, 0.1, 1.0, 5.0, 0.0001, 0.01};
  c.schedule.reconstructor_lr = 1e-4;
  c.schedule.discriminator_lr = 1e-5;
  c.schedule.decay_epochs = {10, 30, 40};
  c.schedule.decay_factors = {0.5, 0.1, 0.01};
  c.batch_size = 96;
  c.epochs = 50;
  return c;
}

// Single-core scale: N_p = N_c = 256, C = 16, K = 8, batch 16.
inline RunConfig desk_preset() {
  RunConfig c;
  c.preset = "desk";
  c.data.n_points = 256;
  c.data.n_prior = 256;
  c.data.appearance_dim = 16;
  c.data.model_points = 1024;
  c.model.n_points = 256;
  c.model.n_prior = 256;
  c.model.channels = 16;
  c.model.k = 8;
  c.model.kernel_channels = 8;
  c.model.appearance_dim = 16;
  c.model.head_hidden = 64;
  c.model.disc_hidden = 32;
  c.schedule.reconstructor_lr = 5e-3;
  c.schedule.discriminator_lr = 5e-4;
  c.schedule.decay_epochs = {15, 22, 27};
  c.schedule.decay_factors = {0.5, 0.1, 0.01};
  c.batch_size = 16;
  c.epochs = 30;
  return c;
}

inline RunConfig preset(const std::string& name) {
  if (name == "desk") return desk_preset();
  if (name == "paper") return paper_preset();
  throw ConfigError("unknown preset '" + name + "' (expected desk or paper)");
}

namespace detail {

template <class T>
std::string format_list(const std::vector<T>& v) {
  std::ostringstream os;
  os << std::setprecision(17);
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? ", " : "") << v[i];
  return os.str();
}

inline std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_scalar(const std::string& key, const std::string& text) {
  std::istringstream is(trim(text));
  T v{};
  if constexpr (std::is_same_v<T, bool>) {
    std::string w;
    is >> w;
    if (w == "true" || w == "1" || w == "on") return true;
    if (w == "false" || w == "0" || w == "off") return false;
    throw ConfigError(key + ": expected a boolean, got '" + text + "'");
  } else {
    is >> v;
    if (is.fail() || !is.eof()) throw ConfigError(key + ": cannot parse '" + text + "'");
  }
  return v;
}

template <class T>
std::vector<T> parse_list(const std::string& key, const std::string& text) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!trim(item).empty()) out.push_back(parse_scalar<T>(key, item));
  }
  return out;
}

// One settable field: rendering to text and assignment from text.
struct Field {
  std::function<std::string()> get;
  std::function<void(const std::string&)> set;
};

template <class T>
Field scalar_field(const std::string& key, T* p) {
  return {[p] {
            std::ostringstream os;
            os << std::setprecision(17) << std::boolalpha << *p;
            return os.str();
          },
          [key, p](const std::string& v) { *p = parse_scalar<T>(key, v); }};
}

template <class T>
Field list_field(const std::string& key, std::vector<T>* p) {
  return {[p] { return format_list(*p); }, [key, p](const std::string& v) { *p = parse_list<T>(key, v); }};
}

// "section.key" -> field, in a fixed order so rendered files are stable.
inline std::vector<std::pair<std::string, Field>> fields(RunConfig& c) {
  std::vector<std::pair<std::string, Field>> f;
  auto add = [&](const std::string& k, Field fl) { f.emplace_back(k, std::move(fl)); };
  add("run.preset", scalar_field("run.preset", &c.preset));
  add("run.dataset", scalar_field("run.dataset", &c.dataset));
  add("run.seed", scalar_field("run.seed", &c.seed));

  add("data.n_train", scalar_field("data.n_train", &c.data.n_train));
  add("data.n_val", scalar_field("data.n_val", &c.data.n_val));
  add("data.n_points", scalar_field("data.n_points", &c.data.n_points));
  add("data.n_prior", scalar_field("data.n_prior", &c.data.n_prior));
  add("data.appearance_dim", scalar_field("data.appearance_dim", &c.data.appearance_dim));
  add("data.model_points", scalar_field("data.model_points", &c.data.model_points));
  add("data.noise_sigma", scalar_field("data.noise_sigma", &c.data.noise_sigma));
  add("data.appearance_noise", scalar_field("data.appearance_noise", &c.data.appearance_noise));
  add("data.appearance_freq_lo", scalar_field("data.appearance_freq_lo", &c.data.appearance_freq_lo));
  add("data.appearance_freq_hi", scalar_field("data.appearance_freq_hi", &c.data.appearance_freq_hi));
  add("data.seed", scalar_field("data.seed", &c.data.seed));
  add("data.families",
      {[&c] {
         std::string s;
         for (std::size_t i = 0; i < c.data.families.size(); ++i) s += (i ? ", " : "") + std::string(family_name(c.data.families[i]));
         return s;
       },
       [&c](const std::string& v) {
         c.data.families.clear();
         for (const auto& name : parse_list<std::string>("data.families", v)) c.data.families.push_back(parse_family(name));
       }});

  add("model.n_points", scalar_field("model.n_points", &c.model.n_points));
  add("model.n_prior", scalar_field("model.n_prior", &c.model.n_prior));
  add("model.channels", scalar_field("model.channels", &c.model.channels));
  add("model.k", scalar_field("model.k", &c.model.k));
  add("model.kernel_channels", scalar_field("model.kernel_channels", &c.model.kernel_channels));
  add("model.appearance_dim", scalar_field("model.appearance_dim", &c.model.appearance_dim));
  add("model.head_hidden", scalar_field("model.head_hidden", &c.model.head_hidden));
  add("model.disc_hidden", scalar_field("model.disc_hidden", &c.model.disc_hidden));
  add("model.use_pim", scalar_field("model.use_pim", &c.model.use_pim));
  add("model.use_instance_branch", scalar_field("model.use_instance_branch", &c.model.use_instance_branch));
  add("model.use_deformation_branch", scalar_field("model.use_deformation_branch", &c.model.use_deformation_branch));
  add("model.use_assignment_branch", scalar_field("model.use_assignment_branch", &c.model.use_assignment_branch));
  add("model.use_adversarial", scalar_field("model.use_adversarial", &c.model.use_adversarial));

  const char* gnames[6] = {"loss.gamma_d", "loss.gamma_g", "loss.gamma_corr", "loss.gamma_cd", "loss.gamma_entro",
                           "loss.gamma_reg"};
  for (std::size_t i = 0; i < 6; ++i) add(gnames[i], scalar_field(gnames[i], &c.weights.gamma[i]));
  add("loss.smooth_l1_delta", scalar_field("loss.smooth_l1_delta", &c.smooth_l1_delta));

  add("train.reconstructor_lr", scalar_field("train.reconstructor_lr", &c.schedule.reconstructor_lr));
  add("train.discriminator_lr", scalar_field("train.discriminator_lr", &c.schedule.discriminator_lr));
  add("train.decay_epochs", list_field("train.decay_epochs", &c.schedule.decay_epochs));
  add("train.decay_factors", list_field("train.decay_factors", &c.schedule.decay_factors));
  add("train.batch_size", scalar_field("train.batch_size", &c.batch_size));
  add("train.epochs", scalar_field("train.epochs", &c.epochs));
  add("train.checkpoint_every", scalar_field("train.checkpoint_every", &c.checkpoint_every));

  add("eval.meter", scalar_field("eval.meter", &c.meter));
  add("eval.size_mode", scalar_field("eval.size_mode", &c.size_mode));
  add("eval.iou_samples", scalar_field("eval.iou_samples", &c.iou_samples));
  add("eval.iou_grid", list_field("eval.iou_grid", &c.grids.iou));
  add("eval.rot_grid", list_field("eval.rot_grid", &c.grids.rot));
  add("eval.trans_grid", list_field("eval.trans_grid", &c.grids.trans));
  return f;
}

}  // namespace detail

// Sets "section.key" to `value`; unknown keys are an error.
inline void set_option(RunConfig& c, const std::string& key, const std::string& value) {
  for (auto& [k, f] : detail::fields(c)) {
    if (k == key) {
      f.set(value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

inline std::string get_option(RunConfig& c, const std::string& key) {
  for (auto& [k, f] : detail::fields(c)) {
    if (k == key) return f.get();
  }
  throw ConfigError("unknown config key '" + key + "'");
}

// Flattens an INI document into ("section.key", value) pairs in file order.
inline std::vector<std::pair<std::string, std::string>> read_ini_entries(std::istream& in,
                                                                         const std::string& origin = "<config>") {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(origin + ": " + e.message() + " (line " + std::to_string(e.line()) + ")");
  }
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) throw ConfigError(origin + ": key '" + section + "' outside a section");
    for (const auto& [key, value] : body) out.emplace_back(section + "." + key, value.data());
  }
  return out;
}

// Applies every key of an INI document. A `run.preset` key rebases the
// config on that preset first, so the file's other values land on top of it.
inline void apply_ini(RunConfig& c, std::istream& in, const std::string& origin = "<config>") {
  auto entries = read_ini_entries(in, origin);
  for (const auto& [k, v] : entries) {
    if (k == "run.preset") c = preset(detail::trim(v));
  }
  for (const auto& [k, v] : entries) {
    try {
      set_option(c, k, v);
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ": " + e.what());
    }
  }
}

inline void apply_ini_text(RunConfig& c, const std::string& text) {
  std::istringstream is(text);
  apply_ini(c, is);
}

struct ConfigSources {
  std::optional<std::string> preset;       // --preset
  std::optional<std::string> file;         // --config
  std::vector<std::pair<std::string, std::string>> overrides;  // other flags, applied last
};

// Preset, then file, then command line. An explicit --preset beats a
// run.preset key in the file.
inline RunConfig resolve_config(const ConfigSources& src) {
  std::vector<std::pair<std::string, std::string>> file_entries;
  if (src.file) {
    std::ifstream f(*src.file);
    if (!f) throw ConfigError("cannot open config file " + *src.file);
    file_entries = read_ini_entries(f, *src.file);
  }
  std::string base = "desk";
  for (const auto& [k, v] : file_entries) {
    if (k == "run.preset") base = detail::trim(v);
  }
  if (src.preset) base = *src.preset;
  RunConfig c = preset(base);
  for (const auto& [k, v] : file_entries) {
    if (k == "run.preset") continue;
    try {
      set_option(c, k, v);
    } catch (const ConfigError& e) {
      throw ConfigError(*src.file + ": " + e.what());
    }
  }
  for (const auto& [k, v] : src.overrides) set_option(c, k, v);
  c.validate();
  return c;
}

inline std::string to_ini(RunConfig c) {
  std::ostringstream os;
  std::string current;
  for (auto& [key, f] : detail::fields(c)) {
    auto dot = key.find('.');
    std::string section = key.substr(0, dot);
    if (section != current) {
      os << (current.empty() ? "" : "\n") << "[" << section << "]\n";
      current = section;
    }
    os << key.substr(dot + 1) << " = " << f.get() << "\n";
  }
  return os.str();
}

inline void RunConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  if (data.n_points != model.n_points) fail("data.n_points and model.n_points differ");
  if (data.n_prior != model.n_prior) fail("data.n_prior and model.n_prior differ");
  if (data.appearance_dim != model.appearance_dim) fail("data.appearance_dim and model.appearance_dim differ");
  if (model.k < 1 || model.k >= model.n_points || model.k >= model.n_prior) fail("model.k must be in [1, min(N_p, N_c))");
  if (model.channels < 1 || model.kernel_channels < 1 || model.head_hidden < 1 || model.disc_hidden < 2) {
    fail("model widths must be positive");
  }
  if (batch_size < 1) fail("train.batch_size must be >= 1");
  if (epochs < 0) fail("train.epochs must be >= 0");
  if (checkpoint_every < 1) fail("train.checkpoint_every must be >= 1");
  if (schedule.reconstructor_lr <= 0 || schedule.discriminator_lr <= 0) fail("learning rates must be positive");
  if (schedule.decay_epochs.size() != schedule.decay_factors.size()) fail("train.decay_epochs and decay_factors differ in length");
  if (smooth_l1_delta <= 0) fail("loss.smooth_l1_delta must be positive");
  for (double g : weights.gamma) {
    if (!(g >= 0.0)) fail("loss weights must be non-negative");
  }
  if (data.n_train < 1) fail("data.n_train must be >= 1");
  if (data.families.empty()) fail("data.families is empty");
  if (meter <= 0) fail("eval.meter must be positive");
  if (size_mode != "extents" && size_mode != "mean_abs") fail("eval.size_mode must be extents or mean_abs");
  if (iou_samples < 1) fail("eval.iou_samples must be >= 1");
}

}  // namespace acrpose
