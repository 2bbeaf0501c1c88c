#pragma once

// Line-based run configuration:
//
//   # comment
//   [data]
//   kind = two_moons
//   [train]
//   mem_per_class = 8
//
// Sections: [train], [data], [sweep], [theory]. Unknown keys are errors.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "uda/domains.hpp"
#include "uda/error.hpp"
#include "uda/trainer.hpp"

namespace uda {

struct DataSpec {
  std::string kind = "two_moons";  // two_moons | gaussian | idx
  double rotation = 30.0;          // degrees, two_moons
  double noise = 0.1;
  std::size_t n_train = 1000;  // per domain
  std::size_t n_eval = 500;
  std::vector<double> shift = {2.0, 0.0};  // gaussian: target mean translation
  double spread = 0.5;                     // gaussian: per-axis std
  std::size_t classes = 2;                 // gaussian
  std::string source_images, source_labels, target_images, target_labels;
  std::size_t limit_per_class = 0;
  PixelTransform source_transform = PixelTransform::none;
  PixelTransform target_transform = PixelTransform::invert;
};

/// The five configurations compared by the report.
enum class Variant { double_head, single_head, scalar_hrn, replay_only, no_replay };

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::double_head: return "double_head";
    case Variant::single_head: return "single_head";
    case Variant::scalar_hrn: return "scalar_hrn";
    case Variant::replay_only: return "replay_only";
    case Variant::no_replay: return "no_replay";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  for (Variant v : {Variant::double_head, Variant::single_head, Variant::scalar_hrn, Variant::replay_only,
                    Variant::no_replay}) {
    if (s == to_string(v)) return v;
  }
  throw FormatError("unknown mode variant '" + s + "'");
}

/// Rewrites a base configuration into one of the compared variants.
inline TrainConfig apply_variant(TrainConfig c, Variant v) {
  switch (v) {
    case Variant::double_head: break;
    case Variant::single_head: c.weights.gamma_s = 0.0; break;
    case Variant::scalar_hrn: c.schedule.mode = DiscMode::hrn; break;
    case Variant::replay_only: c.weights.adv_weight = 0.0; break;
    case Variant::no_replay: c.replay = false; break;
  }
  return c;
}

enum class SweepAxis { none, memory, gamma_s, gamma_t, heatmap, modes };

inline std::string to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::none: return "none";
    case SweepAxis::memory: return "memory";
    case SweepAxis::gamma_s: return "gamma_s";
    case SweepAxis::gamma_t: return "gamma_t";
    case SweepAxis::heatmap: return "heatmap";
    case SweepAxis::modes: return "modes";
  }
  return "?";
}

struct SweepSpec {
  SweepAxis axis = SweepAxis::none;
  std::vector<std::size_t> memory = {8, 16, 32, 64, 128};
  std::vector<double> gamma = {0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
  std::vector<double> lr = {0.0001, 0.0004, 0.001, 0.002};  // source-only head
  std::vector<std::size_t> epochs = {1, 3, 5, 7};           // source-only head
  std::vector<Variant> modes = {Variant::double_head, Variant::single_head, Variant::scalar_hrn,
                                Variant::replay_only, Variant::no_replay};
};

struct TheorySpec {
  std::size_t seeds = 20;
  std::vector<std::size_t> sizes = {8, 32, 128, 512};
  std::size_t oracle_m = 50000;
  double delta = 0.1;
  std::size_t lattice_instances = 200;
  std::size_t prop1_instances = 500;
  double rho = 1.0;
  std::uint64_t seed = 1;
};

struct RunConfig {
  DataSpec data;
  TrainConfig train;
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  SweepSpec sweep;
  TheorySpec theory;
  std::string out = "out";

  void validate() const {
    require(!seeds.empty(), "seeds must be non-empty");
    train.schedule.validate();
    train.weights.validate();
    require(train.mem_per_class >= 1, "mem_per_class must be >= 1");
  }
};

// ---------------------------------------------------------------------------

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline double to_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double d = 0.0;
  try {
    d = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || !std::isfinite(d)) throw FormatError(key + ": expected a number, got '" + v + "'");
  return d;
}

inline std::uint64_t to_uint(const std::string& key, const std::string& v) {
  if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos) {
    throw FormatError(key + ": expected a non-negative integer, got '" + v + "'");
  }
  try {
    return std::stoull(v);
  } catch (const std::exception&) {
    throw FormatError(key + ": integer out of range");
  }
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw FormatError(key + ": expected true/false, got '" + v + "'");
}

inline void check_range(const std::string& key, double v, double lo, double hi) {
  if (!(v >= lo && v <= hi)) {
    std::ostringstream os;
    os << key << " = " << v << " out of range [" << lo << ", " << hi << "]";
    throw FormatError(os.str());
  }
}

inline void check_positive(const std::string& key, double v) {
  if (!(v > 0)) throw FormatError(key + " must be > 0");
}

template <class T, class F>
std::vector<T> list_of(const std::string& key, const std::string& v, F&& conv) {
  std::vector<T> out;
  for (const auto& item : split_list(v)) out.push_back(conv(key, item));
  if (out.empty()) throw FormatError(key + ": empty list");
  return out;
}

}  // namespace detail

/// Applies one `key = value` to the config. Throws FormatError on unknown
/// keys, type mismatches and out-of-range values.
inline void set_config_key(RunConfig& c, const std::string& section, const std::string& key,
                           const std::string& value) {
  using namespace detail;
  const std::string k = section + "." + key;
  const auto num = [&] { return to_double(k, value); };
  const auto count = [&] { return static_cast<std::size_t>(to_uint(k, value)); };
  const auto positive = [&] {
    const double v = num();
    check_positive(k, v);
    return v;
  };
  const auto at_least_one = [&] {
    const std::size_t v = count();
    if (v < 1) throw FormatError(k + " must be >= 1");
    return v;
  };
  auto& s = c.train.schedule;
  auto& w = c.train.weights;
  auto& d = c.data;

  using Setter = std::function<void()>;
  const std::map<std::string, Setter> table = {
      // [train]
      {"train.t1", [&] { s.t1 = at_least_one(); }},
      {"train.t2", [&] { s.t2 = at_least_one(); }},
      {"train.t3", [&] { s.t3 = at_least_one(); }},
      {"train.batch", [&] { s.batch = at_least_one(); }},
      {"train.lr_task", [&] { s.lr_task = positive(); }},
      {"train.lr_disc", [&] { s.lr_disc = positive(); }},
      {"train.lr_source_disc", [&] { s.lr_source_disc = positive(); }},
      {"train.optimizer",
       [&] {
         if (value == "adam") s.optimizer = OptimizerKind::adam;
         else if (value == "sgd") s.optimizer = OptimizerKind::sgd;
         else throw FormatError(k + ": expected adam or sgd");
       }},
      {"train.mode", [&] { s.mode = parse_disc_mode(value); }},
      {"train.hrn_feature",
       [&] {
         if (value == "dann") s.hrn_feature = FeatureMode::dann;
         else if (value == "cdan") s.hrn_feature = FeatureMode::cdan;
         else throw FormatError(k + ": expected dann or cdan");
       }},
      {"train.disc_first", [&] { s.disc_first = to_bool(k, value); }},
      {"train.adv_weight",
       [&] {
         w.adv_weight = num();
         check_range(k, w.adv_weight, 0.0, 1e6);
       }},
      {"train.gamma_s",
       [&] {
         w.gamma_s = num();
         check_range(k, w.gamma_s, 0.0, 1.0);
       }},
      {"train.gamma_t",
       [&] {
         w.gamma_t = num();
         check_range(k, w.gamma_t, 0.0, 1.0);
       }},
      {"train.mem_per_class", [&] { c.train.mem_per_class = at_least_one(); }},
      {"train.replay", [&] { c.train.replay = to_bool(k, value); }},
      {"train.hidden", [&] { c.train.net.hidden = at_least_one(); }},
      {"train.feature_dim", [&] { c.train.net.feature_dim = at_least_one(); }},
      {"train.head_hidden", [&] { c.train.net.head_hidden = at_least_one(); }},
      {"train.hrn_exponent",
       [&] {
         const std::size_t e = at_least_one();
         c.train.hrn.exponent = static_cast<int>(e);
       }},
      {"train.hrn_weight",
       [&] {
         c.train.hrn.weight = num();
         check_range(k, c.train.hrn.weight, 0.0, 1e6);
       }},
      {"train.seeds", [&] { c.seeds = list_of<std::uint64_t>(k, value, to_uint); }},
      // [data]
      {"data.kind",
       [&] {
         if (value != "two_moons" && value != "gaussian" && value != "idx") {
           throw FormatError(k + ": expected two_moons, gaussian or idx");
         }
         d.kind = value;
       }},
      {"data.rotation", [&] { d.rotation = num(); }},
      {"data.noise",
       [&] {
         d.noise = num();
         check_range(k, d.noise, 0.0, 1e6);
       }},
      {"data.n_train", [&] { d.n_train = at_least_one(); }},
      {"data.n_eval", [&] { d.n_eval = at_least_one(); }},
      {"data.shift", [&] { d.shift = list_of<double>(k, value, to_double); }},
      {"data.spread", [&] { d.spread = positive(); }},
      {"data.classes",
       [&] {
         d.classes = count();
         if (d.classes < 2) throw FormatError(k + " must be >= 2");
       }},
      {"data.source_images", [&] { d.source_images = value; }},
      {"data.source_labels", [&] { d.source_labels = value; }},
      {"data.target_images", [&] { d.target_images = value; }},
      {"data.target_labels", [&] { d.target_labels = value; }},
      {"data.limit_per_class", [&] { d.limit_per_class = count(); }},
      {"data.source_transform", [&] { d.source_transform = parse_pixel_transform(value); }},
      {"data.target_transform", [&] { d.target_transform = parse_pixel_transform(value); }},
      // [sweep]
      {"sweep.axis",
       [&] {
         for (SweepAxis a : {SweepAxis::none, SweepAxis::memory, SweepAxis::gamma_s, SweepAxis::gamma_t,
                             SweepAxis::heatmap, SweepAxis::modes}) {
           if (value == to_string(a)) {
             c.sweep.axis = a;
             return;
           }
         }
         throw FormatError(k + ": expected memory, gamma_s, gamma_t, heatmap or modes");
       }},
      {"sweep.memory",
       [&] {
         c.sweep.memory = list_of<std::size_t>(k, value, [](const std::string& kk, const std::string& v) {
           const auto n = static_cast<std::size_t>(to_uint(kk, v));
           if (n < 1) throw FormatError(kk + ": memory sizes must be >= 1");
           return n;
         });
       }},
      {"sweep.gamma",
       [&] {
         c.sweep.gamma = list_of<double>(k, value, [](const std::string& kk, const std::string& v) {
           const double g = to_double(kk, v);
           check_range(kk, g, 0.0, 1.0);
           return g;
         });
       }},
      {"sweep.lr",
       [&] {
         c.sweep.lr = list_of<double>(k, value, [](const std::string& kk, const std::string& v) {
           const double x = to_double(kk, v);
           check_positive(kk, x);
           return x;
         });
       }},
      {"sweep.epochs",
       [&] {
         c.sweep.epochs = list_of<std::size_t>(k, value, [](const std::string& kk, const std::string& v) {
           const auto n = static_cast<std::size_t>(to_uint(kk, v));
           if (n < 1) throw FormatError(kk + ": epochs must be >= 1");
           return n;
         });
       }},
      {"sweep.modes",
       [&] {
         c.sweep.modes = list_of<Variant>(k, value, [](const std::string&, const std::string& v) {
           return parse_variant(v);
         });
       }},
      // [theory]
      {"theory.seeds", [&] { c.theory.seeds = at_least_one(); }},
      {"theory.sizes", [&] { c.theory.sizes = list_of<std::size_t>(k, value, to_uint); }},
      {"theory.oracle_m", [&] { c.theory.oracle_m = at_least_one(); }},
      {"theory.delta",
       [&] {
         c.theory.delta = num();
         if (!(c.theory.delta > 0 && c.theory.delta < 1)) throw FormatError(k + " must lie in (0,1)");
       }},
      {"theory.lattice_instances", [&] { c.theory.lattice_instances = at_least_one(); }},
      {"theory.prop1_instances", [&] { c.theory.prop1_instances = at_least_one(); }},
      {"theory.rho", [&] { c.theory.rho = positive(); }},
      {"theory.seed", [&] { c.theory.seed = to_uint(k, value); }},
  };
  const auto it = table.find(k);
  if (it == table.end()) throw FormatError("unknown key '" + key + "' in [" + section + "]");
  if (value.empty()) throw FormatError(k + ": missing value");
  try {
    it->second();
  } catch (const ContractError& e) {
    throw FormatError(k + ": " + e.what());
  }
}

/// Parses a config stream. A file must name its dataset with `[data] kind`.
inline RunConfig parse_config(std::istream& in) {
  RunConfig c;
  std::string section;
  std::string line;
  std::size_t lineno = 0;
  bool has_data = false;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const std::string where = "line " + std::to_string(lineno) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']') throw FormatError(where + "unterminated section header");
      section = detail::trim(line.substr(1, line.size() - 2));
      if (section != "train" && section != "data" && section != "sweep" && section != "theory") {
        throw FormatError(where + "unknown section [" + section + "]");
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError(where + "expected key = value");
    if (section.empty()) throw FormatError(where + "key outside of a section");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    try {
      set_config_key(c, section, key, value);
    } catch (const FormatError& e) {
      throw FormatError(where + e.what());
    }
    if (section == "data" && key == "kind") has_data = true;
  }
  if (!has_data) throw FormatError("missing dataset spec: [data] kind is required");
  if (c.data.kind == "idx" && (c.data.source_images.empty() || c.data.source_labels.empty())) {
    throw FormatError("idx data needs source_images and source_labels");
  }
  try {
    c.validate();
  } catch (const ContractError& e) {
    throw FormatError(e.what());
  }
  return c;
}

inline RunConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open config " + path.string());
  return parse_config(in);
}

// ---------------------------------------------------------------------------

/// Builds the four-set stream for one seed.
inline DomainStream build_stream(const DataSpec& d, std::uint64_t seed) {
  if (d.kind == "two_moons") return two_moons_stream(d.n_train, d.n_eval, d.noise, d.rotation, seed);
  if (d.kind == "gaussian") {
    const std::size_t dim = d.shift.size();
    Tensor ms = Tensor::zeros({d.classes, dim}), mt = Tensor::zeros({d.classes, dim});
    Tensor cov = Tensor::zeros({dim, dim});
    const double pi = std::acos(-1.0);
    for (std::size_t c = 0; c < d.classes; ++c) {
      // Class means spread on a circle in the first two coordinates.
      const double a = 2.0 * pi * static_cast<double>(c) / static_cast<double>(d.classes);
      ms.at(c, 0) = 2.0 * std::cos(a);
      if (dim > 1) ms.at(c, 1) = 2.0 * std::sin(a);
      for (std::size_t j = 0; j < dim; ++j) mt.at(c, j) = ms.at(c, j) + d.shift[j];
    }
    for (std::size_t j = 0; j < dim; ++j) cov.at(j, j) = d.spread * d.spread;
    auto [s, t] = gen_gaussian_shift(ms, mt, cov, d.n_train + d.n_eval, seed);
    return make_stream(s, t, d.n_train);
  }
  IdxOptions so;
  so.limit_per_class = d.limit_per_class;
  so.transform = d.source_transform;
  so.seed = derive_seed(seed, 10);
  IdxOptions to = so;
  to.transform = d.target_transform;
  to.seed = derive_seed(seed, 11);
  const bool own_target = !d.target_images.empty();
  LabeledSet s = load_idx(d.source_images, d.source_labels, so);
  LabeledSet t = own_target ? load_idx(d.target_images, d.target_labels, to)
                            : load_idx(d.source_images, d.source_labels, to);
  s.domain = "source";
  t.domain = "target";
  const std::size_t n = std::min({d.n_train, s.size() / 2, t.size() / 2});
  require(n >= 1, "idx data too small to split");
  return make_stream(s, t, n);
}

}  // namespace uda
