#pragma once

// Desk-scale domain-shift data: two-moons rotation, class-conditional Gaussian
// translation, and IDX (MNIST-format) ingestion with pixel transforms.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <ostream>
#include <random>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "uda/error.hpp"
#include "uda/tensor.hpp"

namespace uda {

enum class Split { train, eval };

inline std::string to_string(Split s) { return s == Split::train ? "train" : "eval"; }

struct LabeledSet {
  Tensor x;                    // [n, dim]
  std::vector<std::size_t> y;  // [n]
  std::size_t classes = 0;
  std::string domain;
  Split split = Split::train;

  std::size_t size() const { return y.size(); }
  std::size_t dim() const { return x.cols(); }

  void validate() const {
    if (x.rank() != 2 || x.rows() != y.size()) {
      throw ShapeError("labeled set: " + std::to_string(y.size()) + " labels for x " +
                       shape_string(x.shape()));
    }
    for (std::size_t c : y) {
      if (c >= classes) throw ContractError("labeled set: label out of range");
    }
  }
};

struct UnlabeledSet {
  Tensor x;
  std::string domain;
  Split split = Split::train;

  std::size_t size() const { return x.rank() == 2 ? x.rows() : 0; }
};

inline UnlabeledSet strip_labels(const LabeledSet& s) { return {s.x, s.domain, s.split}; }

/// Source train/eval, target train (labels hidden) and target eval.
struct DomainStream {
  LabeledSet source_train;
  LabeledSet source_eval;
  UnlabeledSet target_train;
  LabeledSet target_eval;
};

/// Rows taken from `s` at the given positions.
inline LabeledSet subset(const LabeledSet& s, std::span<const std::size_t> rows) {
  LabeledSet out{gather_rows(s.x, rows), {}, s.classes, s.domain, s.split};
  out.y.reserve(rows.size());
  for (std::size_t r : rows) out.y.push_back(s.y.at(r));
  return out;
}

/// First `n_train` rows become train, the rest eval.
inline std::pair<LabeledSet, LabeledSet> split_train_eval(const LabeledSet& s, std::size_t n_train) {
  require(n_train <= s.size(), "split larger than set");
  std::vector<std::size_t> a(n_train), b(s.size() - n_train);
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = i;
  for (std::size_t i = 0; i < b.size(); ++i) b[i] = n_train + i;
  LabeledSet train = subset(s, a), eval = subset(s, b);
  train.split = Split::train;
  eval.split = Split::eval;
  return {std::move(train), std::move(eval)};
}

/// Hash of every row; used to verify train/eval disjointness.
inline std::unordered_set<std::uint64_t> row_hashes(const Tensor& x) {
  std::unordered_set<std::uint64_t> out;
  for (std::size_t r = 0; r < x.rows(); ++r) out.insert(fnv1a(x.row(r)));
  return out;
}

inline bool disjoint(const Tensor& a, const Tensor& b) {
  const auto ha = row_hashes(a);
  for (std::size_t r = 0; r < b.rows(); ++r) {
    if (ha.contains(fnv1a(b.row(r)))) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Synthetic generators.

/// Rotates 2-D points about the origin.
inline Tensor rotate2d(const Tensor& x, double degrees) {
  if (x.rank() != 2 || x.cols() != 2) throw ShapeError("rotate2d needs [n,2]");
  const double t = degrees * std::numbers::pi / 180.0;
  const double c = std::cos(t), s = std::sin(t);
  Tensor out = x;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    out.at(r, 0) = c * x.at(r, 0) - s * x.at(r, 1);
    out.at(r, 1) = s * x.at(r, 0) + c * x.at(r, 1);
  }
  return out;
}

namespace detail {

// Two interleaved half circles centred on the origin, labels alternating so
// every prefix is close to balanced.
inline LabeledSet draw_moons(std::size_t n, double noise, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> angle(0.0, std::numbers::pi);
  std::normal_distribution<double> jitter(0.0, 1.0);
  LabeledSet s{Tensor::zeros({n, 2}), std::vector<std::size_t>(n), 2, "", Split::train};
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t label = i % 2;
    const double t = angle(rng);
    double px = label == 0 ? std::cos(t) : 1.0 - std::cos(t);
    double py = label == 0 ? std::sin(t) : 0.5 - std::sin(t);
    px += noise * jitter(rng) - 0.5;
    py += noise * jitter(rng) - 0.25;
    s.x.at(i, 0) = px;
    s.x.at(i, 1) = py;
    s.y[i] = label;
  }
  return s;
}

}  // namespace detail

/// Source moons and an independent target draw rotated by `rotation_deg`.
/// The target keeps its labels for evaluation only.
inline std::pair<LabeledSet, LabeledSet> gen_two_moons(std::size_t n, double noise,
                                                       double rotation_deg, std::uint64_t seed) {
  require(n >= 4, "two moons needs n >= 4");
  require(noise >= 0.0, "two moons noise must be >= 0");
  std::mt19937_64 rng(seed);
  LabeledSet source = detail::draw_moons(n, noise, rng);
  LabeledSet target = detail::draw_moons(n, noise, rng);
  target.x = rotate2d(target.x, rotation_deg);
  source.domain = "source";
  target.domain = "target";
  return {std::move(source), std::move(target)};
}

/// Lower Cholesky factor; throws unless `cov` is symmetric positive definite.
inline Tensor cholesky(const Tensor& cov) {
  if (cov.rank() != 2 || cov.rows() != cov.cols()) throw ShapeError("covariance must be square");
  const std::size_t d = cov.rows();
  Tensor l = Tensor::zeros({d, d});
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      if (std::abs(cov.at(i, j) - cov.at(j, i)) > 1e-12) {
        throw ContractError("covariance is not symmetric");
      }
    }
  }
  for (std::size_t j = 0; j < d; ++j) {
    double diag = cov.at(j, j);
    for (std::size_t k = 0; k < j; ++k) diag -= l.at(j, k) * l.at(j, k);
    if (!(diag > 0.0)) throw ContractError("covariance is not positive definite");
    l.at(j, j) = std::sqrt(diag);
    for (std::size_t i = j + 1; i < d; ++i) {
      double v = cov.at(i, j);
      for (std::size_t k = 0; k < j; ++k) v -= l.at(i, k) * l.at(j, k);
      l.at(i, j) = v / l.at(j, j);
    }
  }
  return l;
}

/// Class-conditional Gaussians with shared covariance. means_* is [C, dim].
inline std::pair<LabeledSet, LabeledSet> gen_gaussian_shift(const Tensor& means_s,
                                                            const Tensor& means_t,
                                                            const Tensor& cov, std::size_t n,
                                                            std::uint64_t seed) {
  if (means_s.shape() != means_t.shape() || means_s.rank() != 2) {
    throw ShapeError("source and target means must both be [C, dim]");
  }
  if (cov.rows() != means_s.cols()) throw ShapeError("covariance does not match mean dim");
  const Tensor l = cholesky(cov);
  const std::size_t classes = means_s.rows(), d = means_s.cols();
  require(classes >= 2, "gaussian shift needs at least two classes");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  auto draw = [&](const Tensor& means, const char* tag) {
    LabeledSet s{Tensor::zeros({n, d}), std::vector<std::size_t>(n), classes, tag, Split::train};
    std::vector<double> e(d);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t c = i % classes;
      for (double& v : e) v = g(rng);
      for (std::size_t a = 0; a < d; ++a) {
        double v = means.at(c, a);
        for (std::size_t b = 0; b <= a; ++b) v += l.at(a, b) * e[b];
        s.x.at(i, a) = v;
      }
      s.y[i] = c;
    }
    return s;
  };
  LabeledSet source = draw(means_s, "source");
  LabeledSet target = draw(means_t, "target");
  return {std::move(source), std::move(target)};
}

/// Splits a (source, target) pair into the four sets of a stream.
inline DomainStream make_stream(const LabeledSet& source, const LabeledSet& target,
                                std::size_t n_train) {
  auto [s_train, s_eval] = split_train_eval(source, n_train);
  auto [t_train, t_eval] = split_train_eval(target, n_train);
  return {std::move(s_train), std::move(s_eval), strip_labels(t_train), std::move(t_eval)};
}

/// Two-moons stream with `n_train` training and `n_eval` held-out points per
/// domain.
inline DomainStream two_moons_stream(std::size_t n_train, std::size_t n_eval, double noise,
                                     double rotation_deg, std::uint64_t seed) {
  auto [s, t] = gen_two_moons(n_train + n_eval, noise, rotation_deg, seed);
  return make_stream(s, t, n_train);
}

// ---------------------------------------------------------------------------
// IDX ingestion.

enum class PixelTransform { none, invert, color_noise };

inline PixelTransform parse_pixel_transform(const std::string& s) {
  if (s == "none") return PixelTransform::none;
  if (s == "invert") return PixelTransform::invert;
  if (s == "color_noise") return PixelTransform::color_noise;
  throw FormatError("unknown pixel transform '" + s + "'");
}

/// p -> 1 - p.
inline void invert_pixels(std::span<double> px) {
  for (double& p : px) p = 1.0 - p;
}

/// Blends one image with a random flat colour plus per-pixel noise:
/// p -> |c + u - p| clipped to [0,1].
inline void color_noise_pixels(std::span<double> px, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> colour(0.0, 1.0);
  std::uniform_real_distribution<double> grain(0.0, 0.2);
  const double c = colour(rng);
  for (double& p : px) p = std::clamp(std::abs(c + grain(rng) - p), 0.0, 1.0);
}

namespace detail {

inline std::uint32_t read_be32(std::istream& is, const std::string& what) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw FormatError(what + ": truncated header");
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) |
         std::uint32_t{b[3]};
}

}  // namespace detail

struct IdxImages {
  std::size_t count = 0, rows = 0, cols = 0;
  std::vector<unsigned char> pixels;
};

inline IdxImages read_idx_images(std::istream& is) {
  if (detail::read_be32(is, "idx images") != 0x00000803) {
    throw FormatError("idx images: bad magic");
  }
  IdxImages out;
  out.count = detail::read_be32(is, "idx images");
  out.rows = detail::read_be32(is, "idx images");
  out.cols = detail::read_be32(is, "idx images");
  out.pixels.resize(out.count * out.rows * out.cols);
  if (!is.read(reinterpret_cast<char*>(out.pixels.data()),
               static_cast<std::streamsize>(out.pixels.size()))) {
    throw FormatError("idx images: truncated payload");
  }
  return out;
}

inline std::vector<unsigned char> read_idx_labels(std::istream& is) {
  if (detail::read_be32(is, "idx labels") != 0x00000801) {
    throw FormatError("idx labels: bad magic");
  }
  std::vector<unsigned char> out(detail::read_be32(is, "idx labels"));
  if (!is.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(out.size()))) {
    throw FormatError("idx labels: truncated payload");
  }
  return out;
}

struct IdxOptions {
  std::size_t limit_per_class = 0;  // 0 = no cap
  PixelTransform transform = PixelTransform::none;
  std::uint64_t seed = 0;
  std::size_t classes = 10;
};

/// Images become rows of [n, rows*cols] scaled to [0,1].
inline LabeledSet load_idx(std::istream& images, std::istream& labels, const IdxOptions& opt) {
  const IdxImages img = read_idx_images(images);
  const std::vector<unsigned char> lab = read_idx_labels(labels);
  if (lab.size() != img.count) {
    throw FormatError("idx: " + std::to_string(img.count) + " images but " +
                      std::to_string(lab.size()) + " labels");
  }
  const std::size_t dim = img.rows * img.cols;
  std::vector<std::size_t> taken(opt.classes, 0);
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < img.count; ++i) {
    if (lab[i] >= opt.classes) throw FormatError("idx: label out of range");
    if (opt.limit_per_class && taken[lab[i]] >= opt.limit_per_class) continue;
    ++taken[lab[i]];
    keep.push_back(i);
  }
  LabeledSet out{Tensor::zeros({keep.size(), dim}), {}, opt.classes, "idx", Split::train};
  std::mt19937_64 rng(opt.seed);
  for (std::size_t r = 0; r < keep.size(); ++r) {
    std::span<double> row = out.x.data().subspan(r * dim, dim);
    for (std::size_t k = 0; k < dim; ++k) row[k] = img.pixels[keep[r] * dim + k] / 255.0;
    if (opt.transform == PixelTransform::invert) invert_pixels(row);
    if (opt.transform == PixelTransform::color_noise) color_noise_pixels(row, rng);
    out.y.push_back(lab[keep[r]]);
  }
  return out;
}

inline LabeledSet load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                           const IdxOptions& opt) {
  std::ifstream fi(images, std::ios::binary), fl(labels, std::ios::binary);
  if (!fi) throw FormatError("cannot open " + images.string());
  if (!fl) throw FormatError("cannot open " + labels.string());
  return load_idx(fi, fl, opt);
}

// ---------------------------------------------------------------------------
// CSV export: domain_tag, split, label-or-NA, features...

inline void write_csv_header(std::ostream& os, std::size_t dim) {
  os << "domain,split,label";
  for (std::size_t k = 0; k < dim; ++k) os << ",x" << k;
  os << '\n';
}

namespace detail {

inline void write_rows(std::ostream& os, const Tensor& x, const std::string& domain, Split split,
                       const std::vector<std::size_t>* labels) {
  const auto old = os.precision(17);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    os << domain << ',' << to_string(split) << ',';
    if (labels) {
      os << (*labels)[r];
    } else {
      os << "NA";
    }
    for (double v : x.row(r)) os << ',' << v;
    os << '\n';
  }
  os.precision(old);
}

}  // namespace detail

inline void write_csv(std::ostream& os, const LabeledSet& s) {
  detail::write_rows(os, s.x, s.domain, s.split, &s.y);
}

inline void write_csv(std::ostream& os, const UnlabeledSet& s) {
  detail::write_rows(os, s.x, s.domain, s.split, nullptr);
}

inline void write_csv(std::ostream& os, const DomainStream& d) {
  write_csv_header(os, d.source_train.dim());
  write_csv(os, d.source_train);
  write_csv(os, d.source_eval);
  write_csv(os, d.target_train);
  write_csv(os, d.target_eval);
}

}  // namespace uda
