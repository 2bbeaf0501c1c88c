#pragma once

// Numerical checks of the divergence bounds on finite, enumerable inputs:
// empirical H-divergence, margin disparity discrepancy by brute force, the
// generalization inequality on lattice classes, Rademacher estimates and the
// equilibrium decomposition of the double-head objective.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <random>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "uda/error.hpp"
#include "uda/networks.hpp"
#include "uda/tensor.hpp"

namespace uda {

// ---------------------------------------------------------------------------
// Discrete distributions

struct DiscreteDistPair {
  std::vector<std::vector<double>> support;  // optional coordinates, may be empty
  std::vector<double> p_s;
  std::vector<double> q_t;

  std::size_t size() const { return p_s.size(); }

  void validate() const {
    require(!p_s.empty(), "empty support");
    require(p_s.size() == q_t.size(), "p_s and q_t differ in length");
    require(support.empty() || support.size() == p_s.size(), "support and probabilities differ in length");
    for (const auto* v : {&p_s, &q_t}) {
      double total = 0.0;
      for (double x : *v) {
        require(x >= 0.0 && std::isfinite(x), "negative or non-finite probability");
        total += x;
      }
      require(std::abs(total - 1.0) <= 1e-12, "probabilities must sum to 1");
    }
  }
};

template <class Member>
struct FiniteHypothesisClass {
  std::vector<Member> members;
  std::optional<std::size_t> vc_dim;

  std::size_t size() const { return members.size(); }
  void validate() const { require(!members.empty(), "hypothesis class is empty"); }
};

// ---------------------------------------------------------------------------
// Empirical H-divergence

using Point2 = std::array<double, 2>;

/// h(x) = [w·x >= b].
struct LinearThreshold {
  double w0 = 1.0;
  double w1 = 0.0;
  double b = 0.0;
  bool operator()(const Point2& x) const { return w0 * x[0] + w1 * x[1] >= b; }
};

struct Threshold1D {
  double t = 0.0;
  bool operator()(double x) const { return x >= t; }
};

/// 8 directions (multiples of 45 degrees) times thresholds -2, -1.5, ..., 2.
inline FiniteHypothesisClass<LinearThreshold> default_linear_class() {
  FiniteHypothesisClass<LinearThreshold> h;
  const double pi = std::acos(-1.0);
  for (int k = 0; k < 8; ++k) {
    const double a = k * pi / 4.0;
    for (int j = -4; j <= 4; ++j) h.members.push_back({std::cos(a), std::sin(a), 0.5 * j});
  }
  h.vc_dim = 3;
  return h;
}

inline FiniteHypothesisClass<Threshold1D> threshold_class(std::span<const double> cuts) {
  FiniteHypothesisClass<Threshold1D> h;
  for (double t : cuts) h.members.push_back({t});
  h.vc_dim = 1;
  return h;
}

inline std::vector<Point2> points2d(const Tensor& x) {
  if (x.rank() != 2 || x.cols() != 2) throw ShapeError("points2d expects [n,2]");
  std::vector<Point2> out(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) out[i] = {x.at(i, 0), x.at(i, 1)};
  return out;
}

/// 2 * max_h |Pr_S[h=1] - Pr_T[h=1]| by enumeration of H.
template <class X, class Member>
double empirical_hdiv(std::span<const X> s, std::span<const X> t, const FiniteHypothesisClass<Member>& h) {
  require(!s.empty() && !t.empty(), "empirical_hdiv needs non-empty samples");
  h.validate();
  double best = 0.0;
  for (const Member& m : h.members) {
    std::size_t cs = 0, ct = 0;
    for (const X& x : s) cs += m(x) ? 1 : 0;
    for (const X& x : t) ct += m(x) ? 1 : 0;
    const double gap = std::abs(static_cast<double>(cs) / static_cast<double>(s.size()) -
                                static_cast<double>(ct) / static_cast<double>(t.size()));
    best = std::max(best, gap);
  }
  return 2.0 * best;
}

inline double theorem1_rhs(double d, double m, double n, double delta) {
  require(m >= 1 && n >= 1, "sample sizes must be >= 1");
  require(delta > 0 && delta < 1, "delta must lie in (0,1)");
  const double conf = std::log(2.0 / delta);
  return 2.0 * std::sqrt((d * std::log(2.0 * m) + conf) / m) +
         2.0 * std::sqrt((d * std::log(2.0 * n) + conf) / (2.0 * n));
}

// ---------------------------------------------------------------------------
// Scorers over a finite support

/// |support| x |C| table of class scores.
struct Scorer {
  std::size_t classes = 2;
  std::vector<double> values;

  std::size_t points() const { return values.size() / classes; }
  std::span<const double> at(std::size_t x) const {
    return std::span<const double>(values).subspan(x * classes, classes);
  }
  std::size_t predict(std::size_t x) const { return argmax_label(at(x)); }
  double margin_at(std::size_t x, std::size_t c) const { return margin(at(x), c); }

  friend bool operator==(const Scorer&, const Scorer&) = default;
};

inline Scorer operator+(const Scorer& a, const Scorer& b) {
  require(a.classes == b.classes && a.values.size() == b.values.size(), "scorer shapes differ");
  Scorer out = a;
  for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] += b.values[i];
  return out;
}

inline Scorer operator*(double k, const Scorer& a) {
  Scorer out = a;
  for (double& v : out.values) v *= k;
  return out;
}

inline Scorer operator-(const Scorer& a, const Scorer& b) { return a + (-1.0) * b; }

/// E_{x~D} ramp(rho_{f'}(x, h_f(x))).
inline double disparity(std::span<const double> dist, const Scorer& f_prime, const Scorer& f, double rho) {
  double total = 0.0;
  for (std::size_t x = 0; x < dist.size(); ++x) {
    if (dist[x] == 0.0) continue;
    total += dist[x] * ramp(f_prime.margin_at(x, f.predict(x)), rho);
  }
  return total;
}

/// E_{x~D} ramp(rho_f(x, y(x))).
inline double ramp_error(std::span<const double> dist, const Scorer& f, std::span<const std::size_t> labels,
                         double rho) {
  double total = 0.0;
  for (std::size_t x = 0; x < dist.size(); ++x) {
    if (dist[x] != 0.0) total += dist[x] * ramp(f.margin_at(x, labels[x]), rho);
  }
  return total;
}

inline double zero_one_error(std::span<const double> dist, const Scorer& f, std::span<const std::size_t> labels) {
  double total = 0.0;
  for (std::size_t x = 0; x < dist.size(); ++x) {
    if (f.predict(x) != labels[x]) total += dist[x];
  }
  return total;
}

struct MddResult {
  double value = 0.0;
  std::size_t argmax = 0;  // index of the maximizing f' in F
};

namespace detail {
inline void check_scorers(const Scorer& f, const FiniteHypothesisClass<Scorer>& F, const DiscreteDistPair& pair) {
  F.validate();
  pair.validate();
  require(f.points() == pair.size(), "scorer not defined on the full support");
  for (const Scorer& g : F.members) {
    require(g.points() == pair.size() && g.classes == f.classes, "class member not defined on the full support");
  }
}
}  // namespace detail

/// sup over f' in F of disp_S(f', f) - disp_T(f', f).
inline MddResult mdd_bruteforce(const Scorer& f, const FiniteHypothesisClass<Scorer>& F,
                                const DiscreteDistPair& pair, double rho) {
  detail::check_scorers(f, F, pair);
  MddResult r{-std::numeric_limits<double>::infinity(), 0};
  for (std::size_t i = 0; i < F.size(); ++i) {
    const double v = disparity(pair.p_s, F.members[i], f, rho) - disparity(pair.q_t, F.members[i], f, rho);
    if (v > r.value) r = {v, i};
  }
  return r;
}

/// sup over f' in F of E_T ramp(rho_{f'+f0}) - E_S ramp(rho_{f'+f0}).
inline MddResult mdd_shifted(const Scorer& f, const Scorer& f0, const FiniteHypothesisClass<Scorer>& F,
                             const DiscreteDistPair& pair, double rho) {
  detail::check_scorers(f, F, pair);
  MddResult r{-std::numeric_limits<double>::infinity(), 0};
  for (std::size_t i = 0; i < F.size(); ++i) {
    const Scorer g = F.members[i] + f0;
    const double v = disparity(pair.q_t, g, f, rho) - disparity(pair.p_s, g, f, rho);
    if (v > r.value) r = {v, i};
  }
  return r;
}

/// {g + k f0 : g in G, k in -A..A}, enumerated g-major.
inline FiniteHypothesisClass<Scorer> lattice_class(const std::vector<Scorer>& g, const Scorer& f0, int a) {
  require(!g.empty(), "lattice base is empty");
  require(a >= 1, "lattice radius must be >= 1");
  FiniteHypothesisClass<Scorer> out;
  for (const Scorer& base : g) {
    for (int k = -a; k <= a; ++k) out.members.push_back(base + static_cast<double>(k) * f0);
  }
  return out;
}

struct SupportLabels {
  std::vector<std::size_t> source;
  std::vector<std::size_t> target;
};

struct Theorem2Report {
  double err_t = 0.0;               // 0-1 target error of f
  double err_s_rho = 0.0;           // ramp source error of f
  double discrepancy = 0.0;         // shifted MDD term
  double ideal_joint_error = 0.0;   // min over admissible f* of err_S^rho + err_T^rho
  double rhs = 0.0;
  bool holds = false;
};

/// Evaluates every term of err_T(f) <= err_S^rho(f) + d_{f,f0,F} + lambda.
/// f and every candidate f* must satisfy f - f0 in F; f* not meeting it are skipped.
inline Theorem2Report theorem2_check(const Scorer& f, const Scorer& f0, const FiniteHypothesisClass<Scorer>& F,
                                     const DiscreteDistPair& pair, const SupportLabels& labels, double rho) {
  detail::check_scorers(f, F, pair);
  require(labels.source.size() == pair.size() && labels.target.size() == pair.size(), "labels do not cover support");
  const std::set<std::vector<double>> members = [&] {
    std::set<std::vector<double>> s;
    for (const Scorer& g : F.members) s.insert(g.values);
    return s;
  }();
  const auto closed = [&](const Scorer& g) { return members.count((g - f0).values) > 0; };
  require(members.count(f.values) > 0, "f is not a member of F");
  require(closed(f), "closure violated: f - f0 is not in F");

  Theorem2Report r;
  r.err_t = zero_one_error(pair.q_t, f, labels.target);
  r.err_s_rho = ramp_error(pair.p_s, f, labels.source, rho);
  r.discrepancy = mdd_shifted(f, f0, F, pair, rho).value;
  r.ideal_joint_error = std::numeric_limits<double>::infinity();
  for (const Scorer& g : F.members) {
    if (!closed(g)) continue;
    r.ideal_joint_error = std::min(
        r.ideal_joint_error, ramp_error(pair.p_s, g, labels.source, rho) + ramp_error(pair.q_t, g, labels.target, rho));
  }
  r.rhs = r.err_s_rho + r.discrepancy + r.ideal_joint_error;
  r.holds = r.err_t <= r.rhs;
  return r;
}

// ---------------------------------------------------------------------------
// Rademacher complexity

struct MonteCarloEstimate {
  double mean = 0.0;
  double std_error = 0.0;
};

/// values[g][i] = g(x_i). Mean over R sign draws of max_g (1/n) sum delta_i g(x_i).
inline MonteCarloEstimate rademacher_mc(const std::vector<std::vector<double>>& values, std::size_t reps,
                                        std::uint64_t seed) {
  require(!values.empty(), "function class is empty");
  require(reps >= 1, "need at least one repetition");
  const std::size_t n = values.front().size();
  require(n > 0, "rademacher_mc needs a non-empty sample");
  for (const auto& v : values) require(v.size() == n, "class member not defined on the full sample");
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution coin(0.5);
  std::vector<double> sup(reps);
  std::vector<double> sign(n);
  for (std::size_t r = 0; r < reps; ++r) {
    for (double& s : sign) s = coin(rng) ? 1.0 : -1.0;
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& v : values) {
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) acc += sign[i] * v[i];
      best = std::max(best, acc / static_cast<double>(n));
    }
    sup[r] = best;
  }
  MonteCarloEstimate e;
  for (double v : sup) e.mean += v;
  e.mean /= static_cast<double>(reps);
  if (reps > 1) {
    double var = 0.0;
    for (double v : sup) var += (v - e.mean) * (v - e.mean);
    var /= static_cast<double>(reps - 1);
    e.std_error = std::sqrt(var / static_cast<double>(reps));
  }
  return e;
}

/// Exact expectation over all 2^n sign vectors; n <= 24.
inline double rademacher_exact(const std::vector<std::vector<double>>& values) {
  require(!values.empty(), "function class is empty");
  const std::size_t n = values.front().size();
  require(n > 0 && n <= 24, "rademacher_exact needs 1 <= n <= 24");
  double total = 0.0;
  for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& v : values) {
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) acc += ((mask >> i) & 1u) ? v[i] : -v[i];
      best = std::max(best, acc / static_cast<double>(n));
    }
    total += best;
  }
  return total / static_cast<double>(1u << n);
}

template <class X, class Fn>
MonteCarloEstimate rademacher_mc(const FiniteHypothesisClass<Fn>& g, std::span<const X> sample, std::size_t reps,
                                 std::uint64_t seed) {
  g.validate();
  require(!sample.empty(), "rademacher_mc needs a non-empty sample");
  std::vector<std::vector<double>> values;
  for (const Fn& fn : g.members) {
    std::vector<double> row;
    for (const X& x : sample) row.push_back(static_cast<double>(fn(x)));
    values.push_back(std::move(row));
  }
  return rademacher_mc(values, reps, seed);
}

// ---------------------------------------------------------------------------
// Adversarial-loss generalization bound

struct BoundInputs {
  double eps_s = 0.0;
  double eps_t = 0.0;
  double lambda_s_minus = 0.5, lambda_s_plus = 0.5;
  double lambda_t_minus = 0.5, lambda_t_plus = 0.5;
  double delta = 0.1;
  double m = 1;
  double n = 1;

  void validate() const {
    const auto ok = [](double lo, double hi) { return lo > 0.0 && lo <= hi && hi < 1.0; };
    require(ok(lambda_s_minus, lambda_s_plus), "source lambda bounds must satisfy 0 < lo <= hi < 1");
    require(ok(lambda_t_minus, lambda_t_plus), "target lambda bounds must satisfy 0 < lo <= hi < 1");
    require(delta > 0.0 && delta < 1.0, "delta must lie in (0,1)");
    require(m >= 1 && n >= 1, "sample sizes must be >= 1");
  }
};

struct Theorem3Bound {
  double empirical = 0.0;
  double source_coef = 0.0;
  double target_coef = 0.0;
  double target_coef_complement = 0.0;  // lambda_t read as 1 - lambda_t
  double source_term = 0.0;
  double target_term = 0.0;
  double confidence = 0.0;
  double total = 0.0;
  double total_complement = 0.0;
};

inline double theorem3_source_coef(double eps_s, double lo, double hi) {
  const double e = std::expm1(eps_s);
  return std::max(2.0 / (e * hi + 1.0), 2.0 / (e * lo + 1.0));
}

inline double theorem3_target_coef(double eps_t, double lo, double hi) {
  const double e = std::exp(eps_t);
  const auto term = [&](double l) { return 2.0 * e / ((1.0 - l) * e + l); };
  return std::max(term(hi), term(lo));
}

/// Right-hand side assembled term by term. `empirical` is the sum of the two
/// sample-average log terms; rs, rt are Rademacher estimates.
inline Theorem3Bound theorem3_rhs(double empirical_source, double empirical_target, const BoundInputs& in,
                                  double rs, double rt) {
  in.validate();
  Theorem3Bound b;
  b.empirical = empirical_source + empirical_target;
  b.source_coef = theorem3_source_coef(in.eps_s, in.lambda_s_minus, in.lambda_s_plus);
  b.target_coef = theorem3_target_coef(in.eps_t, in.lambda_t_minus, in.lambda_t_plus);
  b.target_coef_complement = theorem3_target_coef(in.eps_t, 1.0 - in.lambda_t_plus, 1.0 - in.lambda_t_minus);
  b.source_term = b.source_coef * rs;
  b.target_term = b.target_coef * rt;
  const double log_inv = std::log(1.0 / in.delta);
  b.confidence = std::sqrt(log_inv / (2.0 * in.m)) + std::sqrt(log_inv / (2.0 * in.n));
  b.total = b.empirical + b.source_term + b.target_term + b.confidence;
  b.total_complement = b.empirical + b.source_term + b.target_coef_complement * rt + b.confidence;
  return b;
}

// ---------------------------------------------------------------------------
// Equilibrium of the double-head objective

/// Pointwise maximizer p/(p+q) of p log D + q log(1-D); 0.5 where p+q = 0.
inline std::vector<double> optimal_discriminator(const DiscreteDistPair& pair) {
  pair.validate();
  std::vector<double> d(pair.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double z = pair.p_s[i] + pair.q_t[i];
    d[i] = z > 0.0 ? pair.p_s[i] / z : 0.5;
  }
  return d;
}

/// p log D + q log(1-D) at one support point, with 0 log 0 = 0.
inline double discriminator_objective(double p, double q, double d) {
  const auto term = [](double w, double v) { return w == 0.0 ? 0.0 : w * std::log(v); };
  return term(p, d) + term(q, 1.0 - d);
}

/// Unconstrained per-point logits trained by gradient ascent on the
/// discriminator objective; returns sigmoid(logit).
inline std::vector<double> train_tabular_discriminator(const DiscreteDistPair& pair, double lr = 4.0,
                                                       std::size_t iters = 200000) {
  pair.validate();
  std::vector<double> theta(pair.size(), 0.0);
  const auto sig = [](double t) { return 1.0 / (1.0 + std::exp(-t)); };
  for (std::size_t it = 0; it < iters; ++it) {
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double d = sig(theta[i]);
      theta[i] += lr * (pair.p_s[i] * (1.0 - d) - pair.q_t[i] * d);
    }
  }
  std::vector<double> out(theta.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = sig(theta[i]);
  return out;
}

/// KL(a || b) in nats; 0 log(0/.) = 0.
inline double kl_divergence(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), "kl: length mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] == 0.0) continue;
    require(b[i] > 0.0, "kl: mixture lacks support");
    total += a[i] * std::log(a[i] / b[i]);
  }
  return total;
}

inline double prop1_L1(const DiscreteDistPair& pair) {
  pair.validate();
  const std::size_t k = pair.size();
  std::vector<double> half(k), t3(k), s3(k);
  for (std::size_t i = 0; i < k; ++i) {
    half[i] = 0.5 * pair.q_t[i] + 0.5 * pair.p_s[i];
    t3[i] = 0.75 * pair.q_t[i] + 0.25 * pair.p_s[i];
    s3[i] = 0.75 * pair.p_s[i] + 0.25 * pair.q_t[i];
  }
  return 4.0 * (kl_divergence(t3, half) + kl_divergence(half, t3) + kl_divergence(s3, half) +
                kl_divergence(half, s3));
}

namespace detail {
inline double tv_weight(double p, double q) {
  const double r = (p - q) / (p + q);
  return 1.0 / (4.0 - r * r);
}

inline void check_score(const DiscreteDistPair& pair, std::span<const double> score) {
  require(score.size() == pair.size(), "score does not cover the support");
  for (double s : score) require(s >= 0.0 && s <= 1.0, "score outside [0,1]");
}
}  // namespace detail

inline double prop1_L2(const DiscreteDistPair& pair, std::span<const double> score) {
  pair.validate();
  detail::check_score(pair, score);
  double total = 0.0;
  for (std::size_t i = 0; i < pair.size(); ++i) {
    const double p = pair.p_s[i], q = pair.q_t[i];
    if (p + q == 0.0) continue;
    total += (1.0 - 2.0 * score[i]) * (q - p) * detail::tv_weight(p, q);
  }
  return total;
}

struct L2TildeGap {
  double l2 = 0.0;
  double l2_tilde = 0.0;          // 2 sum (eps - sigma)(q - p) w
  double gap = 0.0;               // |l2_tilde - l2|
  double l2_tilde_literal = 0.0;  // 2 sum (sigma - eps)(q - p) w
  double gap_literal = 0.0;
  double bound = 0.0;             // |1 - 2 eps| / 12
  bool sign_consistent = false;   // sigma > eps where p > q, sigma < eps where p < q
  bool holds = false;
};

inline L2TildeGap prop1_L2_tilde_gap(const DiscreteDistPair& pair, std::span<const double> score, double eps) {
  L2TildeGap g;
  g.l2 = prop1_L2(pair, score);
  g.sign_consistent = true;
  for (std::size_t i = 0; i < pair.size(); ++i) {
    const double p = pair.p_s[i], q = pair.q_t[i];
    if (p > q && !(score[i] > eps)) g.sign_consistent = false;
    if (p < q && !(score[i] < eps)) g.sign_consistent = false;
    if (p + q == 0.0) continue;
    const double w = detail::tv_weight(p, q);
    g.l2_tilde += 2.0 * (eps - score[i]) * (q - p) * w;
    g.l2_tilde_literal += 2.0 * (score[i] - eps) * (q - p) * w;
  }
  g.gap = std::abs(g.l2_tilde - g.l2);
  g.gap_literal = std::abs(g.l2_tilde_literal - g.l2);
  g.bound = std::abs(1.0 - 2.0 * eps) / 12.0;
  g.holds = g.gap <= g.bound + 1e-15;
  return g;
}

// ---------------------------------------------------------------------------
// Fixture text format: support size, p_s row, q_t row, optional score row.

struct PairFixture {
  DiscreteDistPair pair;
  std::optional<std::vector<double>> score;
};

inline PairFixture read_pair_fixture(std::istream& in) {
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    if (line.find_first_not_of(" \t\r") != std::string::npos) lines.push_back(line);
  }
  if (lines.size() < 3 || lines.size() > 4) throw FormatError("fixture needs 3 or 4 non-empty lines");
  std::size_t k = 0;
  {
    std::istringstream ls(lines[0]);
    if (!(ls >> k) || k == 0) throw FormatError("bad support size: " + lines[0]);
  }
  const auto row = [&](const std::string& s) {
    std::istringstream ls(s);
    std::vector<double> v;
    double x = 0;
    while (ls >> x) v.push_back(x);
    if (!ls.eof() || v.size() != k) throw FormatError("fixture row has wrong length: " + s);
    return v;
  };
  PairFixture f;
  f.pair.p_s = row(lines[1]);
  f.pair.q_t = row(lines[2]);
  if (lines.size() == 4) f.score = row(lines[3]);
  try {
    f.pair.validate();
    if (f.score) detail::check_score(f.pair, *f.score);
  } catch (const ContractError& e) {
    throw FormatError(std::string("invalid fixture: ") + e.what());
  }
  return f;
}

inline void write_pair_fixture(std::ostream& out, const DiscreteDistPair& pair,
                               const std::optional<std::vector<double>>& score = std::nullopt) {
  const auto row = [&](const std::vector<double>& v) {
    std::ostringstream ls;
    ls.precision(17);
    for (std::size_t i = 0; i < v.size(); ++i) ls << (i ? " " : "") << v[i];
    out << ls.str() << '\n';
  };
  out << pair.size() << '\n';
  row(pair.p_s);
  row(pair.q_t);
  if (score) row(*score);
}

}  // namespace uda
