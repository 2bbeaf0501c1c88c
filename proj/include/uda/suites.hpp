#pragma once

// Randomized batteries over the theory_lab primitives, shared by the CLI
// `theory` command and the acceptance binary.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

#include "uda/config.hpp"
#include "uda/domains.hpp"
#include "uda/theory.hpp"
#include "uda/trainer.hpp"

namespace uda {

struct Theorem1Trend {
  std::vector<std::size_t> sizes;
  std::vector<double> mean_gap;  // 20-seed mean of |d(m) - d(oracle)| per size
  double oracle_mean = 0.0;
  std::size_t runs = 0;
  std::size_t within = 0;  // runs with gap <= theorem1_rhs(d, m, m, delta)
  bool non_increasing = false;
  double within_fraction() const { return runs ? static_cast<double>(within) / static_cast<double>(runs) : 0.0; }
};

/// Zero-shift two-moons (rotation 0) against the default linear class.
inline Theorem1Trend theorem1_trend(const TheorySpec& spec) {
  const auto h = default_linear_class();
  const double d = static_cast<double>(h.vc_dim.value_or(3));
  Theorem1Trend r;
  r.sizes = spec.sizes;
  r.mean_gap.assign(spec.sizes.size(), 0.0);
  for (std::size_t s = 0; s < spec.seeds; ++s) {
    const std::uint64_t seed = derive_seed(spec.seed, 100 + s);
    auto [big_s, big_t] = gen_two_moons(spec.oracle_m, 0.1, 0.0, seed);
    const auto os = points2d(big_s.x), ot = points2d(big_t.x);
    const double oracle = empirical_hdiv<Point2>(os, ot, h);
    r.oracle_mean += oracle / static_cast<double>(spec.seeds);
    for (std::size_t i = 0; i < spec.sizes.size(); ++i) {
      const std::size_t m = spec.sizes[i];
      auto [ss, tt] = gen_two_moons(m, 0.1, 0.0, derive_seed(seed, m));
      const auto ps = points2d(ss.x), pt = points2d(tt.x);
      const double gap = std::abs(empirical_hdiv<Point2>(ps, pt, h) - oracle);
      r.mean_gap[i] += gap / static_cast<double>(spec.seeds);
      ++r.runs;
      const double md = static_cast<double>(m);
      if (gap <= theorem1_rhs(d, md, md, spec.delta)) ++r.within;
    }
  }
  r.non_increasing = true;
  for (std::size_t i = 1; i < r.mean_gap.size(); ++i) {
    if (r.mean_gap[i] > r.mean_gap[i - 1]) r.non_increasing = false;
  }
  return r;
}

// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<double> dyadic_probabilities(std::mt19937_64& rng, std::size_t k) {
  std::uniform_int_distribution<int> c(0, 1024);
  std::vector<int> cuts = {0, 1024};
  for (std::size_t i = 0; i + 1 < k; ++i) cuts.push_back(c(rng));
  std::sort(cuts.begin(), cuts.end());
  std::vector<double> out(k);
  for (std::size_t i = 0; i < k; ++i) out[i] = (cuts[i + 1] - cuts[i]) / 1024.0;
  return out;
}

inline std::vector<double> random_probabilities(std::mt19937_64& rng, std::size_t k, double zero_prob) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> v(k);
  double total = 0.0;
  for (double& x : v) {
    x = u(rng) < zero_prob ? 0.0 : u(rng) + 1e-3;
    total += x;
  }
  if (total == 0.0) v[0] = total = 1.0;
  for (double& x : v) x /= total;
  return v;
}

inline Scorer integer_scorer(std::mt19937_64& rng, std::size_t points, std::size_t classes, int lo, int hi) {
  std::uniform_int_distribution<int> v(lo, hi);
  Scorer s{classes, std::vector<double>(points * classes)};
  for (double& x : s.values) x = v(rng);
  return s;
}

}  // namespace detail

struct Theorem2Suite {
  std::size_t instances = 0;
  std::size_t holds = 0;
  double worst_slack = 0.0;  // min over instances of rhs - lhs
};

/// Random integer lattice classes {g + k f0}, dyadic distributions: every sum is exact.
inline Theorem2Suite theorem2_suite(std::size_t instances, std::uint64_t seed, double rho) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> points(2, 6), classes(2, 4), base_size(2, 6);
  Theorem2Suite r;
  r.worst_slack = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < instances; ++i) {
    const std::size_t k = points(rng), c = classes(rng);
    const Scorer f0 = detail::integer_scorer(rng, k, c, -2, 2);
    std::vector<Scorer> g;
    const std::size_t nb = base_size(rng);
    for (std::size_t j = 0; j < nb; ++j) g.push_back(detail::integer_scorer(rng, k, c, -3, 3));
    const auto F = lattice_class(g, f0, 2);
    const DiscreteDistPair pair{{}, detail::dyadic_probabilities(rng, k), detail::dyadic_probabilities(rng, k)};
    std::uniform_int_distribution<std::size_t> label(0, c - 1), pick(0, nb - 1);
    SupportLabels y;
    for (std::size_t x = 0; x < k; ++x) {
      y.source.push_back(label(rng));
      y.target.push_back(label(rng));
    }
    std::uniform_int_distribution<int> shift(-1, 2);  // k > -A
    const Scorer f = g[pick(rng)] + static_cast<double>(shift(rng)) * f0;
    const auto rep = theorem2_check(f, f0, F, pair, y, rho);
    ++r.instances;
    r.holds += rep.holds ? 1 : 0;
    r.worst_slack = std::min(r.worst_slack, rep.rhs - rep.err_t);
  }
  return r;
}

// ---------------------------------------------------------------------------

struct Prop1Suite {
  std::size_t grid_points = 0;
  std::size_t grid_matches = 0;   // optimal value >= best of the 1001-point grid
  double tabular_max_error = 0.0; // over supports of size <= 16
  double l1_min = 0.0;            // min over random pairs
  double l1_equal_max = 0.0;      // max over S = T pairs
  double l1_perturbed_min = 0.0;  // min over S != T pairs
  double l1_example = 0.0;        // p = [1,0], q = [0,1]
  std::size_t l2_checked = 0;
  std::size_t l2_held = 0;
  std::size_t l2_literal_held = 0;
  std::size_t l2_filtered = 0;    // sign-inconsistent draws skipped
};

inline Prop1Suite prop1_suite(std::size_t instances, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> size(2, 16);
  Prop1Suite r;
  r.l1_min = r.l1_perturbed_min = std::numeric_limits<double>::infinity();

  for (std::size_t i = 0; i < 50; ++i) {
    const std::size_t k = size(rng);
    const DiscreteDistPair pair{{}, detail::random_probabilities(rng, k, 0.1),
                                detail::random_probabilities(rng, k, 0.1)};
    const auto d = optimal_discriminator(pair);
    for (std::size_t x = 0; x < k; ++x) {
      double best = -std::numeric_limits<double>::infinity();
      for (int g = 0; g <= 1000; ++g) {
        best = std::max(best, discriminator_objective(pair.p_s[x], pair.q_t[x], g / 1000.0));
      }
      ++r.grid_points;
      if (discriminator_objective(pair.p_s[x], pair.q_t[x], d[x]) >= best - 1e-15) ++r.grid_matches;
    }
    if (i < 10) {
      const auto t = train_tabular_discriminator(pair);
      for (std::size_t x = 0; x < k; ++x) {
        r.tabular_max_error = std::max(r.tabular_max_error, std::abs(t[x] - d[x]));
      }
    }
  }

  for (std::size_t i = 0; i < 200; ++i) {
    const std::size_t k = size(rng);
    DiscreteDistPair pair{{}, detail::random_probabilities(rng, k, 0.2), detail::random_probabilities(rng, k, 0.2)};
    r.l1_min = std::min(r.l1_min, prop1_L1(pair));
    pair.q_t = pair.p_s;
    r.l1_equal_max = std::max(r.l1_equal_max, prop1_L1(pair));
    // Move 0.01 of mass off the heaviest point.
    const auto top = static_cast<std::size_t>(std::max_element(pair.q_t.begin(), pair.q_t.end()) - pair.q_t.begin());
    pair.q_t[top] -= 0.01;
    pair.q_t[(top + 1 + i % (k - 1)) % k] += 0.01;
    r.l1_perturbed_min = std::min(r.l1_perturbed_min, prop1_L1(pair));
  }
  r.l1_example = prop1_L1({{}, {1.0, 0.0}, {0.0, 1.0}});

  while (r.l2_checked < instances) {
    const std::size_t k = size(rng);
    const DiscreteDistPair pair{{}, detail::random_probabilities(rng, k, 0.1),
                                detail::random_probabilities(rng, k, 0.1)};
    const double eps = u(rng);
    std::vector<double> score(k);
    for (std::size_t x = 0; x < k; ++x) {
      // Mostly sign-consistent draws; a few are not and get filtered.
      const double p = pair.p_s[x], q = pair.q_t[x];
      if (u(rng) < 0.02) score[x] = u(rng);
      else score[x] = p > q ? eps + (1.0 - eps) * u(rng) : (p < q ? eps * u(rng) : u(rng));
    }
    const auto g = prop1_L2_tilde_gap(pair, score, eps);
    if (!g.sign_consistent) {
      ++r.l2_filtered;
      continue;
    }
    ++r.l2_checked;
    r.l2_held += g.holds ? 1 : 0;
    r.l2_literal_held += g.gap_literal <= g.bound + 1e-15 ? 1 : 0;
  }
  return r;
}

// ---------------------------------------------------------------------------

/// Fixed bound-assembly instance mirrored by tests/fixtures/theory_oracle.py.
inline BoundInputs theorem3_fixture_inputs() {
  BoundInputs in;
  in.eps_s = 0.7;
  in.eps_t = 0.3;
  in.lambda_s_minus = 0.2;
  in.lambda_s_plus = 0.6;
  in.lambda_t_minus = 0.15;
  in.lambda_t_plus = 0.45;
  in.delta = 0.05;
  in.m = 200;
  in.n = 150;
  return in;
}

inline Theorem3Bound theorem3_fixture() { return theorem3_rhs(-0.6, -0.5, theorem3_fixture_inputs(), 0.12, 0.2); }

}  // namespace uda
