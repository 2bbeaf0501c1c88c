// uda_lab: run, sweep, theory and report front end.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "uda/config.hpp"
#include "uda/runner.hpp"
#include "uda/suites.hpp"

namespace fs = std::filesystem;
using namespace uda;

namespace {

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string mode;
  std::string gamma_s, gamma_t, mem_per_class;
};

void add_common(CLI::App* app, Flags& f) {
  app->add_option("--config", f.config, "config file (key = value, [train] [data] [sweep] [theory])");
  app->add_option("--seed", f.seed, "run a single seed instead of the configured list");
  app->add_option("--out", f.out, "output directory");
}

void add_train(CLI::App* app, Flags& f) {
  app->add_option("--mode", f.mode, "discriminator mode")->check(CLI::IsMember({"mdd", "dann", "cdan", "hrn"}));
  app->add_option("--gamma-s", f.gamma_s, "weight of the frozen source-only head, [0,1]");
  app->add_option("--gamma-t", f.gamma_t, "weight of the target head, [0,1]");
  app->add_option("--mem-per-class", f.mem_per_class, "replay memory per class");
}

RunConfig load(const Flags& f) {
  RunConfig rc = f.config.empty() ? RunConfig{} : parse_config(fs::path(f.config));
  if (!f.mode.empty()) set_config_key(rc, "train", "mode", f.mode);
  if (!f.gamma_s.empty()) set_config_key(rc, "train", "gamma_s", f.gamma_s);
  if (!f.gamma_t.empty()) set_config_key(rc, "train", "gamma_t", f.gamma_t);
  if (!f.mem_per_class.empty()) set_config_key(rc, "train", "mem_per_class", f.mem_per_class);
  if (f.seed) rc.seeds = {*f.seed};
  if (!f.out.empty()) rc.out = f.out;
  rc.validate();
  return rc;
}

int cmd_run(const Flags& f) {
  RunConfig rc = load(f);
  rc.sweep.axis = SweepAxis::none;
  const auto r = run_sweep(rc, rc.out);
  for (const auto& o : r.outcomes) {
    if (o.failed) {
      std::cerr << "seed " << o.seed << ": " << o.error << '\n';
      continue;
    }
    std::printf("seed %llu  target %.2f  source %.2f  forgetting %.2f  source-only target %.2f\n",
                static_cast<unsigned long long>(o.seed), o.metrics.target_acc, o.metrics.source_acc,
                o.metrics.forgetting, o.metrics.source_only_target_acc);
  }
  std::printf("runs.csv hash %s\n", hex64(r.hash).c_str());
  return r.failed ? exit_divergence : exit_ok;
}

int cmd_sweep(const Flags& f) {
  const RunConfig rc = load(f);
  if (rc.sweep.axis == SweepAxis::none) {
    std::cerr << "sweep needs [sweep] axis = memory | gamma_s | gamma_t | heatmap | modes\n";
    return exit_usage;
  }
  const auto r = run_sweep(rc, rc.out);
  if (r.failed) std::cerr << r.failed << " run(s) diverged and were recorded as failed rows\n";
  std::printf("runs.csv hash %s\n", hex64(r.hash).c_str());
  return emit_report(rc.out, std::cout, std::cerr);
}

int cmd_theory(const Flags& f) {
  RunConfig rc = load(f);
  if (f.seed) rc.theory.seed = *f.seed;
  const auto& t = rc.theory;
  fs::create_directories(rc.out);
  std::ofstream csv(fs::path(rc.out) / "theory.csv", std::ios::trunc);
  csv << "check,value,bound,verdict\n";
  // info rows are reported without a verdict.
  const auto row = [&](const std::string& name, double value, double bound, bool holds, bool info = false) {
    csv << name << ',' << format_double(value, 9) << ',' << format_double(bound, 9) << ','
        << (info ? "info" : (holds ? "1" : "0")) << '\n';
    std::printf("%-34s %14.9f %14.9f  %s\n", name.c_str(), value, bound,
                info ? "info" : (holds ? "ok" : "VIOLATED"));
  };

  const auto t1 = theorem1_trend(t);
  for (std::size_t i = 0; i < t1.sizes.size(); ++i) {
    const double m = static_cast<double>(t1.sizes[i]);
    row("hdiv_gap_m" + std::to_string(t1.sizes[i]), t1.mean_gap[i], theorem1_rhs(3, m, m, t.delta), true, true);
  }
  row("hdiv_trend_non_increasing", t1.non_increasing, 1, t1.non_increasing);
  row("hdiv_within_bound_fraction", t1.within_fraction(), 0.9, t1.within_fraction() >= 0.9);

  const auto t2 = theorem2_suite(t.lattice_instances, t.seed, t.rho);
  row("lattice_inequality_holds", static_cast<double>(t2.holds), static_cast<double>(t2.instances),
      t2.holds == t2.instances);

  const auto p1 = prop1_suite(t.prop1_instances, t.seed);
  row("optimal_disc_grid_matches", static_cast<double>(p1.grid_matches), static_cast<double>(p1.grid_points),
      p1.grid_matches == p1.grid_points);
  row("tabular_disc_max_error", p1.tabular_max_error, 0.02, p1.tabular_max_error <= 0.02);
  row("l1_min", p1.l1_min, 0.0, p1.l1_min >= 0.0);
  row("l1_equal_max", p1.l1_equal_max, 1e-9, p1.l1_equal_max <= 1e-9);
  row("l1_perturbed_min", p1.l1_perturbed_min, 1e-9, p1.l1_perturbed_min > 1e-9);
  row("l1_disjoint_example", p1.l1_example, std::log(9.0), std::abs(p1.l1_example - std::log(9.0)) <= 1e-6);
  row("l2_tilde_gap_held", static_cast<double>(p1.l2_held), static_cast<double>(p1.l2_checked),
      p1.l2_held == p1.l2_checked);
  row("l2_tilde_literal_sign_held", static_cast<double>(p1.l2_literal_held), static_cast<double>(p1.l2_checked),
      p1.l2_literal_held == p1.l2_checked, true);
  std::printf("  (%zu sign-inconsistent draws filtered)\n", p1.l2_filtered);

  const auto b = theorem3_fixture();
  row("bound_source_coef", b.source_coef, 0, true, true);
  row("bound_target_coef", b.target_coef, 0, true, true);
  row("bound_target_coef_complement", b.target_coef_complement, 0, true, true);
  row("bound_confidence", b.confidence, 0, true, true);
  row("bound_total", b.total, 0, true, true);
  const auto in = theorem3_fixture_inputs();
  const double far = theorem3_source_coef(30.0, in.lambda_s_minus, in.lambda_s_plus);
  row("bound_source_coef_eps30", far, 1e-6, far < 1e-6);
  return exit_ok;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Continual domain adaptation lab"};
  app.require_subcommand(1);
  Flags f;
  auto* run = app.add_subcommand("run", "train one configuration for each seed");
  add_common(run, f);
  add_train(run, f);
  auto* sweep = app.add_subcommand("sweep", "run the configured sweep axis");
  add_common(sweep, f);
  add_train(sweep, f);
  auto* theory = app.add_subcommand("theory", "run the bound and divergence checks");
  add_common(theory, f);
  auto* report = app.add_subcommand("report", "summarize a sweep directory");
  report->add_option("--out", f.out, "sweep output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return exit_usage;
  }

  try {
    if (*run) return cmd_run(f);
    if (*sweep) return cmd_sweep(f);
    if (*theory) return cmd_theory(f);
    return emit_report(f.out, std::cout, std::cerr);
  } catch (const FormatError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return exit_usage;
  } catch (const ContractError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_usage;
  } catch (const NumericError& e) {
    std::cerr << "diverged: " << e.what() << '\n';
    return exit_divergence;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_usage;
  }
}
