#pragma once

// Single runs and sweeps: a worker pool executes (sweep point x seed) jobs,
// rows reach runs.csv through one ordered appender so the file is
// byte-identical regardless of thread count or completion order.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "uda/config.hpp"
#include "uda/trainer.hpp"

namespace uda {

inline constexpr const char* kRunsHeader =
    "run_id,seed,epoch,phase,target_acc,source_acc,forgetting,d_psi_t,d_psi,saturations";

enum ExitCode : int { exit_ok = 0, exit_usage = 1, exit_no_data = 2, exit_divergence = 3 };

inline std::string format_double(double v, int precision = 6) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", precision, v);
  return buf;
}

inline std::string format_axis(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

inline std::string csv_row(const MetricsRecord& m) {
  std::ostringstream os;
  os << m.run_id << ',' << m.seed << ',' << m.epoch << ',' << m.phase << ',' << format_double(m.target_acc) << ','
     << format_double(m.source_acc) << ',' << format_double(m.forgetting) << ',' << format_double(m.d_psi_t)
     << ',' << format_double(m.d_psi) << ',' << m.saturations;
  return os.str();
}

/// Row recorded for a run that diverged.
inline std::string failed_row(const std::string& run_id, std::uint64_t seed) {
  return run_id + ',' + std::to_string(seed) + ",0,failed,nan,nan,nan,nan,nan,0";
}

// ---------------------------------------------------------------------------

struct RunPoint {
  std::string group;  // also the run_id column
  double x = 0.0;
  double y = 0.0;  // second coordinate for the heatmap
  TrainConfig cfg;
};

struct RunOutcome {
  std::string group;
  double x = 0.0;
  double y = 0.0;
  std::uint64_t seed = 0;
  bool failed = false;
  std::string error;
  FinalMetrics metrics;
  std::vector<MetricsRecord> rows;
};

inline RunOutcome execute(const RunPoint& p, const DataSpec& data) {
  RunOutcome o{p.group, p.x, p.y, p.cfg.seed, false, {}, {}, {}};
  try {
    Trainer tr(p.cfg, build_stream(data, p.cfg.seed));
    tr.run_all();
    o.metrics = tr.final_metrics();
    o.rows = tr.history();
  } catch (const NumericError& e) {
    o.failed = true;
    o.error = e.what();
  }
  return o;
}

/// Writes per-job text strictly in job order.
class OrderedAppender {
 public:
  OrderedAppender(std::ostream& out, std::size_t jobs) : out_(out), pending_(jobs) {}

  void submit(std::size_t index, std::string text) {
    std::lock_guard<std::mutex> lock(mu_);
    pending_.at(index) = std::move(text);
    while (next_ < pending_.size() && pending_[next_]) {
      out_ << *pending_[next_];
      pending_[next_].reset();
      ++next_;
    }
    out_.flush();
  }

  std::size_t written() const { return next_; }

 private:
  std::ostream& out_;
  std::vector<std::optional<std::string>> pending_;
  std::size_t next_ = 0;
  std::mutex mu_;
};

/// Worker count: hardware threads capped by UDA_LAB_THREADS and the job count.
inline std::size_t worker_count(std::size_t jobs) {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("UDA_LAB_THREADS")) {
    char* end = nullptr;
    const unsigned long cap = std::strtoul(env, &end, 10);
    if (end != env && *end == '\0' && cap >= 1) n = std::min<std::size_t>(n, cap);
  }
  return std::max<std::size_t>(1, std::min(n, jobs));
}

inline std::vector<RunOutcome> run_points(const std::vector<RunPoint>& points, const DataSpec& data,
                                          std::ostream& runs_csv, std::size_t threads) {
  std::vector<RunOutcome> results(points.size());
  OrderedAppender appender(runs_csv, points.size());
  std::atomic<std::size_t> next{0};
  const auto work = [&] {
    for (std::size_t i = next++; i < points.size(); i = next++) {
      results[i] = execute(points[i], data);
      std::string text;
      if (results[i].failed) {
        text = failed_row(points[i].group, points[i].cfg.seed) + '\n';
      } else {
        for (const auto& r : results[i].rows) text += csv_row(r) + '\n';
      }
      appender.submit(i, std::move(text));
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  return results;
}

// ---------------------------------------------------------------------------

inline TrainConfig with_seed(TrainConfig c, const std::string& group, std::uint64_t seed) {
  c.seed = seed;
  c.run_id = group;
  return c;
}

/// One job per (axis point x seed), points outermost.
inline std::vector<RunPoint> sweep_points(const RunConfig& rc) {
  std::vector<RunPoint> pts;
  const auto add = [&](const std::string& group, double x, double y, const TrainConfig& base) {
    for (std::uint64_t s : rc.seeds) pts.push_back({group, x, y, with_seed(base, group, s)});
  };
  switch (rc.sweep.axis) {
    case SweepAxis::none:
      add("run", 0, 0, rc.train);
      break;
    case SweepAxis::memory:
      for (std::size_t n : rc.sweep.memory) {
        TrainConfig c = rc.train;
        c.mem_per_class = n;
        add("mem=" + std::to_string(n), static_cast<double>(n), 0, c);
      }
      break;
    case SweepAxis::gamma_s:
    case SweepAxis::gamma_t:
      for (double g : rc.sweep.gamma) {
        TrainConfig c = rc.train;
        const bool src = rc.sweep.axis == SweepAxis::gamma_s;
        (src ? c.weights.gamma_s : c.weights.gamma_t) = g;
        add(std::string(src ? "gamma_s=" : "gamma_t=") + format_axis(g), g, 0, c);
      }
      break;
    case SweepAxis::heatmap:
      for (double lr : rc.sweep.lr) {
        for (std::size_t e : rc.sweep.epochs) {
          TrainConfig c = rc.train;
          c.schedule.lr_source_disc = lr;
          c.schedule.t2 = e;
          add("lr=" + format_axis(lr) + "/t2=" + std::to_string(e), lr, static_cast<double>(e), c);
        }
      }
      break;
    case SweepAxis::modes:
      for (std::size_t i = 0; i < rc.sweep.modes.size(); ++i) {
        add(to_string(rc.sweep.modes[i]), static_cast<double>(i), 0, apply_variant(rc.train, rc.sweep.modes[i]));
      }
      break;
  }
  return pts;
}

struct GroupSummary {
  std::string group;
  double x = 0.0;
  double y = 0.0;
  std::size_t runs = 0;
  std::size_t failed = 0;
  double target_mean = 0.0, target_std = 0.0;
  double source_mean = 0.0, source_std = 0.0;
  double forgetting_mean = 0.0, forgetting_std = 0.0;
  double source_only_mean = 0.0;
};

inline std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {std::nan(""), std::nan("")};
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  if (v.size() < 2) return {m, 0.0};
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return {m, std::sqrt(s / static_cast<double>(v.size() - 1))};
}

/// Groups in first-appearance order.
inline std::vector<GroupSummary> summarize(const std::vector<RunOutcome>& outcomes) {
  std::vector<GroupSummary> out;
  std::map<std::string, std::size_t> index;
  std::vector<std::vector<const RunOutcome*>> members;
  for (const auto& o : outcomes) {
    auto it = index.find(o.group);
    if (it == index.end()) {
      it = index.emplace(o.group, out.size()).first;
      out.push_back({o.group, o.x, o.y});
      members.emplace_back();
    }
    members[it->second].push_back(&o);
  }
  for (std::size_t g = 0; g < out.size(); ++g) {
    std::vector<double> t, s, f, so;
    for (const RunOutcome* o : members[g]) {
      ++out[g].runs;
      if (o->failed) {
        ++out[g].failed;
        continue;
      }
      t.push_back(o->metrics.target_acc);
      s.push_back(o->metrics.source_acc);
      f.push_back(o->metrics.forgetting);
      so.push_back(o->metrics.source_only_target_acc);
    }
    std::tie(out[g].target_mean, out[g].target_std) = mean_std(t);
    std::tie(out[g].source_mean, out[g].source_std) = mean_std(s);
    std::tie(out[g].forgetting_mean, out[g].forgetting_std) = mean_std(f);
    out[g].source_only_mean = mean_std(so).first;
  }
  return out;
}

inline constexpr const char* kSummaryHeader =
    "group,x,y,runs,failed,target_mean,target_std,source_mean,source_std,forgetting_mean,forgetting_std,"
    "source_only_mean";

inline void write_summary(std::ostream& os, const std::vector<GroupSummary>& groups) {
  os << kSummaryHeader << '\n';
  for (const auto& g : groups) {
    os << g.group << ',' << format_axis(g.x) << ',' << format_axis(g.y) << ',' << g.runs << ',' << g.failed << ','
       << format_double(g.target_mean) << ',' << format_double(g.target_std) << ','
       << format_double(g.source_mean) << ',' << format_double(g.source_std) << ','
       << format_double(g.forgetting_mean) << ',' << format_double(g.forgetting_std) << ','
       << format_double(g.source_only_mean) << '\n';
  }
}

inline std::vector<GroupSummary> read_summary(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != kSummaryHeader) throw FormatError("summary.csv: bad header");
  std::vector<GroupSummary> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 12) throw FormatError("summary.csv: row has " + std::to_string(f.size()) + " columns");
    const auto d = [](const std::string& s) { return s == "nan" ? std::nan("") : std::stod(s); };
    GroupSummary g;
    g.group = f[0];
    g.x = d(f[1]);
    g.y = d(f[2]);
    g.runs = std::stoul(f[3]);
    g.failed = std::stoul(f[4]);
    g.target_mean = d(f[5]);
    g.target_std = d(f[6]);
    g.source_mean = d(f[7]);
    g.source_std = d(f[8]);
    g.forgetting_mean = d(f[9]);
    g.forgetting_std = d(f[10]);
    g.source_only_mean = d(f[11]);
    out.push_back(g);
  }
  return out;
}

/// x y err rows; the heatmap writes x y mean err.
inline void write_plot_data(const std::filesystem::path& dir, SweepAxis axis,
                            const std::vector<GroupSummary>& groups) {
  if (axis == SweepAxis::heatmap) {
    std::ofstream h(dir / "heatmap.dat");
    h << "# lr_source_disc t2 target_mean target_std\n";
    for (const auto& g : groups) {
      h << format_axis(g.x) << ' ' << format_axis(g.y) << ' ' << format_double(g.target_mean) << ' '
        << format_double(g.target_std) << '\n';
    }
    return;
  }
  const std::string name = to_string(axis);
  std::ofstream t(dir / ("plot_" + name + "_target.dat"));
  std::ofstream f(dir / ("plot_" + name + "_forgetting.dat"));
  t << "# x y err\n";
  f << "# x y err\n";
  for (const auto& g : groups) {
    t << format_axis(g.x) << ' ' << format_double(g.target_mean) << ' ' << format_double(g.target_std) << '\n';
    f << format_axis(g.x) << ' ' << format_double(g.forgetting_mean) << ' ' << format_double(g.forgetting_std)
      << '\n';
  }
}

/// FNV-1a over the file bytes with any column named "timestamp" removed.
inline std::uint64_t runs_hash(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot read " + path.string());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const auto feed = [&](const std::string& s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
  };
  std::string line;
  std::optional<std::size_t> skip;
  bool header = true;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (header) {
      for (std::size_t i = 0; i < cells.size(); ++i) {
        if (cells[i] == "timestamp") skip = i;
      }
      header = false;
    }
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (skip && *skip == i) continue;
      feed(cells[i]);
      feed(",");
    }
    feed("\n");
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

struct SweepResult {
  std::vector<RunOutcome> outcomes;
  std::vector<GroupSummary> groups;
  std::uint64_t hash = 0;
  std::size_t failed = 0;
};

/// Runs every job of the config, writes runs.csv, summary.csv, plot data and
/// meta.txt (timestamp and hash) into `dir`.
inline SweepResult run_sweep(const RunConfig& rc, const std::filesystem::path& dir,
                             std::optional<std::size_t> threads = std::nullopt) {
  rc.validate();
  std::filesystem::create_directories(dir);
  const auto points = sweep_points(rc);
  SweepResult r;
  {
    std::ofstream runs(dir / "runs.csv", std::ios::binary | std::ios::trunc);
    if (!runs) throw FormatError("cannot write " + (dir / "runs.csv").string());
    runs << kRunsHeader << '\n';
    r.outcomes = run_points(points, rc.data, runs, threads.value_or(worker_count(points.size())));
  }
  r.groups = summarize(r.outcomes);
  for (const auto& o : r.outcomes) r.failed += o.failed ? 1 : 0;
  {
    std::ofstream s(dir / "summary.csv", std::ios::binary | std::ios::trunc);
    write_summary(s, r.groups);
  }
  write_plot_data(dir, rc.sweep.axis, r.groups);
  r.hash = runs_hash(dir / "runs.csv");
  std::ofstream meta(dir / "meta.txt", std::ios::trunc);
  const std::time_t now = std::time(nullptr);
  meta << "timestamp " << std::put_time(std::gmtime(&now), "%Y-%m-%dT%H:%M:%SZ") << '\n';
  meta << "runs_hash " << hex64(r.hash) << '\n';
  meta << "jobs " << points.size() << " failed " << r.failed << '\n';
  return r;
}

// ---------------------------------------------------------------------------

/// Aligned table of the groups in `dir/summary.csv`. Returns an exit code.
inline int emit_report(const std::filesystem::path& dir, std::ostream& out, std::ostream& err) {
  const auto path = dir / "summary.csv";
  if (!std::filesystem::exists(path)) {
    err << "no runs in " << dir.string() << '\n';
    return exit_no_data;
  }
  std::ifstream in(path);
  std::vector<GroupSummary> groups;
  try {
    groups = read_summary(in);
  } catch (const std::exception& e) {
    err << e.what() << '\n';
    return exit_usage;
  }
  if (groups.empty()) {
    err << "no runs in " << dir.string() << '\n';
    return exit_no_data;
  }
  const auto pm = [](double m, double s) {
    return std::isnan(m) ? std::string("n/a") : format_double(m, 2) + " +- " + format_double(s, 2);
  };
  std::vector<std::vector<std::string>> rows = {{"mode", "runs", "failed", "target_acc", "forgetting", "delta"}};
  const double ref = groups.front().target_mean;
  for (std::size_t i = 0; i < groups.size(); ++i) {
    const auto& g = groups[i];
    std::string delta = "ref";
    if (i > 0) {
      const double d = g.target_mean - ref;
      delta = std::isnan(d) ? "n/a" : (d >= 0 ? "+" : "") + format_double(d, 2);
    }
    rows.push_back({g.group, std::to_string(g.runs), std::to_string(g.failed), pm(g.target_mean, g.target_std),
                    pm(g.forgetting_mean, g.forgetting_std), delta});
  }
  std::vector<std::size_t> width(rows.front().size(), 0);
  for (const auto& r : rows) {
    for (std::size_t c = 0; c < r.size(); ++c) width[c] = std::max(width[c], r[c].size());
  }
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t c = 0; c < rows[i].size(); ++c) {
      if (c == 0) {
        out << std::left << std::setw(static_cast<int>(width[c])) << rows[i][c];
      } else {
        out << "  " << std::right << std::setw(static_cast<int>(width[c])) << rows[i][c];
      }
    }
    out << '\n';
    if (i == 0) {
      std::size_t total = 0;
      for (std::size_t w : width) total += w + 2;
      out << std::string(total - 2, '-') << '\n';
    }
  }
  return exit_ok;
}

}  // namespace uda
