#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "uda/runner.hpp"

using namespace uda;
namespace fs = std::filesystem;

namespace {

RunConfig tiny(SweepAxis axis = SweepAxis::none) {
  RunConfig rc;
  rc.data.n_train = 120;
  rc.data.n_eval = 60;
  rc.train.schedule.t1 = 2;
  rc.train.schedule.t2 = 1;
  rc.train.schedule.t3 = 1;
  rc.train.mem_per_class = 4;
  rc.sweep.axis = axis;
  return rc;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("uda_runner_" + name);
  fs::remove_all(p);
  return p;
}

std::vector<std::string> lines(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

}  // namespace

TEST(Format, RowsAndFailedRow) {
  MetricsRecord m{"mem=8", 3, 2, "target", 91.5, 88.25, 1.75, 0.5, -0.125, 4};
  EXPECT_EQ(csv_row(m), "mem=8,3,2,target,91.500000,88.250000,1.750000,0.500000,-0.125000,4");
  EXPECT_EQ(failed_row("run", 7), "run,7,0,failed,nan,nan,nan,nan,nan,0");
  EXPECT_EQ(std::string(kRunsHeader),
            "run_id,seed,epoch,phase,target_acc,source_acc,forgetting,d_psi_t,d_psi,saturations");
}

TEST(OrderedAppender, WritesInJobOrder) {
  std::ostringstream os;
  OrderedAppender app(os, 4);
  app.submit(2, "c");
  app.submit(1, "b");
  EXPECT_EQ(os.str(), "");
  app.submit(0, "a");
  EXPECT_EQ(os.str(), "abc");
  app.submit(3, "d");
  EXPECT_EQ(os.str(), "abcd");
  EXPECT_EQ(app.written(), 4u);
}

TEST(MeanStd, SampleStandardDeviation) {
  const auto [m, s] = mean_std({1.0, 2.0, 3.0, 4.0});
  EXPECT_DOUBLE_EQ(m, 2.5);
  EXPECT_NEAR(s, 1.2909944487358056, 1e-15);
  EXPECT_DOUBLE_EQ(mean_std({5.0}).second, 0.0);
}

TEST(SweepPoints, AxesExpandTimesSeeds) {
  EXPECT_EQ(sweep_points(tiny(SweepAxis::memory)).size(), 25u);
  EXPECT_EQ(sweep_points(tiny(SweepAxis::heatmap)).size(), 80u);
  EXPECT_EQ(sweep_points(tiny(SweepAxis::gamma_s)).size(), 30u);
  EXPECT_EQ(sweep_points(tiny(SweepAxis::modes)).size(), 25u);
  const auto pts = sweep_points(tiny(SweepAxis::memory));
  EXPECT_EQ(pts[0].group, "mem=8");
  EXPECT_EQ(pts[0].cfg.mem_per_class, 8u);
  EXPECT_EQ(pts[24].group, "mem=128");
  EXPECT_EQ(pts[24].cfg.seed, 5u);
}

TEST(RunSweep, SingleRunOutputs) {
  const auto dir = scratch("single");
  RunConfig rc = tiny();
  rc.seeds = {1};
  const auto r = run_sweep(rc, dir, 1);
  EXPECT_EQ(r.failed, 0u);
  const auto rows = lines(dir / "runs.csv");
  EXPECT_EQ(rows.front(), kRunsHeader);
  // 2 source + 1 source_disc + 1 memory + 1 target epochs.
  EXPECT_EQ(rows.size(), 6u);
  EXPECT_TRUE(fs::exists(dir / "summary.csv"));
  EXPECT_TRUE(fs::exists(dir / "meta.txt"));
  std::ostringstream out, err;
  EXPECT_EQ(emit_report(dir, out, err), exit_ok);
  EXPECT_NE(out.str().find("forgetting"), std::string::npos);
  EXPECT_NE(out.str().find("ref"), std::string::npos);
}

TEST(RunSweep, HashIndependentOfThreadCount) {
  RunConfig rc = tiny(SweepAxis::modes);
  rc.seeds = {1, 2};
  const auto d1 = scratch("t1"), d4 = scratch("t4"), d4b = scratch("t4b");
  const auto a = run_sweep(rc, d1, 1);
  const auto b = run_sweep(rc, d4, 4);
  const auto c = run_sweep(rc, d4b, 4);
  EXPECT_EQ(a.hash, b.hash);
  EXPECT_EQ(b.hash, c.hash);
  EXPECT_EQ(lines(d1 / "runs.csv"), lines(d4b / "runs.csv"));
}

TEST(RunSweep, MemoryAxisSummaryAndPlotData) {
  const auto dir = scratch("memory");
  const auto r = run_sweep(tiny(SweepAxis::memory), dir, 4);
  EXPECT_EQ(r.outcomes.size(), 25u);
  ASSERT_EQ(r.groups.size(), 5u);
  for (const auto& g : r.groups) EXPECT_EQ(g.runs, 5u);
  const auto plot = lines(dir / "plot_memory_target.dat");
  ASSERT_EQ(plot.size(), 6u);
  EXPECT_EQ(plot[0].rfind("# x y err", 0), 0u);
  EXPECT_EQ(plot[1].rfind("8 ", 0), 0u);
  EXPECT_TRUE(fs::exists(dir / "plot_memory_forgetting.dat"));
  std::ifstream in(dir / "summary.csv");
  const auto back = read_summary(in);
  ASSERT_EQ(back.size(), 5u);
  EXPECT_NEAR(back[2].target_mean, r.groups[2].target_mean, 1e-6);
}

TEST(RunSweep, HeatmapHasSixteenCells) {
  const auto dir = scratch("heatmap");
  RunConfig rc = tiny(SweepAxis::heatmap);
  rc.seeds = {1};
  const auto r = run_sweep(rc, dir, 4);
  EXPECT_EQ(r.groups.size(), 16u);
  const auto heat = lines(dir / "heatmap.dat");
  EXPECT_EQ(heat.size(), 17u);
}

TEST(RunSweep, DivergenceBecomesFailedRow) {
  const auto dir = scratch("diverge");
  RunConfig rc = tiny(SweepAxis::memory);
  rc.seeds = {1};
  rc.sweep.memory = {4, 8};
  rc.train.schedule.lr_task = 1e300;
  const auto r = run_sweep(rc, dir, 2);
  EXPECT_EQ(r.failed, 2u);
  const auto rows = lines(dir / "runs.csv");
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[1], failed_row("mem=4", 1));
  EXPECT_EQ(rows[2], failed_row("mem=8", 1));
  std::ostringstream out, err;
  EXPECT_EQ(emit_report(dir, out, err), exit_ok);
  EXPECT_NE(out.str().find("n/a"), std::string::npos);
}

TEST(Report, NoRuns) {
  const auto dir = scratch("empty");
  fs::create_directories(dir);
  std::ostringstream out, err;
  EXPECT_EQ(emit_report(dir, out, err), exit_no_data);
  EXPECT_NE(err.str().find("no runs"), std::string::npos);
  std::ofstream(dir / "summary.csv") << kSummaryHeader << '\n';
  EXPECT_EQ(emit_report(dir, out, err), exit_no_data);
}

TEST(Report, DeltaAgainstFirstRow) {
  const auto dir = scratch("delta");
  fs::create_directories(dir);
  std::vector<GroupSummary> g(2);
  g[0].group = "double_head";
  g[0].runs = 5;
  g[0].target_mean = 90.0;
  g[1].group = "single_head";
  g[1].runs = 5;
  g[1].target_mean = 85.5;
  {
    std::ofstream s(dir / "summary.csv");
    write_summary(s, g);
  }
  std::ostringstream out, err;
  ASSERT_EQ(emit_report(dir, out, err), exit_ok);
  const std::string t = out.str();
  EXPECT_NE(t.find("-4.50"), std::string::npos);
  EXPECT_NE(t.find("double_head"), std::string::npos);
  // Every row is the same width.
  std::istringstream is(t);
  std::vector<std::size_t> widths;
  for (std::string l; std::getline(is, l);) widths.push_back(l.size());
  ASSERT_EQ(widths.size(), 4u);
  EXPECT_EQ(widths[0], widths[2]);
  EXPECT_EQ(widths[2], widths[3]);
}

TEST(WorkerCount, EnvironmentCap) {
  ::setenv("UDA_LAB_THREADS", "1", 1);
  EXPECT_EQ(worker_count(10), 1u);
  ::setenv("UDA_LAB_THREADS", "bogus", 1);
  EXPECT_GE(worker_count(10), 1u);
  ::unsetenv("UDA_LAB_THREADS");
  EXPECT_EQ(worker_count(1), 1u);
}
