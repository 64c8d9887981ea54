// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
// Usage: aether_acceptance [criterion numbers...]   (default: all)

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "aether/align.hpp"
#include "aether/common.hpp"
#include "aether/error.hpp"
#include "aether/pipeline.hpp"
#include "aether/sweep.hpp"
#include "aether/synth.hpp"
#include "aether/tasks.hpp"
#include "gradchecks.hpp"
#include "oracles.hpp"

using namespace aether;
using nn::Matrix;
namespace fs = std::filesystem;

namespace {

// tolerances and budgets
constexpr double kGradTol = 1e-4;
constexpr int kGradConfigs = 20;
constexpr double kGradBudget = 30.0;
constexpr double kClosedFormTol = 1e-9;
constexpr int kPoolPairs = 200;
constexpr double kPoolMeanTol = 1e-12;
constexpr double kKlTol = 1e-9;
constexpr double kSelfKlTol = 1e-7;
constexpr double kLnCTol = 1e-12;
constexpr std::size_t kDeterminismEpochs = 20;
constexpr double kDeterminismBudget = 300.0;
constexpr double kMinSdmReduction = 0.10;
constexpr double kGapBudget = 600.0;
constexpr std::size_t kEfficiencyPois = 340000;
constexpr double kEfficiencyBudget = 60.0;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------- 1
Outcome gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst[6] = {};
  for (std::uint64_t s = 0; s < kGradConfigs; ++s) {
    worst[0] = std::max(worst[0], gradcheck::head(s));
    worst[1] = std::max(worst[1], gradcheck::projector(s));
    worst[2] = std::max(worst[2], gradcheck::loss(gradcheck::Loss::Intra, s));
    worst[3] = std::max(worst[3], gradcheck::loss(gradcheck::Loss::Cross, s));
    worst[4] = std::max(worst[4], gradcheck::loss(gradcheck::Loss::Total, s));
    const TaskMode mode = s % 2 == 0 ? TaskMode::Classification : TaskMode::Distribution;
    worst[5] = std::max({worst[5], gradcheck::task_head(s, mode), gradcheck::task_head(s, mode, true)});
  }
  const double t = seconds_since(t0);
  const char* names[6] = {"head", "poi_project", "intra", "cross", "total", "task_head"};
  std::ostringstream d;
  bool ok = t < kGradBudget;
  for (int i = 0; i < 6; ++i) {
    ok = ok && worst[i] < kGradTol;
    d << names[i] << ' ' << fmt("%.1e", worst[i]) << ", ";
  }
  d << fmt("%.1fs", t);
  return {ok, d.str()};
}

// ---------------------------------------------------------------- 2
Outcome closed_form() {
  CounterRng rng(11, "acc_n1");
  const AlignmentBatch one = gradcheck::random_batch(rng, 1, 8);
  const bool n1 = loss_intra(one, 0.07).value == 0.0 && loss_cross(one, 0.07).value == 0.0;
  AlignmentBatch two;
  two.z_base = Matrix::Identity(2, 4);
  two.z_aug = two.z_base;
  two.z_poi = two.z_base;
  const double want = std::log(1.0 + std::exp(-1.0));
  const double e_intra = std::abs(loss_intra(two, 1.0).value - want);
  const double e_cross = std::abs(loss_cross(two, 1.0).value - want);
  const bool ok = n1 && e_intra <= kClosedFormTol && e_cross <= kClosedFormTol && std::abs(want - 0.3132617) < 1e-7;
  return {ok, std::string("N=1 zero: ") + (n1 ? "yes" : "no") + ", N=2 errors " + fmt("%.1e", e_intra) + " / " +
                  fmt("%.1e", e_cross)};
}

// ---------------------------------------------------------------- 3
Outcome pooling() {
  int member_mismatch = 0, count_mismatch = 0;
  double worst = 0.0;
  int empty = 0;
  for (int q = 0; q < kPoolPairs; ++q) {
    CounterRng rng(static_cast<std::uint64_t>(q), "acc_pool");
    const auto w = static_cast<std::uint32_t>(8 + rng.uniform_int(57));
    const auto h = static_cast<std::uint32_t>(8 + rng.uniform_int(57));
    const auto c = static_cast<std::uint32_t>(1 + rng.uniform_int(8));
    const double cell = rng.uniform() < 0.5 ? 10.0 : rng.uniform(1.0, 30.0);
    const EmbeddingField f = oracle::random_field(w, h, c, 1000 + static_cast<std::uint64_t>(q), rng.uniform(0.0, 0.3),
                                                  rng.uniform(-1e5, 1e5), rng.uniform(-1e5, 1e5), cell);
    const auto& g = f.geometry();
    const double x = g.origin_x + rng.uniform(-3.0, w + 3.0) * cell;
    const double y = g.origin_y - rng.uniform(-3.0, h + 3.0) * cell;
    const double radius = rng.uniform(0.2, 15.0) * cell;
    const auto want = oracle::brute_pool(f, x, y, radius);
    const auto got = pool_buffer(f, {x, y, radius});
    if (buffer_cells(f, {x, y, radius}) != want.members) ++member_mismatch;
    if (want.members.empty()) {
      ++empty;
      if (got) ++count_mismatch;
      continue;
    }
    if (!got || got->pixel_count != want.members.size()) {
      ++count_mismatch;
      continue;
    }
    for (std::size_t k = 0; k < c; ++k) worst = std::max(worst, std::abs(got->values[k] - want.mean[k]));
  }
  const bool ok = member_mismatch == 0 && count_mismatch == 0 && worst <= kPoolMeanTol;
  return {ok, std::to_string(kPoolPairs) + " pairs (" + std::to_string(empty) + " empty), member mismatches " +
                  std::to_string(member_mismatch) + ", max mean error " + fmt("%.1e", worst)};
}

// ---------------------------------------------------------------- 4
Outcome metrics() {
  std::vector<double> q{1.0, 0.0}, p{0.5, 0.5};
  const auto self = metric_distribution(q, q);
  const auto hand = metric_distribution(p, q);
  const bool kl_ok = self.kl >= 0.0 && self.kl <= kSelfKlTol && std::abs(hand.kl - std::log(2.0)) <= kKlTol;
  const bool dist_ok = hand.l1 == 0.5 && hand.chebyshev == 0.5 && self.l1 == 0.0 && self.chebyshev == 0.0;
  std::vector<int> y{0, 0, 1, 1}, maj{0, 0, 0, 0};
  const double f1 = metric_macro_prf(y, maj, 2).f1;
  const bool f1_ok = f1 == 1.0 / 3.0;
  const TaskHead z = TaskHead::zeros(3, 4, 10, TaskMode::Classification);
  Matrix x = Matrix::Ones(4, 3), t = Matrix::Zero(4, 10);
  for (int i = 0; i < 4; ++i) t(i, 3 * i % 10) = 1.0;
  const double loss_err = std::abs(task_loss_value(z, x, t) - std::log(10.0));
  const bool ok = kl_ok && dist_ok && f1_ok && loss_err <= kLnCTol;
  return {ok, "KL(q|q) " + fmt("%.1e", self.kl) + ", KL-ln2 " + fmt("%.1e", std::abs(hand.kl - std::log(2.0))) +
                  ", L1/Cheb " + fmt("%g", hand.l1) + "/" + fmt("%g", hand.chebyshev) + ", F1 " + fmt("%.17g", f1) +
                  ", ln C error " + fmt("%.1e", loss_err)};
}

// ---------------------------------------------------------------- 5
std::vector<std::string> pipeline_files(const std::string& out, const PretrainOutcome& p) {
  const EmbedFiles e = embed_files(out);
  return {p.checkpoint,   e.luc_aligned, e.luc_raw, e.sdm_aligned, e.sdm_raw, (fs::path(out) / "eval/luc_report.csv").string(),
          (fs::path(out) / "eval/sdm_report.csv").string()};
}

std::vector<std::string> run_pipeline(const std::string& out, std::size_t threads) {
  set_thread_count(threads);
  PipelineConfig c;
  c.paths.out_dir = out;
  c.align.epochs = kDeterminismEpochs;
  cmd_synth(c);
  const PretrainOutcome p = cmd_pretrain(c);
  cmd_embed(c);
  cmd_eval(c, EvalTask::Luc);
  cmd_eval(c, EvalTask::Sdm);
  set_thread_count(0);
  return pipeline_files(out, p);
}

Outcome determinism() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto a = run_pipeline(oracle::temp_dir("acc_det_a"), 1);
  const auto b = run_pipeline(oracle::temp_dir("acc_det_b"), 3);
  const double t = seconds_since(t0);
  std::size_t same = 0;
  std::string diff;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const std::string fa = oracle::slurp(a[i]), fb = oracle::slurp(b[i]);
    if (!fa.empty() && fa == fb) {
      ++same;
    } else {
      diff += " " + fs::path(a[i]).filename().string();
    }
  }
  const bool ok = same == a.size() && t < kDeterminismBudget;
  return {ok, std::to_string(same) + "/" + std::to_string(a.size()) + " files bit-identical (1 vs 3 threads)" +
                  (diff.empty() ? "" : ", differing:" + diff) + ", " + fmt("%.1fs", t) + " for both runs"};
}

// ---------------------------------------------------------------- 6 and 7
struct GapWorld {
  explicit GapWorld(SynthWorld w) : world(std::move(w)) {}
  SynthWorld world;
  DownstreamData data;
  ExperimentInputs inputs;
};

GapWorld& gap_world() {
  static std::unique_ptr<GapWorld> g;
  if (!g) {
    g = std::make_unique<GapWorld>(generate(SynthConfig{}));  // grid 128, 2000 POIs, K = 6, 100 regions
    g->data = make_downstream(g->world.luc, g->world.regions, g->world.targets);
    g->inputs = {&g->world.field, g->world.pois, g->world.text, &g->data};
  }
  return *g;
}

std::optional<ExperimentReports> aligned_lambda02;

Outcome table_gap() {
  const auto t0 = std::chrono::steady_clock::now();
  GapWorld& g = gap_world();
  ExperimentSettings s;  // lambda 0.2, 100 epochs, seeds 0..4
  const ExperimentReports raw = run_raw_experiment(g.world.field, g.data, s);
  aligned_lambda02 = run_aligned_experiment(g.inputs, s);
  const double t = seconds_since(t0);
  const auto& kr = raw.sdm.metric("kl");
  const auto& ka = aligned_lambda02->sdm.metric("kl");
  const auto& fr = raw.luc.metric("f1");
  const auto& fa = aligned_lambda02->luc.metric("f1");
  const double reduction = (kr.mean - ka.mean) / kr.mean;
  const bool ok = reduction >= kMinSdmReduction && fa.mean >= fr.mean - fr.std && t < kGapBudget;
  std::ostringstream d;
  d << "SDM KL raw " << fmt("%.5f", kr.mean) << "±" << fmt("%.5f", kr.std) << " aligned " << fmt("%.5f", ka.mean) << "±"
    << fmt("%.5f", ka.std) << " (" << fmt("%.1f", 100 * reduction) << "% lower), LUC F1 raw " << fmt("%.4f", fr.mean)
    << "±" << fmt("%.4f", fr.std) << " aligned " << fmt("%.4f", fa.mean) << "±" << fmt("%.4f", fa.std) << ", "
    << fmt("%.1fs", t);
  return {ok, d.str()};
}

Outcome lambda_sensitivity() {
  const auto t0 = std::chrono::steady_clock::now();
  GapWorld& g = gap_world();
  ExperimentSettings s;
  s.seeds = {0, 1, 2};
  double low = 0.0;
  if (aligned_lambda02) {
    // same seeds and settings as criterion 6, so reuse its first three runs
    const auto& v = aligned_lambda02->sdm.metric("kl").values;
    low = (v[0] + v[1] + v[2]) / 3.0;
  } else {
    low = run_aligned_experiment(g.inputs, s).sdm.metric("kl").mean;
  }
  s.align.lambda = 0.9;
  const double high = run_aligned_experiment(g.inputs, s).sdm.metric("kl").mean;
  return {high > low, "SDM KL λ=0.9 " + fmt("%.5f", high) + " vs λ=0.2 " + fmt("%.5f", low) + " over seeds 0-2, " +
                          fmt("%.1fs", seconds_since(t0))};
}

// ---------------------------------------------------------------- 8
Outcome sweep_plumbing() {
  SynthConfig c;
  c.grid_size = 40;
  c.n_pois = 300;
  c.n_regions = 20;
  c.n_luc = 80;
  c.d_t = 16;
  c.region_radius = 60.0;
  const SynthWorld w = generate(c);
  const DownstreamData data = make_downstream(w.luc, w.regions, w.targets);
  const ExperimentInputs in{&w.field, w.pois, w.text, &data};
  ExperimentSettings s;
  s.align.hidden = 16;
  s.align.output_dim = 8;
  s.align.batch_size = 64;
  s.align.epochs = 1;
  s.task.hidden = 8;
  s.task.max_epochs = 10;
  s.seeds = {0};
  const SweepGrid grid;

  const std::vector<std::pair<double, double>> table{{25, 50}, {25, 75}, {25, 100}, {50, 75}, {50, 100}, {50, 125}};
  const auto rows = run_sweep(in, s, SweepAxis::Buffers, grid);
  const std::string dir = oracle::temp_dir("acc_sweep");
  write_sweep_csv(rows, dir + "/sweep_buffers.csv");
  const std::string csv = oracle::slurp(dir + "/sweep_buffers.csv");
  bool pairs_ok = rows.size() == table.size();
  for (std::size_t i = 0; pairs_ok && i < rows.size(); ++i) {
    pairs_ok = rows[i].ok && rows[i].setting.r_b == table[i].first && rows[i].setting.r_a == table[i].second &&
               rows[i].setting.r_a > rows[i].setting.r_b;
  }
  const bool csv_ok = std::count(csv.begin(), csv.end(), '\n') == 7;
  bool rejects = false;
  try {
    SweepGrid bad;
    bad.buffers = {{50, 50}};
    sweep_settings(SweepAxis::Buffers, s.align, bad);
  } catch (const ValidationError&) {
    rejects = true;
  }

  const auto subsets = fraction_subsets(w.pois.size(), grid.fractions, grid.fraction_seed);
  bool nested = subsets.size() == 10 && subsets.back().size() == w.pois.size();
  for (std::size_t i = 1; nested && i < subsets.size(); ++i) {
    const std::set<std::size_t> big(subsets[i].begin(), subsets[i].end());
    for (auto k : subsets[i - 1]) nested = nested && big.count(k) == 1;
    nested = nested && subsets[i - 1].size() < subsets[i].size();
  }
  const auto frows = run_sweep(in, s, SweepAxis::Fraction, grid);
  bool used_ok = frows.size() == 10;
  for (std::size_t i = 0; used_ok && i < frows.size(); ++i) used_ok = frows[i].ok && frows[i].pois_used == subsets[i].size();

  const bool ok = pairs_ok && csv_ok && rejects && nested && used_ok;
  return {ok, std::string("buffer rows ") + std::to_string(rows.size()) + (pairs_ok ? " match" : " MISMATCH") +
                  ", r_a<=r_b rejected: " + (rejects ? "yes" : "no") + ", fraction subsets nested: " + (nested ? "yes" : "no") +
                  ", fraction rows " + std::to_string(frows.size())};
}

// ---------------------------------------------------------------- 9
Outcome efficiency() {
  SynthConfig c;
  c.grid_size = 1024;
  c.n_pois = kEfficiencyPois;
  c.n_regions = 10;
  c.n_luc = 10;
  const auto tg = std::chrono::steady_clock::now();
  const SynthWorld w = generate(c);
  const double gen = seconds_since(tg);
  AlignmentConfig cfg;
  cfg.epochs = 1;
  const auto t0 = std::chrono::steady_clock::now();
  const PretrainResult r = pretrain(w.field, w.pois, w.text, cfg);
  const double t = seconds_since(t0);
  const bool ok = t < kEfficiencyBudget && r.log.size() == 1 && std::isfinite(r.log[0].l_ap);
  return {ok, std::to_string(r.used_pois) + " POIs, 1 epoch incl. pooling " + fmt("%.1fs", t) + " on " +
                  std::to_string(thread_count()) + " thread(s) (world generation " + fmt("%.1fs", gen) +
                  ", not counted), L_AP " + fmt("%.4f", r.log[0].l_ap)};
}

}  // namespace

int main(int argc, char** argv) {
  set_log_level(LogLevel::Quiet);
  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> all{{1, "gradient correctness", gradients},
                                   {2, "closed-form loss oracle", closed_form},
                                   {3, "pooling oracle", pooling},
                                   {4, "metric oracles", metrics},
                                   {5, "pipeline determinism", determinism},
                                   {6, "raw vs aligned gap", table_gap},
                                   {7, "lambda sensitivity", lambda_sensitivity},
                                   {8, "sweep plumbing", sweep_plumbing},
                                   {9, "efficiency budget", efficiency}};
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));

  int failed = 0;
  for (const auto& c : all) {
    if (!wanted.empty() && !wanted.count(c.id)) continue;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += o.pass ? 0 : 1;
    std::printf("%s  criterion %d  %-24s %s\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%s: %d failed\n", failed == 0 ? "ALL PASS" : "FAILURES", failed);
  return failed == 0 ? 0 : 1;
}
