#include <algorithm>
#include <set>

#include "aether/error.hpp"
#include "aether/sweep.hpp"
#include "aether/synth.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace aether;

namespace {

SynthWorld tiny_world() {
  SynthConfig c;
  c.grid_size = 40;
  c.n_pois = 300;
  c.n_regions = 20;
  c.n_luc = 80;
  c.d_t = 16;
  c.region_radius = 60.0;
  return generate(c);
}

ExperimentSettings tiny_settings() {
  ExperimentSettings s;
  s.align.hidden = 16;
  s.align.output_dim = 8;
  s.align.batch_size = 64;
  s.align.epochs = 2;
  s.task.max_epochs = 20;
  s.task.hidden = 8;
  s.seeds = {0};
  return s;
}

}  // namespace

TEST_CASE("buffer grid has the six pairs with r_a > r_b") {
  const auto s = sweep_settings(SweepAxis::Buffers, AlignmentConfig{}, SweepGrid{});
  REQUIRE(s.size() == 6);
  const std::vector<std::pair<double, double>> want{{25, 50}, {25, 75}, {25, 100}, {50, 75}, {50, 100}, {50, 125}};
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(s[i].r_b == want[i].first);
    CHECK(s[i].r_a == want[i].second);
    CHECK(s[i].r_a > s[i].r_b);
    CHECK(s[i].lambda == 0.2);
  }
  SweepGrid bad;
  bad.buffers = {{50, 50}};
  CHECK_THROWS_AS(sweep_settings(SweepAxis::Buffers, AlignmentConfig{}, bad), ValidationError);
  bad.buffers = {{75, 50}};
  CHECK_THROWS_AS(sweep_settings(SweepAxis::Buffers, AlignmentConfig{}, bad), ValidationError);
}

TEST_CASE("lambda and fraction grids have ten settings each") {
  const auto l = sweep_settings(SweepAxis::Lambda, AlignmentConfig{}, SweepGrid{});
  REQUIRE(l.size() == 10);
  for (std::size_t i = 0; i < 10; ++i) {
    CHECK(std::abs(l[i].lambda - 0.1 * static_cast<double>(i)) <= 1e-12);
    CHECK(l[i].r_b == 50.0);
    CHECK(l[i].r_a == 100.0);
  }
  CHECK(sweep_settings(SweepAxis::Fraction, AlignmentConfig{}, SweepGrid{}).size() == 10);
  SweepGrid bad;
  bad.lambdas = {1.0};
  CHECK_THROWS_AS(sweep_settings(SweepAxis::Lambda, AlignmentConfig{}, bad), ValidationError);
  bad = SweepGrid{};
  bad.fractions = {0.0};
  CHECK_THROWS_AS(sweep_settings(SweepAxis::Fraction, AlignmentConfig{}, bad), ValidationError);
}

TEST_CASE("fraction subsets are nested, sorted, sized and seeded") {
  const std::vector<double> f{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  const auto subs = fraction_subsets(1234, f, 5);
  REQUIRE(subs.size() == 10);
  for (std::size_t i = 0; i < subs.size(); ++i) {
    CHECK(std::is_sorted(subs[i].begin(), subs[i].end()));
    CHECK(std::adjacent_find(subs[i].begin(), subs[i].end()) == subs[i].end());
    if (i > 0) {
      CHECK(subs[i - 1].size() <= subs[i].size());
      CHECK(std::includes(subs[i].begin(), subs[i].end(), subs[i - 1].begin(), subs[i - 1].end()));
    }
  }
  CHECK(subs.back().size() == 1234);
  CHECK(subs.front().size() == 123);
  CHECK(fraction_subsets(1234, f, 5) == subs);
  CHECK(fraction_subsets(1234, f, 6)[0] != subs[0]);
}

TEST_CASE("axis names round trip; unknown axis is an error") {
  for (SweepAxis a : {SweepAxis::Lambda, SweepAxis::Buffers, SweepAxis::Fraction}) {
    CHECK(parse_sweep_axis(sweep_axis_name(a)) == a);
  }
  CHECK(sweep_axis_name(SweepAxis::Buffers) == "buffers");
  CHECK_THROWS_AS(parse_sweep_axis("radius"), ValidationError);
}

TEST_CASE("make_downstream joins targets by id") {
  std::vector<RegionSpec> regions{{"a", BufferRule{}}, {"b", BufferRule{}}};
  std::vector<DistributionTarget> t{{"b", {0.5, 0.5}}, {"a", {1.0, 0.0}}};
  const DownstreamData d = make_downstream({{1, 2, 0}, {3, 4, 2}}, regions, t);
  CHECK(d.luc_classes == 3);
  CHECK(d.luc_points[1].id == "1");
  CHECK(d.sdm_targets(0, 0) == 1.0);
  CHECK(d.sdm_targets(1, 0) == 0.5);
  std::vector<DistributionTarget> missing{{"a", {1.0, 0.0}}};
  CHECK_THROWS_AS(make_downstream({}, regions, missing), ValidationError);
}

TEST_CASE("tiny sweeps run end to end and write one row per setting") {
  const SynthWorld w = tiny_world();
  const DownstreamData data = make_downstream(w.luc, w.regions, w.targets);
  const ExperimentInputs in{&w.field, w.pois, w.text, &data};
  const ExperimentSettings base = tiny_settings();

  SweepGrid grid;
  grid.fractions = {0.25, 0.5, 1.0};
  const auto rows = run_sweep(in, base, SweepAxis::Fraction, grid);
  REQUIRE(rows.size() == 3);
  for (const auto& r : rows) CHECK_MESSAGE(r.ok, r.status);
  CHECK(rows[0].pois_used < rows[1].pois_used);
  CHECK(rows[2].pois_used == w.pois.size());
  CHECK(rows[0].luc_f1_std == 0.0);

  // an unusable setting (0.001 of 300 POIs rounds to none) is recorded and the sweep carries on
  SweepGrid tiny;
  tiny.fractions = {0.001, 1.0};
  const auto frows = run_sweep(in, base, SweepAxis::Fraction, tiny);
  REQUIRE(frows.size() == 2);
  CHECK_FALSE(frows[0].ok);
  CHECK(frows[0].status.find("failed") == 0);
  CHECK(frows[1].ok);
  CHECK(frows[1].luc_f1 == rows[2].luc_f1);

  const std::string d = oracle::temp_dir("sweep");
  write_sweep_csv(rows, d + "/s.csv");
  const std::string text = oracle::slurp(d + "/s.csv");
  CHECK(text.rfind("axis,setting,r_b,r_a,lambda,fraction,pois,luc_f1,luc_f1_std,sdm_kl,sdm_kl_std,status\n", 0) == 0);
  CHECK(std::count(text.begin(), text.end(), '\n') == 4);
}
