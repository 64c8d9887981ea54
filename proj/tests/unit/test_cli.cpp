#include <filesystem>
#include <fstream>

#include "aether/error.hpp"
#include "aether/pipeline.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace aether;
namespace fs = std::filesystem;

namespace {

const char* kSmall = R"(# small end-to-end world
[synth]
grid_size = 48
n_pois = 400
n_regions = 20
n_luc = 100
d_t = 16
region_radius = 80

[align]
hidden = 16
output_dim = 8
batch_size = 128
epochs = 5

[task]
max_epochs = 30
hidden = 8

[eval]
seeds = 0, 1
)";

PipelineConfig small_config(const std::string& tag) {
  PipelineConfig c = parse_pipeline_config(kSmall, "small.ini");
  c.paths.out_dir = oracle::temp_dir(tag);
  return c;
}

std::size_t line_count(const std::string& path) {
  const std::string s = oracle::slurp(path);
  return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

}  // namespace

TEST_CASE("empty config carries the defaults") {
  const PipelineConfig c = parse_pipeline_config("");
  CHECK(c.align.lambda == 0.2);
  CHECK(c.align.tau_ae == 0.07);
  CHECK(c.align.tau_poi == 0.07);
  CHECK(c.align.batch_size == 512);
  CHECK(c.align.hidden == 256);
  CHECK(c.align.output_dim == 128);
  CHECK(c.align.epochs == 100);
  CHECK(c.align.r_b == 50.0);
  CHECK(c.align.r_a == 100.0);
  CHECK(c.task.hidden == 64);
  CHECK(c.task.patience == 20);
  CHECK(c.task.max_epochs == 500);
  CHECK(c.eval_seeds == std::vector<std::uint64_t>{0, 1, 2, 3, 4});
  CHECK(c.paths.out_dir == "out");
  CHECK(c.sweep.buffers.size() == 6);
  c.validate();
}

TEST_CASE("config values, lists and comments parse") {
  const PipelineConfig c = parse_pipeline_config(R"(
; comment
[paths]
out_dir = /tmp/x   # trailing comment
[align]
lambda = 0.5
[embed]
raw_pixel = true
[sweep]
buffers = 25:50, 50:75
lambdas = 0.1,0.3
fractions = 0.5, 1
[eval]
seeds = 7
)");
  CHECK(c.paths.out_dir == "/tmp/x");
  CHECK(c.align.lambda == 0.5);
  CHECK(c.embed.raw_pixel);
  REQUIRE(c.sweep.buffers.size() == 2);
  CHECK(c.sweep.buffers[1] == std::pair<double, double>{50, 75});
  CHECK(c.sweep.lambdas == std::vector<double>{0.1, 0.3});
  CHECK(c.eval_seeds == std::vector<std::uint64_t>{7});
  const PathConfig p = resolve_paths(c.paths);
  CHECK(p.field == "/tmp/x/synth/field.aef");
  CHECK(p.checkpoint == "/tmp/x/pretrain/checkpoint.aeth");
}

TEST_CASE("config errors carry source and line") {
  CHECK_THROWS_WITH_AS(parse_pipeline_config("[align]\nlamda = 0.3\n", "a.ini"),
                       doctest::Contains("a.ini:2: unknown key 'lamda' in section [align]"), ValidationError);
  CHECK_THROWS_WITH_AS(parse_pipeline_config("[nope]\n", "b.ini"), doctest::Contains("b.ini:1: unknown section"),
                       ValidationError);
  CHECK_THROWS_WITH_AS(parse_pipeline_config("lambda = 1\n", "c.ini"), doctest::Contains("outside a section"),
                       ValidationError);
  CHECK_THROWS_AS(parse_pipeline_config("[align]\nlambda = x\n"), ValidationError);
  CHECK_THROWS_AS(parse_pipeline_config("[embed]\nraw_pixel = maybe\n"), ValidationError);
  CHECK_THROWS_AS(parse_pipeline_config("[align\n"), ValidationError);
  CHECK_THROWS_AS(parse_pipeline_config("[sweep]\nbuffers = 25-50\n"), ValidationError);
  CHECK_THROWS_AS(load_pipeline_config("/nonexistent/cfg.ini"), IoError);
}

TEST_CASE("lambda of one and a tiny grid are rejected with the field named") {
  PipelineConfig c = small_config("cli_reject");
  c.align.lambda = 1.0;
  CHECK_THROWS_WITH_AS(cmd_pretrain(c), doctest::Contains("[0,1)"), ValidationError);
  c = small_config("cli_reject");
  c.synth.grid_size = 8;
  CHECK_THROWS_WITH_AS(cmd_synth(c), doctest::Contains("synth.grid_size"), ValidationError);
}

TEST_CASE("missing inputs give clear errors") {
  PipelineConfig c = small_config("cli_missing");
  CHECK_THROWS_WITH_AS(cmd_pretrain(c), doctest::Contains("field not found"), IoError);
  cmd_synth(c);
  CHECK_THROWS_WITH_AS(cmd_embed(c), doctest::Contains("checkpoint not found"), IoError);
  CHECK_THROWS_WITH_AS(cmd_eval(c, EvalTask::Luc), doctest::Contains("no embeddings found"), IoError);
  CHECK_THROWS_AS(parse_eval_task("pop"), ValidationError);
}

TEST_CASE("synth, pretrain, embed and eval end to end") {
  PipelineConfig c = small_config("cli_e2e");
  const BundlePaths b = cmd_synth(c);
  CHECK(fs::exists(b.manifest));
  const std::string manifest = oracle::slurp(b.manifest);
  cmd_synth(c);
  CHECK(oracle::slurp(b.manifest) == manifest);

  const PretrainOutcome pre = cmd_pretrain(c);
  CHECK(fs::exists(pre.checkpoint));
  CHECK(pre.epochs_logged == 5);
  CHECK(line_count(pre.log) == 6);  // header + 5 epochs
  REQUIRE(pre.best_epoch.has_value());
  CHECK(*pre.best_epoch < 5);

  const auto written = cmd_embed(c);
  CHECK(written.size() == 4);
  for (const auto& f : written) CHECK(fs::exists(f));
  const std::string aligned = oracle::slurp(embed_files(c.paths.out_dir).sdm_aligned);

  const std::string luc = cmd_eval(c, EvalTask::Luc);
  const std::string text = oracle::slurp(luc);
  CHECK(text.find("raw_ae,luc,f1,") != std::string::npos);
  CHECK(text.find("aligned,luc,f1,") != std::string::npos);
  const std::string sdm = oracle::slurp(cmd_eval(c, EvalTask::Sdm));
  CHECK(sdm.find("raw_ae,sdm,kl,") != std::string::npos);
  CHECK(sdm.find("aligned,sdm,chebyshev,") != std::string::npos);

  // rerunning every stage rewrites bit-identical files
  const std::string ckpt = oracle::slurp(pre.checkpoint);
  cmd_pretrain(c);
  cmd_embed(c);
  CHECK(oracle::slurp(pre.checkpoint) == ckpt);
  CHECK(oracle::slurp(embed_files(c.paths.out_dir).sdm_aligned) == aligned);
  CHECK(oracle::slurp(cmd_eval(c, EvalTask::Luc)) == text);

  // one seed: std column is zero
  c.eval_seeds = {3};
  const std::string one = oracle::slurp(cmd_eval(c, EvalTask::Luc));
  CHECK(one.find(",0,1,") != std::string::npos);

  // resume from the checkpoint after 3 epochs matches the uninterrupted log
  PipelineConfig r = small_config("cli_resume");
  r.paths.field = b.field;
  r.paths.pois = b.pois;
  r.paths.text = b.text;
  r.align.epochs = 3;
  const PretrainOutcome part = cmd_pretrain(r);
  r.align.epochs = 5;
  const PretrainOutcome rest = cmd_pretrain(r, part.checkpoint);
  CHECK(oracle::slurp(rest.log) == oracle::slurp(pre.log));
  CHECK(oracle::slurp(rest.checkpoint) == ckpt);
}

TEST_CASE("eval with only raw embeddings gives one block; mismatched checkpoint is rejected") {
  PipelineConfig c = small_config("cli_mismatch");
  const BundlePaths b = cmd_synth(c);
  cmd_pretrain(c);
  cmd_embed(c);
  fs::remove(embed_files(c.paths.out_dir).luc_aligned);
  c.eval_seeds = {0};
  const std::string rep = oracle::slurp(cmd_eval(c, EvalTask::Luc));
  CHECK(rep.find("raw_ae,") != std::string::npos);
  CHECK(rep.find("aligned,") == std::string::npos);

  // a 32-channel field against the 64-channel checkpoint
  PipelineConfig other = small_config("cli_mismatch_field");
  other.synth.channels = 32;
  const BundlePaths ob = cmd_synth(other);
  c.paths.field = ob.field;
  CHECK_THROWS_WITH_AS(cmd_embed(c), doctest::Contains("expects 64 channels but the field has 32"), ValidationError);
  (void)b;
}

TEST_CASE("sweep command writes one row per setting") {
  PipelineConfig c = small_config("cli_sweep");
  c.align.epochs = 1;
  c.task.max_epochs = 5;
  c.sweep.buffers = {{25, 50}, {50, 75}};
  cmd_synth(c);
  const std::string out = cmd_sweep(c, SweepAxis::Buffers);
  CHECK(fs::path(out).filename() == "sweep_buffers.csv");
  CHECK(line_count(out) == 3);
  CHECK_THROWS_AS(parse_sweep_axis("depth"), ValidationError);
}
