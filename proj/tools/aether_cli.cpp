#include <cstdio>
#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "aether/common.hpp"
#include "aether/config.hpp"
#include "aether/pipeline.hpp"
#include "aether/sweep.hpp"

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::size_t threads = 0;
  std::string out_dir;
  bool verbose = false;
};

aether::PipelineConfig load(const Globals& g) {
  aether::PipelineConfig cfg = g.config.empty() ? aether::PipelineConfig{} : aether::load_pipeline_config(g.config);
  if (g.seed) {
    cfg.synth.seed = *g.seed;
    cfg.align.seed = *g.seed;
  }
  if (!g.out_dir.empty()) cfg.paths.out_dir = g.out_dir;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"aether: align embedding-field rasters with POI text and evaluate region embeddings"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "pipeline config file (INI sections)")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "overrides synth.seed and align.seed");
  app.add_option("--threads", g.threads, "worker threads (0 = all cores)");
  app.add_option("--out-dir", g.out_dir, "output root (default: paths.out_dir)");
  app.add_flag("-v,--verbose", g.verbose, "debug logging");

  auto* synth = app.add_subcommand("synth", "generate the synthetic dataset bundle");

  auto* pre = app.add_subcommand("pretrain", "train the alignment model");
  std::string resume;
  std::optional<std::size_t> epochs;
  pre->add_option("--resume-from", resume, "training state or checkpoint to continue from");
  pre->add_option("--epochs", epochs, "overrides align.epochs");

  auto* emb = app.add_subcommand("embed", "embed LUC points and SDM regions");
  bool raw_pixel = false;
  emb->add_flag("--raw-pixel", raw_pixel, "apply the head to unpooled cell vectors");

  auto* ev = app.add_subcommand("eval", "train and score task heads over the seed list");
  std::string task;
  ev->add_option("task", task, "luc or sdm")->required()->check(CLI::IsMember({"luc", "sdm"}));

  auto* sw = app.add_subcommand("sweep", "one-factor sensitivity sweep");
  std::string axis;
  sw->add_option("axis", axis, "lambda, buffers or fraction")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    aether::set_log_level(g.verbose ? aether::LogLevel::Debug : aether::LogLevel::Info);
    if (g.threads > 0) aether::set_thread_count(g.threads);
    aether::PipelineConfig cfg = load(g);
    if (*synth) {
      const auto b = aether::cmd_synth(cfg);
      std::cout << b.manifest << '\n';
    } else if (*pre) {
      if (epochs) cfg.align.epochs = *epochs;
      const auto r = aether::cmd_pretrain(cfg, resume);
      std::cout << "checkpoint " << r.checkpoint << '\n';
      if (r.best_epoch) {
        std::cout << "best_epoch " << *r.best_epoch << " l_ap " << aether::format_double(r.best_l_ap) << '\n';
      } else {
        std::cout << "best_epoch none\n";
      }
    } else if (*emb) {
      if (raw_pixel) cfg.embed.raw_pixel = true;
      for (const auto& f : aether::cmd_embed(cfg)) std::cout << f << '\n';
    } else if (*ev) {
      std::cout << aether::cmd_eval(cfg, aether::parse_eval_task(task)) << '\n';
    } else if (*sw) {
      std::cout << aether::cmd_sweep(cfg, aether::parse_sweep_axis(axis)) << '\n';
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
