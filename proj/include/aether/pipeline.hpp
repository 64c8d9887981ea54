#pragma once

// Subcommand bodies behind the aether CLI. Each throws on failure; outputs
// land under the configured out_dir:
//   synth/     dataset bundle
//   pretrain/  checkpoint.aeth, train_log.csv, train_state.aets
//   embed/     luc_aligned.csv, luc_raw.csv, sdm_aligned.csv, sdm_raw.csv
//   eval/      luc_report.csv, sdm_report.csv
//   sweep/     sweep_<axis>.csv

#include <optional>
#include <string>
#include <vector>

#include "aether/config.hpp"
#include "aether/sweep.hpp"
#include "aether/synth.hpp"

namespace aether {

BundlePaths cmd_synth(const PipelineConfig& cfg);

struct PretrainOutcome {
  std::string checkpoint;
  std::string log;
  std::string state;
  std::optional<std::size_t> best_epoch;
  double best_l_ap = 0.0;
  std::size_t epochs_logged = 0;
};

/// `resume_from` is a training-state file, or a checkpoint whose directory
/// holds train_state.aets.
PretrainOutcome cmd_pretrain(const PipelineConfig& cfg, const std::string& resume_from = "");

/// Paths of the embedding files written.
std::vector<std::string> cmd_embed(const PipelineConfig& cfg);

enum class EvalTask { Luc, Sdm };
EvalTask parse_eval_task(const std::string& name);

/// Scores every embedding file present for the task (raw and/or aligned)
/// and returns the report path.
std::string cmd_eval(const PipelineConfig& cfg, EvalTask task);

std::string cmd_sweep(const PipelineConfig& cfg, SweepAxis axis);

struct EmbedFiles {
  std::string luc_aligned;
  std::string luc_raw;
  std::string sdm_aligned;
  std::string sdm_raw;
};
EmbedFiles embed_files(const std::string& out_dir);

}  // namespace aether
