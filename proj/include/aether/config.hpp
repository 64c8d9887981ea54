#pragma once

// Pipeline configuration: an INI-style file with [paths], [synth], [align],
// [task], [embed], [eval] and [sweep] sections of `key = value` lines.
// Comments start with '#' or ';', at line start or after whitespace. Unknown sections and keys are errors.
// Every key has a default, so an empty file is a valid configuration.

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "aether/align.hpp"
#include "aether/infer.hpp"
#include "aether/sweep.hpp"
#include "aether/synth.hpp"
#include "aether/tasks.hpp"

namespace aether {

/// Empty entries are derived from out_dir (see resolve_paths).
struct PathConfig {
  std::string out_dir = "out";
  std::string field;
  std::string pois;
  std::string text;
  std::string luc;
  std::string regions;
  std::string region_mask;  // alternative to `regions`
  std::string sdm;
  std::string checkpoint;
};

struct EmbedConfig {
  double luc_radius = 50.0;
  bool raw_pixel = false;
  std::size_t tile_cells = 256 * 256;
};

struct PipelineConfig {
  PathConfig paths;
  SynthConfig synth;
  AlignmentConfig align;
  TaskTrainConfig task;
  EmbedConfig embed;
  std::vector<std::uint64_t> eval_seeds{0, 1, 2, 3, 4};
  SweepGrid sweep;
  std::vector<std::uint64_t> sweep_seeds{0};

  /// Checks the synth and align blocks and the remaining numeric ranges.
  void validate() const;
};

PipelineConfig parse_pipeline_config(std::string_view text, const std::string& source = "<config>");
PipelineConfig load_pipeline_config(const std::string& path);

/// Every path filled in: inputs default to the synth bundle under
/// out_dir/synth, the checkpoint to out_dir/pretrain/checkpoint.aeth.
PathConfig resolve_paths(const PathConfig& paths);

}  // namespace aether
