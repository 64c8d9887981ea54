#pragma once

// End-to-end experiments (pretrain -> embed -> downstream evaluation over
// seeds) and the one-factor-at-a-time sensitivity sweep built on them.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "aether/align.hpp"
#include "aether/infer.hpp"
#include "aether/tasks.hpp"

namespace aether {

struct DownstreamData {
  std::vector<SamplePoint> luc_points;  // ids are row indices of the label file
  std::vector<int> luc_labels;
  std::size_t luc_classes = 0;
  std::vector<RegionSpec> sdm_regions;
  nn::Matrix sdm_targets;  // row i belongs to sdm_regions[i]
};

/// Joins SDM targets to regions by id (every region needs a target) and
/// numbers the LUC samples by row.
DownstreamData make_downstream(const std::vector<LucSample>& luc, const std::vector<RegionSpec>& regions,
                               const std::vector<DistributionTarget>& targets);

/// Task matrices after embedding; rows whose buffer was empty are dropped.
struct EmbeddedSets {
  nn::Matrix luc;
  std::vector<int> luc_labels;
  nn::Matrix sdm;
  nn::Matrix sdm_targets;
  std::size_t luc_dropped = 0;
  std::size_t sdm_dropped = 0;
};

/// Matches embedding rows to the downstream tables by id.
EmbeddedSets join_embeddings(const DownstreamData& data, const std::vector<RegionEmbedding>& luc,
                             const std::vector<RegionEmbedding>& sdm);

/// LUC: one pooled vector per point at luc_radius through the head. SDM:
/// region means of per-cell embeddings. A null head gives the raw-field baseline
/// (pooled vectors for LUC, mean raw cell vectors for SDM).
std::pair<RegionEmbedResult, RegionEmbedResult> embed_downstream(const nn::AeProjectionHead* head,
                                                                 const EmbeddingField& field, const DownstreamData& data,
                                                                 double luc_radius, const EmbedOptions& options);

struct ExperimentInputs {
  const EmbeddingField* field = nullptr;
  std::span<const PoiRecord> pois;
  std::span<const TextEmbedding> text;
  const DownstreamData* downstream = nullptr;
};

struct ExperimentSettings {
  AlignmentConfig align;
  TaskTrainConfig task;
  double luc_radius = 50.0;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
};

struct ExperimentReports {
  EvalReport luc;
  EvalReport sdm;
};

/// For each seed s: pretrain with seed s, embed, train both task heads on the
/// split drawn with seed s.
ExperimentReports run_aligned_experiment(const ExperimentInputs& in, const ExperimentSettings& settings);
ExperimentReports run_raw_experiment(const EmbeddingField& field, const DownstreamData& data,
                                     const ExperimentSettings& settings);

// ---------------------------------------------------------------- sweep

enum class SweepAxis { Lambda, Buffers, Fraction };

SweepAxis parse_sweep_axis(const std::string& name);
std::string sweep_axis_name(SweepAxis axis);

struct SweepGrid {
  std::vector<double> lambdas{0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  std::vector<std::pair<double, double>> buffers{{25, 50}, {25, 75}, {25, 100}, {50, 75}, {50, 100}, {50, 125}};
  std::vector<double> fractions{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  std::uint64_t fraction_seed = 0;
};

struct SweepSetting {
  SweepAxis axis = SweepAxis::Lambda;
  std::string label;
  double r_b = 50.0;
  double r_a = 100.0;
  double lambda = 0.2;
  double fraction = 1.0;
};

/// One setting per grid entry on the chosen axis, other factors from `base`.
/// Throws ValidationError for pairs with r_a <= r_b or values outside range.
std::vector<SweepSetting> sweep_settings(SweepAxis axis, const AlignmentConfig& base, const SweepGrid& grid);

/// Prefixes of one seeded permutation of [0, n); subsets are nested and
/// each is returned in ascending order.
std::vector<std::vector<std::size_t>> fraction_subsets(std::size_t n, std::span<const double> fractions, std::uint64_t seed);

struct SweepRow {
  SweepSetting setting;
  bool ok = false;
  std::string status;
  std::size_t pois_used = 0;
  double luc_f1 = 0.0;
  double luc_f1_std = 0.0;
  double sdm_kl = 0.0;
  double sdm_kl_std = 0.0;
};

std::vector<SweepRow> run_sweep(const ExperimentInputs& in, const ExperimentSettings& base, SweepAxis axis,
                                const SweepGrid& grid);

/// axis,setting,r_b,r_a,lambda,fraction,pois,luc_f1,luc_f1_std,sdm_kl,sdm_kl_std,status
void write_sweep_csv(const std::vector<SweepRow>& rows, const std::string& path);

}  // namespace aether
