#pragma once

// Synthetic city with known latent structure.
//
// K smoothed noise channels are turned into per-cell archetype mixtures
// (softmax of sharpened, standardized logits). The embedding field is a
// fixed orthonormal 64xK mixing of the mixture plus Gaussian noise. POI
// categories are drawn from the mixture at the POI's cell, LUC labels are the
// dominant archetype, and SDM targets are a softmax of two linear maps: one
// of the region-mean mixture and one of the region-mean centered logits.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "aether/fieldgrid.hpp"
#include "aether/infer.hpp"
#include "aether/nn.hpp"
#include "aether/poi.hpp"
#include "aether/tasks.hpp"

namespace aether {

enum class TextMode { Prototype, Fallback };

struct SynthConfig {
  std::size_t grid_size = 128;
  std::size_t n_pois = 2000;
  std::size_t n_regions = 100;
  std::size_t K = 6;
  double noise_sigma = 0.05;
  std::uint64_t seed = 0;
  std::size_t d_t = 384;
  std::size_t n_luc = 1000;
  std::size_t channels = 64;
  double cell_size = 10.0;
  double region_radius = 300.0;
  std::size_t bins = 9;
  double sharpness = 2.5;        // scale applied to the standardized logits
  double text_noise = 0.1;       // per-entry std added to text prototypes
  double sdm_scale = 1.0;        // std of the SDM link matrices
  double semantic_weight = 0.5;  // weight of the centered-logit SDM term
  TextMode text_mode = TextMode::Prototype;

  /// Throws ValidationError naming the offending field.
  void validate() const;
};

struct SynthWorld {
  SynthConfig config;
  EmbeddingField field;
  std::vector<PoiRecord> pois;
  std::vector<TextEmbedding> text;
  std::vector<LucSample> luc;
  std::vector<RegionSpec> regions;
  std::vector<DistributionTarget> targets;
  std::vector<std::string> l1_names;
  std::vector<std::vector<std::string>> l2_names;  // K x 3
  nn::Matrix latent;  // cells x K mixture, row-major cell order
  nn::Matrix logits;  // cells x K, centered per cell
  nn::Matrix mixing;  // channels x K, orthonormal columns
  nn::Matrix sdm_linear;
  nn::Matrix sdm_semantic;
};

SynthWorld generate(const SynthConfig& cfg);

/// Per-sample latent mixture at the LUC sample cells (n_luc x K).
nn::Matrix luc_latent_features(const SynthWorld& world);
/// Per-region [mean mixture, mean centered logits] (n_regions x 2K).
nn::Matrix sdm_latent_features(const SynthWorld& world);

struct OracleReference {
  double self_luc_f1 = 0.0;
  double self_sdm_kl = 0.0;
  EvalReport latent_probe_luc;
  EvalReport latent_probe_sdm;
};

OracleReference oracle_best_possible(const SynthWorld& world, const std::vector<std::uint64_t>& seeds,
                                     const TaskTrainConfig& task);

struct BundlePaths {
  std::string dir;
  std::string field;
  std::string pois;
  std::string text;
  std::string luc;
  std::string regions;
  std::string sdm;
  std::string manifest;
};

BundlePaths bundle_paths(const std::string& dir);

/// Writes every artifact plus manifest.json (config and content hashes).
BundlePaths write_bundle(const SynthWorld& world, const std::string& dir);

std::string text_mode_name(TextMode mode);
TextMode parse_text_mode(const std::string& name);

}  // namespace aether
