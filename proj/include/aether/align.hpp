#pragma once

// Dual-scale contrastive alignment: symmetric InfoNCE between the base and
// augmented views of each POI location (intra-modal) and between the base
// view and the POI text embedding (cross-modal), plus the pretraining loop.

#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "aether/fieldgrid.hpp"
#include "aether/nn.hpp"
#include "aether/poi.hpp"

namespace aether {

/// Row i of each matrix is one POI's (base view, augmented view, text) embedding.
struct AlignmentBatch {
  nn::Matrix z_base;
  nn::Matrix z_aug;
  nn::Matrix z_poi;

  /// Consistent shapes, N >= 1, every row unit-norm within 1e-5.
  void validate() const;
};

struct AlignmentConfig {
  double lambda = 0.2;
  double tau_ae = 0.07;
  double tau_poi = 0.07;
  std::size_t batch_size = 512;
  std::size_t epochs = 100;
  std::uint64_t seed = 0;
  double r_b = 50.0;
  double r_a = 100.0;
  std::size_t hidden = 256;
  std::size_t output_dim = 128;
  nn::AdamWConfig optimizer;

  /// Throws ValidationError naming the offending field.
  void validate() const;
};

struct PairLoss {
  double value = 0.0;
  nn::Matrix grad_left;
  nn::Matrix grad_right;
};

/// -1/(2N) * sum_i [log softmax_j(l_i.r_j / tau)_i + log softmax_j(r_i.l_j / tau)_i]
/// with gradients with respect to both row sets.
PairLoss symmetric_info_nce(const nn::Matrix& left, const nn::Matrix& right, double tau);

/// Base <-> augmented views; grad_left is d/dz_base, grad_right is d/dz_aug.
PairLoss loss_intra(const AlignmentBatch& batch, double tau_ae);
/// Base view <-> POI text; grad_left is d/dz_base, grad_right is d/dz_poi.
PairLoss loss_cross(const AlignmentBatch& batch, double tau_poi);

struct TotalLoss {
  double total = 0.0;
  double intra = 0.0;
  double cross = 0.0;
  nn::Matrix grad_base;
  nn::Matrix grad_aug;
  nn::Matrix grad_poi;
};

/// lambda * intra + (1 - lambda) * cross.
TotalLoss loss_total(const AlignmentBatch& batch, const AlignmentConfig& cfg);

struct EpochLog {
  std::size_t epoch = 0;
  double l_ae = 0.0;
  double l_ap = 0.0;
  double l_total = 0.0;
  bool is_best = false;
};

/// Everything needed to continue a run exactly where it stopped.
struct TrainState {
  nn::AlignmentModel current;
  nn::AdamWState optimizer;
  nn::AlignmentModel best;
  std::size_t next_epoch = 0;
  std::optional<std::size_t> best_epoch;
  double best_l_ap = std::numeric_limits<double>::infinity();
  std::vector<EpochLog> log;
  std::uint64_t seed = 0;
  std::uint64_t used_pois = 0;
};

struct PretrainResult {
  nn::AlignmentModel model;  // best-on-train snapshot
  std::vector<EpochLog> log;
  std::optional<std::size_t> best_epoch;
  double best_l_ap = std::numeric_limits<double>::infinity();
  std::size_t used_pois = 0;
  std::size_t dropped_pois = 0;
  TrainState state;
};

/// POI pairs pooled once at both radii; rows follow the kept POIs' order.
struct PooledPairs {
  nn::Matrix base;
  nn::Matrix aug;
  std::vector<std::size_t> kept;  // indices into the input POI list
  std::size_t dropped = 0;
};

PooledPairs pool_poi_views(const EmbeddingField& field, std::span<const PoiRecord> pois, double r_b, double r_a);

/// Trains the projection head and text projector. `text` must be aligned with
/// `pois`. POIs with an empty base or augmented buffer are dropped up front.
/// Passing `resume` continues from a saved state (same data and config).
PretrainResult pretrain(const EmbeddingField& field, std::span<const PoiRecord> pois, std::span<const TextEmbedding> text,
                        const AlignmentConfig& cfg, const TrainState* resume = nullptr);

void write_training_log(const std::vector<EpochLog>& log, const std::string& path);

void save_train_state(const TrainState& state, const std::string& path);
TrainState load_train_state(const std::string& path);

}  // namespace aether
