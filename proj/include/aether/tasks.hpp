#pragma once

// Downstream task heads (land-use classification and socioeconomic
// distribution mapping), their metrics and multi-seed evaluation.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "aether/nn.hpp"

namespace aether {

enum class TaskMode { Classification, Distribution, Regression };

/// h = relu(W1 r + b1), logits = W2 h + b2. With hidden() == 0 the head is
/// linear: logits = W2 r + b2 and w1/b1 are empty.
struct TaskHead {
  nn::Matrix w1;  // hidden x input
  nn::Vector b1;
  nn::Matrix w2;  // output x hidden (output x input when linear)
  nn::Vector b2;
  TaskMode mode = TaskMode::Classification;

  std::size_t hidden() const { return static_cast<std::size_t>(w1.rows()); }
  std::size_t input_dim() const { return static_cast<std::size_t>(hidden() == 0 ? w2.cols() : w1.cols()); }
  std::size_t output_dim() const { return static_cast<std::size_t>(w2.rows()); }

  static TaskHead zeros(std::size_t input, std::size_t hidden, std::size_t output, TaskMode mode);
  std::vector<nn::ParamRef> parameters();
};

TaskHead init_task_head(std::size_t input, std::size_t hidden, std::size_t output, TaskMode mode, CounterRng& rng);

nn::Vector head_predict(const TaskHead& head, std::span<const double> r);
nn::Matrix head_predict(const TaskHead& head, const nn::Matrix& inputs);

/// Row-wise softmax with max subtraction.
nn::Matrix softmax_rows(const nn::Matrix& logits);

struct TaskLoss {
  double value = 0.0;
  TaskHead grad;
};

/// Mean over rows of -sum_c t_c log softmax(logits)_c for Classification
/// (one-hot rows) and Distribution; mean squared error for Regression.
TaskLoss task_loss(const TaskHead& head, const nn::Matrix& inputs, const nn::Matrix& targets);
double task_loss_value(const TaskHead& head, const nn::Matrix& inputs, const nn::Matrix& targets);

// ---------------------------------------------------------------- metrics

struct PrfScores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Per-class scores with 0/0 = 0, averaged over the classes present in y_true.
PrfScores metric_macro_prf(std::span<const int> y_true, std::span<const int> y_pred, std::size_t num_classes);

struct DistributionScores {
  double kl = 0.0;
  double l1 = 0.0;
  double chebyshev = 0.0;
};

inline constexpr double kProbabilityFloor = 1e-8;

/// KL(q || p) with p clamped to >= 1e-8 (renormalized if the clamp changed
/// anything) and q_i = 0 terms dropped; L1 is the mean absolute bin
/// difference, Chebyshev the largest.
DistributionScores metric_distribution(std::span<const double> p, std::span<const double> q);

// ---------------------------------------------------------------- splits and training

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
  std::string descriptor;
};

/// 70/15/15 per class; each part sorted ascending.
Split split_stratified(std::span<const int> labels, std::uint64_t seed);
/// 70/15/15 over all rows; each part sorted ascending.
Split split_random(std::size_t n, std::uint64_t seed);

struct TaskTrainConfig {
  std::size_t hidden = 64;
  double learning_rate = 1e-3;
  std::size_t max_epochs = 500;
  std::size_t patience = 20;
  bool standardize = false;  // per-feature z-scoring from the training rows
};

struct TrainedTaskHead {
  TaskHead head;  // standardization already folded into the first layer
  std::size_t epochs_run = 0;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
};

/// Full-batch Adam with early stopping on the validation loss; the best
/// weights are restored before returning.
TrainedTaskHead train_task_head(const nn::Matrix& inputs, const nn::Matrix& targets, const Split& split, TaskMode mode,
                                const TaskTrainConfig& cfg, std::uint64_t seed);

struct LucResult {
  TrainedTaskHead model;
  PrfScores test;
};

LucResult train_luc(const nn::Matrix& embeddings, std::span<const int> labels, std::size_t num_classes, const Split& split,
                    const TaskTrainConfig& cfg, std::uint64_t seed);

struct SdmResult {
  TrainedTaskHead model;
  DistributionScores test;  // mean over test regions
};

SdmResult train_sdm(const nn::Matrix& embeddings, const nn::Matrix& targets, const Split& split, const TaskTrainConfig& cfg,
                    std::uint64_t seed);

// ---------------------------------------------------------------- reports

struct MetricSummary {
  std::string name;
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation, 0 for one seed
  std::vector<double> values;
};

struct EvalReport {
  std::vector<MetricSummary> metrics;
  std::vector<std::uint64_t> seeds;
  std::string split;

  const MetricSummary& metric(const std::string& name) const;
};

MetricSummary summarize(std::string name, std::vector<double> values);

/// Split seed and head seed are both the listed seed.
EvalReport evaluate_luc(const nn::Matrix& embeddings, std::span<const int> labels, std::size_t num_classes,
                        std::span<const std::uint64_t> seeds, const TaskTrainConfig& cfg);
EvalReport evaluate_sdm(const nn::Matrix& embeddings, const nn::Matrix& targets, std::span<const std::uint64_t> seeds,
                        const TaskTrainConfig& cfg);

struct ReportBlock {
  std::string name;  // e.g. "raw_ae" or "aligned"
  std::string task;  // "luc" or "sdm"
  EvalReport report;
};

/// block,task,metric,mean,std,n_seeds,split,values
void write_report_csv(const std::vector<ReportBlock>& blocks, const std::string& path);

// ---------------------------------------------------------------- label files

struct LucSample {
  double x = 0.0;
  double y = 0.0;
  int label = 0;
};

/// x,y,label
std::vector<LucSample> load_luc_samples(const std::string& path);
void save_luc_samples(const std::vector<LucSample>& samples, const std::string& path);

struct DistributionTarget {
  std::string region_id;
  std::vector<double> q;
};

/// region_id,q1..qB; every row must be a distribution within 1e-6.
std::vector<DistributionTarget> load_sdm_targets(const std::string& path);
void save_sdm_targets(const std::vector<DistributionTarget>& targets, const std::string& path);

}  // namespace aether
