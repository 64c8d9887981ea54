#include "aether/tasks.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "aether/common.hpp"
#include "aether/csv.hpp"
#include "aether/error.hpp"
#include "aether/rng.hpp"

namespace aether {

using nn::Matrix;
using nn::Vector;

TaskHead TaskHead::zeros(std::size_t input, std::size_t hidden, std::size_t output, TaskMode mode) {
  TaskHead h;
  const auto i = static_cast<Eigen::Index>(input);
  const auto k = static_cast<Eigen::Index>(hidden);
  const auto o = static_cast<Eigen::Index>(output);
  h.w1 = Matrix::Zero(k, i);
  h.b1 = Vector::Zero(k);
  h.w2 = Matrix::Zero(o, hidden == 0 ? i : k);
  h.b2 = Vector::Zero(o);
  h.mode = mode;
  return h;
}

std::vector<nn::ParamRef> TaskHead::parameters() {
  auto dims = [](const auto& m) {
    return std::vector<std::uint32_t>{static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())};
  };
  std::vector<nn::ParamRef> out;
  if (hidden() > 0) {
    out.push_back({"w1", w1.data(), static_cast<std::size_t>(w1.size()), dims(w1), true});
    out.push_back({"b1", b1.data(), static_cast<std::size_t>(b1.size()), {static_cast<std::uint32_t>(b1.size())}, false});
  }
  out.push_back({"w2", w2.data(), static_cast<std::size_t>(w2.size()), dims(w2), true});
  out.push_back({"b2", b2.data(), static_cast<std::size_t>(b2.size()), {static_cast<std::uint32_t>(b2.size())}, false});
  return out;
}

TaskHead init_task_head(std::size_t input, std::size_t hidden, std::size_t output, TaskMode mode, CounterRng& rng) {
  TaskHead h = TaskHead::zeros(input, hidden, output, mode);
  auto fill = [&](Matrix& m, double bound) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-bound, bound);
  };
  if (hidden > 0) fill(h.w1, std::sqrt(6.0 / static_cast<double>(input)));
  fill(h.w2, std::sqrt(3.0 / static_cast<double>(h.w2.cols())));
  return h;
}

namespace {

struct Forward {
  Matrix pre;
  Matrix hidden;
  Matrix logits;
};

Forward forward(const TaskHead& head, const Matrix& inputs) {
  if (static_cast<std::size_t>(inputs.cols()) != head.input_dim()) {
    throw ValidationError("task head expects " + std::to_string(head.input_dim()) + " inputs, got " +
                          std::to_string(inputs.cols()));
  }
  Forward f;
  if (head.hidden() == 0) {
    f.logits.noalias() = inputs * head.w2.transpose();
  } else {
    f.pre.noalias() = inputs * head.w1.transpose();
    f.pre.rowwise() += head.b1.transpose();
    f.hidden = f.pre.cwiseMax(0.0);
    f.logits.noalias() = f.hidden * head.w2.transpose();
  }
  f.logits.rowwise() += head.b2.transpose();
  return f;
}

Vector row_logsumexp(const Matrix& logits) {
  Vector out(logits.rows());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    out[i] = m + std::log((logits.row(i).array() - m).exp().sum());
  }
  return out;
}

double loss_from_logits(const Matrix& logits, const Matrix& targets, TaskMode mode) {
  const double n = static_cast<double>(logits.rows());
  if (mode == TaskMode::Regression) return (logits - targets).squaredNorm() / (n * static_cast<double>(logits.cols()));
  const Vector lse = row_logsumexp(logits);
  double total = 0.0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    for (Eigen::Index c = 0; c < logits.cols(); ++c) {
      const double t = targets(i, c);
      if (t != 0.0) total -= t * (logits(i, c) - lse[i]);
    }
  }
  return total / n;
}

void check_targets(const Matrix& inputs, const Matrix& targets, const TaskHead& head) {
  if (targets.rows() != inputs.rows() || static_cast<std::size_t>(targets.cols()) != head.output_dim()) {
    throw ValidationError("task targets shape does not match inputs/head");
  }
  if (inputs.rows() == 0) throw ValidationError("task loss over zero rows");
}

}  // namespace

Vector head_predict(const TaskHead& head, std::span<const double> r) {
  const Matrix row = Eigen::Map<const Matrix>(r.data(), 1, static_cast<Eigen::Index>(r.size()));
  return forward(head, row).logits.row(0).transpose();
}

Matrix head_predict(const TaskHead& head, const Matrix& inputs) { return forward(head, inputs).logits; }

Matrix softmax_rows(const Matrix& logits) {
  Matrix p(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    p.row(i) = (logits.row(i).array() - m).exp().matrix();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

double task_loss_value(const TaskHead& head, const Matrix& inputs, const Matrix& targets) {
  check_targets(inputs, targets, head);
  return loss_from_logits(forward(head, inputs).logits, targets, head.mode);
}

TaskLoss task_loss(const TaskHead& head, const Matrix& inputs, const Matrix& targets) {
  check_targets(inputs, targets, head);
  const Forward f = forward(head, inputs);
  const double n = static_cast<double>(inputs.rows());
  TaskLoss out;
  out.value = loss_from_logits(f.logits, targets, head.mode);
  Matrix d_logits;
  if (head.mode == TaskMode::Regression) {
    d_logits = (2.0 / (n * static_cast<double>(f.logits.cols()))) * (f.logits - targets);
  } else {
    // Targets need not sum to one here, so keep the general form.
    const Matrix p = softmax_rows(f.logits);
    d_logits = p.array().colwise() * targets.rowwise().sum().array();
    d_logits -= targets;
    d_logits /= n;
  }
  out.grad = TaskHead::zeros(head.input_dim(), head.hidden(), head.output_dim(), head.mode);
  out.grad.b2 = d_logits.colwise().sum().transpose();
  if (head.hidden() == 0) {
    out.grad.w2.noalias() = d_logits.transpose() * inputs;
    return out;
  }
  out.grad.w2.noalias() = d_logits.transpose() * f.hidden;
  Matrix d_pre = d_logits * head.w2;
  d_pre = d_pre.cwiseProduct((f.pre.array() > 0.0).cast<double>().matrix());
  out.grad.w1.noalias() = d_pre.transpose() * inputs;
  out.grad.b1 = d_pre.colwise().sum().transpose();
  return out;
}

// ---------------------------------------------------------------- metrics

PrfScores metric_macro_prf(std::span<const int> y_true, std::span<const int> y_pred, std::size_t num_classes) {
  if (y_true.size() != y_pred.size()) throw ValidationError("metric_macro_prf: y_true and y_pred differ in length");
  if (y_true.empty()) throw ValidationError("metric_macro_prf: no samples");
  std::vector<std::size_t> tp(num_classes, 0), fp(num_classes, 0), fn(num_classes, 0);
  std::vector<bool> present(num_classes, false);
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    const int t = y_true[i];
    const int p = y_pred[i];
    if (t < 0 || static_cast<std::size_t>(t) >= num_classes || p < 0 || static_cast<std::size_t>(p) >= num_classes) {
      throw ValidationError("metric_macro_prf: label outside [0, " + std::to_string(num_classes) + ")");
    }
    present[static_cast<std::size_t>(t)] = true;
    if (t == p) {
      ++tp[static_cast<std::size_t>(t)];
    } else {
      ++fp[static_cast<std::size_t>(p)];
      ++fn[static_cast<std::size_t>(t)];
    }
  }
  auto ratio = [](std::size_t a, std::size_t b) { return b == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(b); };
  PrfScores out;
  std::size_t classes = 0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (!present[c]) continue;
    const double precision = ratio(tp[c], tp[c] + fp[c]);
    const double recall = ratio(tp[c], tp[c] + fn[c]);
    const double f1 = precision + recall == 0.0 ? 0.0 : 2.0 * precision * recall / (precision + recall);
    out.precision += precision;
    out.recall += recall;
    out.f1 += f1;
    ++classes;
  }
  const double k = static_cast<double>(classes);
  out.precision /= k;
  out.recall /= k;
  out.f1 /= k;
  return out;
}

DistributionScores metric_distribution(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size() || p.empty()) throw ValidationError("metric_distribution: p and q must be non-empty and equal length");
  std::vector<double> pc(p.begin(), p.end());
  bool clamped = false;
  for (double& v : pc) {
    if (v < kProbabilityFloor) {
      v = kProbabilityFloor;
      clamped = true;
    }
  }
  if (clamped) {
    const double s = std::accumulate(pc.begin(), pc.end(), 0.0);
    for (double& v : pc) v /= s;
  }
  DistributionScores out;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (q[i] > 0.0) out.kl += q[i] * std::log(q[i] / pc[i]);
    const double diff = std::abs(p[i] - q[i]);
    out.l1 += diff;
    out.chebyshev = std::max(out.chebyshev, diff);
  }
  out.l1 /= static_cast<double>(p.size());
  return out;
}

// ---------------------------------------------------------------- splits

namespace {

constexpr double kTrainFraction = 0.70;
constexpr double kValFraction = 0.15;

void assign_parts(std::vector<std::size_t> items, CounterRng& rng, Split& split) {
  shuffle_in_place(std::span<std::size_t>(items), rng);
  const auto n = static_cast<double>(items.size());
  const auto n_train = static_cast<std::size_t>(std::llround(kTrainFraction * n));
  const auto n_val = std::min(items.size() - n_train, static_cast<std::size_t>(std::llround(kValFraction * n)));
  split.train.insert(split.train.end(), items.begin(), items.begin() + static_cast<std::ptrdiff_t>(n_train));
  split.val.insert(split.val.end(), items.begin() + static_cast<std::ptrdiff_t>(n_train),
                   items.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  split.test.insert(split.test.end(), items.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), items.end());
}

void sort_parts(Split& s) {
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.val.begin(), s.val.end());
  std::sort(s.test.begin(), s.test.end());
}

}  // namespace

Split split_stratified(std::span<const int> labels, std::uint64_t seed) {
  int max_label = -1;
  for (int l : labels) {
    if (l < 0) throw ValidationError("split_stratified: negative label");
    max_label = std::max(max_label, l);
  }
  Split s;
  for (int c = 0; c <= max_label; ++c) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] == c) members.push_back(i);
    }
    CounterRng rng(seed, "split_stratified", static_cast<std::uint64_t>(c));
    assign_parts(std::move(members), rng, s);
  }
  sort_parts(s);
  s.descriptor = "stratified 70/15/15 seed " + std::to_string(seed);
  return s;
}

Split split_random(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> items(n);
  std::iota(items.begin(), items.end(), std::size_t{0});
  Split s;
  CounterRng rng(seed, "split_random");
  assign_parts(std::move(items), rng, s);
  sort_parts(s);
  s.descriptor = "random 70/15/15 seed " + std::to_string(seed);
  return s;
}

// ---------------------------------------------------------------- training

namespace {

Matrix take_rows(const Matrix& m, const std::vector<std::size_t>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = m.row(static_cast<Eigen::Index>(rows[r]));
  return out;
}

// Folds x' = (x - mean) / scale into the first layer.
void fold_standardization(TaskHead& head, const Eigen::RowVectorXd& mean, const Eigen::RowVectorXd& scale) {
  Matrix& w = head.hidden() == 0 ? head.w2 : head.w1;
  Vector& b = head.hidden() == 0 ? head.b2 : head.b1;
  w = (w.array().rowwise() / scale.array()).matrix();
  b -= w * mean.transpose();
}

}  // namespace

TrainedTaskHead train_task_head(const Matrix& inputs, const Matrix& targets, const Split& split, TaskMode mode,
                                const TaskTrainConfig& cfg, std::uint64_t seed) {
  if (split.train.empty()) throw ValidationError("task training split is empty");
  if (inputs.rows() != targets.rows()) throw ValidationError("task inputs and targets differ in row count");
  if (!inputs.allFinite() || !targets.allFinite()) throw NumericError("task inputs or targets are not finite");

  Matrix x_train = take_rows(inputs, split.train);
  Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(inputs.cols());
  Eigen::RowVectorXd scale = Eigen::RowVectorXd::Ones(inputs.cols());
  if (cfg.standardize) {
    mean = x_train.colwise().mean();
    for (Eigen::Index j = 0; j < inputs.cols(); ++j) {
      const double var = (x_train.col(j).array() - mean[j]).square().mean();
      scale[j] = var > 1e-24 ? std::sqrt(var) : 1.0;
    }
  }
  auto standardize = [&](const Matrix& m) { return Matrix((m.rowwise() - mean).array().rowwise() / scale.array()); };
  x_train = standardize(x_train);
  const Matrix t_train = take_rows(targets, split.train);
  const bool has_val = !split.val.empty();
  const Matrix x_val = has_val ? standardize(take_rows(inputs, split.val)) : Matrix();
  const Matrix t_val = has_val ? take_rows(targets, split.val) : Matrix();

  CounterRng rng(seed, "task_head_init");
  TaskHead head = init_task_head(static_cast<std::size_t>(inputs.cols()), cfg.hidden, static_cast<std::size_t>(targets.cols()),
                                 mode, rng);
  nn::AdamWState opt;
  opt.config.learning_rate = cfg.learning_rate;
  opt.config.weight_decay = 0.0;

  TrainedTaskHead out;
  out.head = head;
  out.best_val_loss = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    TaskLoss loss = task_loss(head, x_train, t_train);
    if (!std::isfinite(loss.value)) throw NumericError("task head: non-finite training loss at epoch " + std::to_string(epoch));
    auto params = head.parameters();
    const auto grads = loss.grad.parameters();
    nn::adamw_step(opt, params, grads);
    out.epochs_run = epoch;
    const double val = has_val ? task_loss_value(head, x_val, t_val) : task_loss_value(head, x_train, t_train);
    if (val < out.best_val_loss) {
      out.best_val_loss = val;
      out.best_epoch = epoch;
      out.head = head;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  fold_standardization(out.head, mean, scale);
  return out;
}

LucResult train_luc(const Matrix& embeddings, std::span<const int> labels, std::size_t num_classes, const Split& split,
                    const TaskTrainConfig& cfg, std::uint64_t seed) {
  if (static_cast<std::size_t>(embeddings.rows()) != labels.size()) {
    throw ValidationError("train_luc: " + std::to_string(embeddings.rows()) + " embeddings but " +
                          std::to_string(labels.size()) + " labels");
  }
  Matrix onehot = Matrix::Zero(embeddings.rows(), static_cast<Eigen::Index>(num_classes));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes) {
      throw ValidationError("train_luc: label " + std::to_string(labels[i]) + " outside [0, " + std::to_string(num_classes) + ")");
    }
    onehot(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
  }
  std::vector<bool> in_train(num_classes, false);
  for (auto i : split.train) in_train[static_cast<std::size_t>(labels[i])] = true;
  const auto train_classes = std::count(in_train.begin(), in_train.end(), true);
  if (train_classes < 2) throw ValidationError("train_luc: fewer than 2 classes in the training split");
  if (static_cast<std::size_t>(train_classes) < num_classes) {
    log_info("train_luc: ", num_classes - static_cast<std::size_t>(train_classes), " classes absent from the training split");
  }
  if (split.test.empty()) throw ValidationError("train_luc: test split is empty");

  LucResult out;
  out.model = train_task_head(embeddings, onehot, split, TaskMode::Classification, cfg, seed);
  const Matrix logits = head_predict(out.model.head, take_rows(embeddings, split.test));
  std::vector<int> y_true, y_pred;
  for (std::size_t r = 0; r < split.test.size(); ++r) {
    Eigen::Index arg = 0;
    logits.row(static_cast<Eigen::Index>(r)).maxCoeff(&arg);
    y_pred.push_back(static_cast<int>(arg));
    y_true.push_back(labels[split.test[r]]);
  }
  out.test = metric_macro_prf(y_true, y_pred, num_classes);
  return out;
}

SdmResult train_sdm(const Matrix& embeddings, const Matrix& targets, const Split& split, const TaskTrainConfig& cfg,
                    std::uint64_t seed) {
  if (embeddings.rows() != targets.rows()) {
    throw ValidationError("train_sdm: " + std::to_string(embeddings.rows()) + " embeddings but " +
                          std::to_string(targets.rows()) + " targets");
  }
  if (split.test.empty()) throw ValidationError("train_sdm: test split is empty");
  SdmResult out;
  out.model = train_task_head(embeddings, targets, split, TaskMode::Distribution, cfg, seed);
  const Matrix p = softmax_rows(head_predict(out.model.head, take_rows(embeddings, split.test)));
  for (std::size_t r = 0; r < split.test.size(); ++r) {
    const auto pr = p.row(static_cast<Eigen::Index>(r));
    const auto qr = targets.row(static_cast<Eigen::Index>(split.test[r]));
    const auto s = metric_distribution(std::span<const double>(pr.data(), static_cast<std::size_t>(pr.size())),
                                       std::span<const double>(qr.data(), static_cast<std::size_t>(qr.size())));
    out.test.kl += s.kl;
    out.test.l1 += s.l1;
    out.test.chebyshev += s.chebyshev;
  }
  const double n = static_cast<double>(split.test.size());
  out.test.kl /= n;
  out.test.l1 /= n;
  out.test.chebyshev /= n;
  return out;
}

// ---------------------------------------------------------------- reports

const MetricSummary& EvalReport::metric(const std::string& name) const {
  for (const auto& m : metrics) {
    if (m.name == name) return m;
  }
  throw ValidationError("report has no metric '" + name + "'");
}

MetricSummary summarize(std::string name, std::vector<double> values) {
  if (values.empty()) throw ValidationError("summarize: no values for " + name);
  MetricSummary s;
  s.name = std::move(name);
  const double n = static_cast<double>(values.size());
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / (n - 1.0));
  }
  s.values = std::move(values);
  return s;
}

EvalReport evaluate_luc(const Matrix& embeddings, std::span<const int> labels, std::size_t num_classes,
                        std::span<const std::uint64_t> seeds, const TaskTrainConfig& cfg) {
  if (seeds.empty()) throw ValidationError("evaluate_luc: empty seed list");
  std::vector<PrfScores> scores(seeds.size());
  parallel_for(seeds.size(), [&](std::size_t k) {
    scores[k] = train_luc(embeddings, labels, num_classes, split_stratified(labels, seeds[k]), cfg, seeds[k]).test;
  });
  std::vector<double> p, r, f;
  for (const auto& s : scores) {
    p.push_back(s.precision);
    r.push_back(s.recall);
    f.push_back(s.f1);
  }
  EvalReport rep;
  rep.metrics = {summarize("precision", p), summarize("recall", r), summarize("f1", f)};
  rep.seeds.assign(seeds.begin(), seeds.end());
  rep.split = "stratified 70/15/15";
  return rep;
}

EvalReport evaluate_sdm(const Matrix& embeddings, const Matrix& targets, std::span<const std::uint64_t> seeds,
                        const TaskTrainConfig& cfg) {
  if (seeds.empty()) throw ValidationError("evaluate_sdm: empty seed list");
  std::vector<DistributionScores> scores(seeds.size());
  parallel_for(seeds.size(), [&](std::size_t k) {
    scores[k] = train_sdm(embeddings, targets, split_random(static_cast<std::size_t>(embeddings.rows()), seeds[k]), cfg,
                          seeds[k])
                    .test;
  });
  std::vector<double> kl, l1, ch;
  for (const auto& s : scores) {
    kl.push_back(s.kl);
    l1.push_back(s.l1);
    ch.push_back(s.chebyshev);
  }
  EvalReport rep;
  rep.metrics = {summarize("kl", kl), summarize("l1", l1), summarize("chebyshev", ch)};
  rep.seeds.assign(seeds.begin(), seeds.end());
  rep.split = "random 70/15/15";
  return rep;
}

void write_report_csv(const std::vector<ReportBlock>& blocks, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << "block,task,metric,mean,std,n_seeds,split,values\n";
  for (const auto& b : blocks) {
    for (const auto& m : b.report.metrics) {
      std::string values;
      for (std::size_t i = 0; i < m.values.size(); ++i) values += (i ? ";" : "") + format_double(m.values[i]);
      out << csv::join_row({b.name, b.task, m.name, format_double(m.mean), format_double(m.std),
                            std::to_string(m.values.size()), b.report.split, values})
          << '\n';
    }
  }
  if (!out) throw IoError("write failed: " + path);
}

// ---------------------------------------------------------------- label files

namespace {

double parse_double(const std::string& field, const std::string& what, const std::string& source, std::size_t line) {
  const std::string t = trim(field);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || ec != std::errc() || ptr != t.data() + t.size() || !std::isfinite(v)) {
    throw FormatError(FormatError::Kind::InvalidData,
                      source + ": row " + std::to_string(line) + ": cannot parse " + what + " '" + t + "'");
  }
  return v;
}

void require_width(const csv::Record& rec, std::size_t width, const std::string& source) {
  if (rec.fields.size() != width) {
    throw FormatError(FormatError::Kind::InvalidData, source + ": row " + std::to_string(rec.line) + ": expected " +
                                                          std::to_string(width) + " fields, got " +
                                                          std::to_string(rec.fields.size()));
  }
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  return out;
}

}  // namespace

std::vector<LucSample> load_luc_samples(const std::string& path) {
  const auto records = csv::read_file(path);
  if (records.empty()) throw FormatError(FormatError::Kind::MalformedHeader, path + ": empty LUC sample file");
  const csv::Header header(records.front());
  const auto cx = header.require("x", path);
  const auto cy = header.require("y", path);
  const auto cl = header.require("label", path);
  std::vector<LucSample> out;
  for (std::size_t i = 1; i < records.size(); ++i) {
    const auto& rec = records[i];
    require_width(rec, header.size(), path);
    const double label = parse_double(rec.fields[cl], "label", path, rec.line);
    if (label < 0 || label != std::floor(label) || label > 1e6) {
      throw FormatError(FormatError::Kind::InvalidData, path + ": row " + std::to_string(rec.line) + ": label must be a non-negative integer");
    }
    out.push_back({parse_double(rec.fields[cx], "x", path, rec.line), parse_double(rec.fields[cy], "y", path, rec.line),
                   static_cast<int>(label)});
  }
  return out;
}

void save_luc_samples(const std::vector<LucSample>& samples, const std::string& path) {
  auto out = open_out(path);
  out << "x,y,label\n";
  for (const auto& s : samples) out << format_double(s.x) << ',' << format_double(s.y) << ',' << s.label << '\n';
  if (!out) throw IoError("write failed: " + path);
}

std::vector<DistributionTarget> load_sdm_targets(const std::string& path) {
  const auto records = csv::read_file(path);
  if (records.empty()) throw FormatError(FormatError::Kind::MalformedHeader, path + ": empty SDM target file");
  const auto& head = records.front().fields;
  if (head.size() < 3 || trim(head[0]) != "region_id") {
    throw FormatError(FormatError::Kind::MalformedHeader, path + ": expected header region_id,q1,...,qB");
  }
  std::vector<DistributionTarget> out;
  for (std::size_t i = 1; i < records.size(); ++i) {
    const auto& rec = records[i];
    require_width(rec, head.size(), path);
    DistributionTarget t;
    t.region_id = trim(rec.fields[0]);
    double sum = 0.0;
    for (std::size_t j = 1; j < head.size(); ++j) {
      const double v = parse_double(rec.fields[j], head[j], path, rec.line);
      if (v < 0.0) throw FormatError(FormatError::Kind::InvalidData, path + ": row " + std::to_string(rec.line) + ": negative bin");
      t.q.push_back(v);
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-6) {
      throw FormatError(FormatError::Kind::InvalidData,
                        path + ": row " + std::to_string(rec.line) + ": bins sum to " + format_double(sum) + ", not 1");
    }
    out.push_back(std::move(t));
  }
  return out;
}

void save_sdm_targets(const std::vector<DistributionTarget>& targets, const std::string& path) {
  auto out = open_out(path);
  const std::size_t bins = targets.empty() ? 0 : targets.front().q.size();
  out << "region_id";
  for (std::size_t j = 1; j <= bins; ++j) out << ",q" << j;
  out << '\n';
  for (const auto& t : targets) {
    if (t.q.size() != bins) throw ValidationError("save_sdm_targets: targets differ in bin count");
    out << csv::escape(t.region_id);
    for (double v : t.q) out << ',' << format_double(v);
    out << '\n';
  }
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace aether
