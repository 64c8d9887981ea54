#include "aether/align.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "aether/binio.hpp"
#include "aether/common.hpp"
#include "aether/error.hpp"
#include "aether/rng.hpp"

namespace aether {

using nn::Matrix;
using nn::Vector;

namespace {

// Fixed row-chunk size for parallel work. Results never depend on the number
// of workers because the decomposition does not.
constexpr Eigen::Index kRowChunk = 128;

Eigen::Index chunk_count(Eigen::Index rows) { return (rows + kRowChunk - 1) / kRowChunk; }

template <typename Rhs>
Matrix chunked_product(const Matrix& lhs, const Rhs& rhs) {
  Matrix out(lhs.rows(), rhs.cols());
  parallel_for(static_cast<std::size_t>(chunk_count(lhs.rows())), [&](std::size_t c) {
    const Eigen::Index r0 = static_cast<Eigen::Index>(c) * kRowChunk;
    const Eigen::Index n = std::min(kRowChunk, lhs.rows() - r0);
    out.middleRows(r0, n).noalias() = lhs.middleRows(r0, n) * rhs;
  });
  return out;
}

double pairwise_sum(const double* x, std::size_t n) {
  if (n <= 8) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += x[i];
    return s;
  }
  const std::size_t half = n / 2;
  return pairwise_sum(x, half) + pairwise_sum(x + half, n - half);
}

void check_rows_unit(const Matrix& m, const char* name) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const double n = m.row(i).norm();
    if (!(std::abs(n - 1.0) <= 1e-5)) {
      throw ValidationError(std::string("AlignmentBatch: row ") + std::to_string(i) + " of " + name +
                            " is not unit-norm (|z| = " + format_double(n) + ")");
    }
  }
}

}  // namespace

void AlignmentBatch::validate() const {
  if (z_base.rows() == 0) throw ValidationError("AlignmentBatch: N must be >= 1");
  if (z_aug.rows() != z_base.rows() || z_poi.rows() != z_base.rows()) {
    throw ValidationError("AlignmentBatch: z_base, z_aug and z_poi must have the same number of rows");
  }
  if (z_aug.cols() != z_base.cols() || z_poi.cols() != z_base.cols()) {
    throw ValidationError("AlignmentBatch: z_base, z_aug and z_poi must have the same dimension");
  }
  check_rows_unit(z_base, "z_base");
  check_rows_unit(z_aug, "z_aug");
  check_rows_unit(z_poi, "z_poi");
}

void AlignmentConfig::validate() const {
  auto fail = [](const std::string& m) { throw ValidationError(m); };
  if (!(lambda >= 0.0 && lambda < 1.0)) fail("align.lambda must satisfy λ ∈ [0,1) (got " + format_double(lambda) + ")");
  if (!(tau_ae > 0.0)) fail("align.tau_ae must be > 0");
  if (!(tau_poi > 0.0)) fail("align.tau_poi must be > 0");
  if (batch_size < 2) fail("align.batch_size must be >= 2");
  if (!(r_b > 0.0)) fail("align.r_b must be > 0");
  if (!(r_a > r_b)) fail("align.r_a must be > align.r_b (got r_b=" + format_double(r_b) + ", r_a=" + format_double(r_a) + ")");
  if (hidden < 1) fail("align.hidden must be >= 1");
  if (output_dim < 1) fail("align.output_dim must be >= 1");
  if (!(optimizer.learning_rate > 0.0)) fail("align.lr must be > 0");
  if (!(optimizer.weight_decay >= 0.0)) fail("align.weight_decay must be >= 0");
}

// ---------------------------------------------------------------- losses

PairLoss symmetric_info_nce(const Matrix& left, const Matrix& right, double tau) {
  const Eigen::Index n = left.rows();
  if (n == 0) throw ValidationError("InfoNCE: empty batch");
  if (right.rows() != n || right.cols() != left.cols()) throw ValidationError("InfoNCE: shape mismatch");
  if (!(tau > 0.0)) throw ValidationError("InfoNCE: temperature must be > 0");

  Matrix s = chunked_product(left, right.transpose());
  s /= tau;

  // Row and column softmax with max subtraction; both are needed for the
  // two directions of the symmetric loss.
  const Vector row_max = s.rowwise().maxCoeff();
  const Eigen::RowVectorXd col_max = s.colwise().maxCoeff();
  Matrix p = (s.colwise() - row_max).array().exp().matrix();
  Matrix q = (s.rowwise() - col_max).array().exp().matrix();
  const Vector row_sum = p.rowwise().sum();
  const Eigen::RowVectorXd col_sum = q.colwise().sum();
  const Vector row_lse = row_max.array() + row_sum.array().log();
  const Eigen::RowVectorXd col_lse = col_max.array() + col_sum.array().log();

  const auto un = static_cast<std::size_t>(n);
  std::vector<double> terms(un);
  for (Eigen::Index i = 0; i < n; ++i) terms[static_cast<std::size_t>(i)] = (row_lse[i] - s(i, i)) + (col_lse[i] - s(i, i));

  PairLoss out;
  out.value = pairwise_sum(terms.data(), un) / (2.0 * static_cast<double>(n));
  if (!std::isfinite(out.value)) throw NumericError("InfoNCE: non-finite loss");

  // dL/dS = (P - I + Q - I) / 2N with P the row softmax and Q the column softmax.
  const double scale = 1.0 / (2.0 * static_cast<double>(n));
  p.array().colwise() /= row_sum.array();
  q.array().rowwise() /= col_sum.array();
  Matrix ds = scale * (p + q);
  ds.diagonal().array() -= 2.0 * scale;
  ds /= tau;
  out.grad_left = chunked_product(ds, right);
  const Matrix ds_t = ds.transpose();
  out.grad_right = chunked_product(ds_t, left);
  return out;
}

PairLoss loss_intra(const AlignmentBatch& batch, double tau_ae) {
  return symmetric_info_nce(batch.z_base, batch.z_aug, tau_ae);
}

PairLoss loss_cross(const AlignmentBatch& batch, double tau_poi) {
  return symmetric_info_nce(batch.z_base, batch.z_poi, tau_poi);
}

TotalLoss loss_total(const AlignmentBatch& batch, const AlignmentConfig& cfg) {
  if (!(cfg.lambda >= 0.0 && cfg.lambda < 1.0)) throw ValidationError("loss_total: λ must lie in [0,1)");
  const double lam = cfg.lambda;
  TotalLoss out;
  PairLoss cross = loss_cross(batch, cfg.tau_poi);
  out.cross = cross.value;
  out.grad_base = (1.0 - lam) * cross.grad_left;
  out.grad_poi = (1.0 - lam) * cross.grad_right;
  if (lam > 0.0) {
    PairLoss intra = loss_intra(batch, cfg.tau_ae);
    out.intra = intra.value;
    out.grad_base += lam * intra.grad_left;
    out.grad_aug = lam * intra.grad_right;
    out.total = lam * intra.value + (1.0 - lam) * cross.value;
  } else {
    // The intra term is still reported for the log even though it carries no weight.
    out.intra = loss_intra(batch, cfg.tau_ae).value;
    out.grad_aug = Matrix::Zero(batch.z_aug.rows(), batch.z_aug.cols());
    out.total = cross.value;
  }
  return out;
}

// ---------------------------------------------------------------- pretraining

PooledPairs pool_poi_views(const EmbeddingField& field, std::span<const PoiRecord> pois, double r_b, double r_a) {
  std::vector<BufferQuery> base_q;
  std::vector<BufferQuery> aug_q;
  base_q.reserve(pois.size());
  aug_q.reserve(pois.size());
  for (const auto& p : pois) {
    base_q.push_back({p.x, p.y, r_b});
    aug_q.push_back({p.x, p.y, r_a});
  }
  const auto base = pool_buffer_batch(field, base_q);
  const auto aug = pool_buffer_batch(field, aug_q);

  PooledPairs out;
  for (std::size_t i = 0; i < pois.size(); ++i) {
    if (base[i] && aug[i]) out.kept.push_back(i);
  }
  out.dropped = pois.size() - out.kept.size();
  const auto channels = static_cast<Eigen::Index>(field.channels());
  const auto rows = static_cast<Eigen::Index>(out.kept.size());
  out.base.resize(rows, channels);
  out.aug.resize(rows, channels);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const std::size_t i = out.kept[static_cast<std::size_t>(r)];
    out.base.row(r) = Eigen::Map<const Eigen::RowVectorXd>(base[i]->values.data(), channels);
    out.aug.row(r) = Eigen::Map<const Eigen::RowVectorXd>(aug[i]->values.data(), channels);
  }
  return out;
}

namespace {

using FloatMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

std::vector<std::vector<std::size_t>> make_batches(std::vector<std::size_t> order, std::size_t batch_size) {
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start), order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  // A trailing batch of one has a degenerate zero loss; fold it into its predecessor.
  if (batches.size() > 1 && batches.back().size() == 1) {
    batches[batches.size() - 2].push_back(batches.back().front());
    batches.pop_back();
  }
  return batches;
}

Matrix gather_rows(const Matrix& src, const std::vector<std::size_t>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), src.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = src.row(static_cast<Eigen::Index>(rows[r]));
  return out;
}

Matrix gather_rows(const FloatMatrix& src, const std::vector<std::size_t>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), src.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    out.row(static_cast<Eigen::Index>(r)) = src.row(static_cast<Eigen::Index>(rows[r])).cast<double>();
  }
  return out;
}

struct ChunkCaches {
  nn::HeadActivations base;
  nn::HeadActivations aug;
  nn::ProjectorActivations text;
};

struct StepOutcome {
  double intra = 0.0;
  double cross = 0.0;
  double total = 0.0;
};

StepOutcome train_step(nn::AlignmentModel& model, nn::AdamWState& opt, const Matrix& a_base, const Matrix& a_aug,
                       const Matrix& text, const AlignmentConfig& cfg) {
  const Eigen::Index n = a_base.rows();
  const Eigen::Index d = static_cast<Eigen::Index>(model.head.output_dim());
  const auto chunks = static_cast<std::size_t>(chunk_count(n));
  std::vector<ChunkCaches> caches(chunks);

  AlignmentBatch batch;
  batch.z_base.resize(n, d);
  batch.z_aug.resize(n, d);
  batch.z_poi.resize(n, d);
  parallel_for(chunks, [&](std::size_t c) {
    const Eigen::Index r0 = static_cast<Eigen::Index>(c) * kRowChunk;
    const Eigen::Index rows = std::min(kRowChunk, n - r0);
    batch.z_base.middleRows(r0, rows) = nn::head_forward(model.head, a_base.middleRows(r0, rows), &caches[c].base);
    batch.z_aug.middleRows(r0, rows) = nn::head_forward(model.head, a_aug.middleRows(r0, rows), &caches[c].aug);
    batch.z_poi.middleRows(r0, rows) = nn::poi_project(model.poi, text.middleRows(r0, rows), &caches[c].text);
  });

  const TotalLoss loss = loss_total(batch, cfg);
  if (!std::isfinite(loss.total)) throw NumericError("non-finite loss");

  std::vector<nn::AlignmentModel> partial(chunks, nn::AlignmentModel::zeros_like(model));
  const bool use_aug = cfg.lambda > 0.0;
  parallel_for(chunks, [&](std::size_t c) {
    const Eigen::Index r0 = static_cast<Eigen::Index>(c) * kRowChunk;
    const Eigen::Index rows = std::min(kRowChunk, n - r0);
    nn::head_backward(model.head, caches[c].base, loss.grad_base.middleRows(r0, rows), partial[c].head);
    if (use_aug) nn::head_backward(model.head, caches[c].aug, loss.grad_aug.middleRows(r0, rows), partial[c].head);
    nn::poi_project_backward(caches[c].text, loss.grad_poi.middleRows(r0, rows), partial[c].poi.w);
  });
  nn::AlignmentModel grads = std::move(partial[0]);
  for (std::size_t c = 1; c < chunks; ++c) grads += partial[c];

  auto params = model.parameters();
  const auto grad_refs = grads.parameters();
  nn::adamw_step(opt, params, grad_refs);
  return {loss.intra, loss.cross, loss.total};
}

}  // namespace

PretrainResult pretrain(const EmbeddingField& field, std::span<const PoiRecord> pois, std::span<const TextEmbedding> text,
                        const AlignmentConfig& cfg, const TrainState* resume) {
  cfg.validate();
  if (text.size() != pois.size()) {
    throw ValidationError("pretrain: " + std::to_string(pois.size()) + " POIs but " + std::to_string(text.size()) +
                          " text embeddings");
  }
  if (pois.empty()) throw ValidationError("pretrain: no POIs");
  const std::size_t text_dim = text.front().vector.size();
  for (std::size_t i = 0; i < pois.size(); ++i) {
    if (text[i].poi_id != pois[i].id) {
      throw ValidationError("pretrain: text embedding " + std::to_string(i) + " belongs to poi " +
                            std::to_string(text[i].poi_id) + ", expected " + std::to_string(pois[i].id));
    }
    if (text[i].vector.size() != text_dim) throw ValidationError("pretrain: text embeddings differ in dimension");
  }

  PooledPairs pooled = pool_poi_views(field, pois, cfg.r_b, cfg.r_a);
  if (pooled.dropped > 0) log_info("pretrain: dropped ", pooled.dropped, " POIs with an empty buffer");
  const std::size_t n = pooled.kept.size();
  if (n == 0) throw ValidationError("pretrain: every POI was dropped (empty buffers)");
  if (n < 2) throw ValidationError("pretrain: need at least 2 POIs with valid buffers");

  FloatMatrix text_rows(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(text_dim));
  for (std::size_t r = 0; r < n; ++r) {
    text_rows.row(static_cast<Eigen::Index>(r)) =
        Eigen::Map<const Eigen::RowVectorXf>(text[pooled.kept[r]].vector.data(), static_cast<Eigen::Index>(text_dim));
  }

  TrainState state;
  if (resume) {
    state = *resume;
    if (state.seed != cfg.seed || state.used_pois != n) {
      throw ValidationError("pretrain: resume state does not match this run (seed or POI count differ)");
    }
    if (state.current.head.input_dim() != field.channels() || state.current.poi.text_dim() != text_dim ||
        state.current.head.hidden() != cfg.hidden || state.current.head.output_dim() != cfg.output_dim) {
      throw ValidationError("pretrain: resume state shapes do not match the configuration");
    }
    state.optimizer.config = cfg.optimizer;
  } else {
    CounterRng head_rng(cfg.seed, "init_head");
    CounterRng poi_rng(cfg.seed, "init_poi");
    state.current.head = nn::init_head(field.channels(), cfg.hidden, cfg.output_dim, head_rng);
    state.current.poi = nn::init_projector(cfg.output_dim, text_dim, poi_rng);
    state.best = state.current;
    state.optimizer.config = cfg.optimizer;
    state.seed = cfg.seed;
    state.used_pois = n;
  }

  for (std::size_t epoch = state.next_epoch; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    CounterRng shuffle_rng(cfg.seed, "shuffle", epoch);
    shuffle_in_place(std::span<std::size_t>(order), shuffle_rng);
    const auto batches = make_batches(std::move(order), cfg.batch_size);

    double sum_ae = 0.0, sum_ap = 0.0, sum_total = 0.0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const auto& rows = batches[b];
      StepOutcome step;
      try {
        step = train_step(state.current, state.optimizer, gather_rows(pooled.base, rows), gather_rows(pooled.aug, rows),
                          gather_rows(text_rows, rows), cfg);
      } catch (const NumericError& e) {
        throw NumericError("pretrain: epoch " + std::to_string(epoch) + ", batch " + std::to_string(b) + ": " + e.what());
      }
      const double w = static_cast<double>(rows.size());
      sum_ae += w * step.intra;
      sum_ap += w * step.cross;
      sum_total += w * step.total;
    }
    EpochLog entry;
    entry.epoch = epoch;
    entry.l_ae = sum_ae / static_cast<double>(n);
    entry.l_ap = sum_ap / static_cast<double>(n);
    entry.l_total = sum_total / static_cast<double>(n);
    if (entry.l_ap < state.best_l_ap) {
      state.best_l_ap = entry.l_ap;
      state.best_epoch = epoch;
      state.best = state.current;
      entry.is_best = true;
    }
    state.log.push_back(entry);
    state.next_epoch = epoch + 1;
    log_debug("epoch ", epoch, " l_ae=", entry.l_ae, " l_ap=", entry.l_ap, " l_total=", entry.l_total);
  }

  PretrainResult result;
  result.model = state.best;
  result.log = state.log;
  result.best_epoch = state.best_epoch;
  result.best_l_ap = state.best_l_ap;
  result.used_pois = n;
  result.dropped_pois = pooled.dropped;
  result.state = std::move(state);
  return result;
}

void write_training_log(const std::vector<EpochLog>& log, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << "epoch,l_ae,l_ap,l_total,is_best\n";
  for (const auto& e : log) {
    out << e.epoch << ',' << format_double(e.l_ae) << ',' << format_double(e.l_ap) << ',' << format_double(e.l_total)
        << ',' << (e.is_best ? 1 : 0) << '\n';
  }
  if (!out) throw IoError("write failed: " + path);
}

// ---------------------------------------------------------------- training state

namespace {

constexpr char kStateMagic[4] = {'A', 'E', 'T', 'S'};

void put_model(binio::Writer& w, nn::AlignmentModel model) {
  for (const auto& p : model.parameters()) {
    w.put<std::uint16_t>(static_cast<std::uint16_t>(p.name.size()));
    w.put_bytes(p.name);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(p.dims.size()));
    for (auto d : p.dims) w.put<std::uint32_t>(d);
    w.put_bytes(p.data, p.size * sizeof(double));
  }
}

nn::AlignmentModel get_model(binio::Reader& r) {
  using Kind = FormatError::Kind;
  std::vector<std::pair<std::string, std::vector<std::uint32_t>>> headers;
  std::vector<std::vector<double>> payloads;
  for (int k = 0; k < 9; ++k) {
    const auto len = r.get<std::uint16_t>(Kind::TruncatedPayload);
    std::string name = r.get_string(len, Kind::TruncatedPayload);
    const auto rank = r.get<std::uint8_t>(Kind::TruncatedPayload);
    std::vector<std::uint32_t> dims;
    std::size_t n = 1;
    for (int d = 0; d < rank; ++d) {
      dims.push_back(r.get<std::uint32_t>(Kind::TruncatedPayload));
      n *= dims.back();
    }
    std::vector<double> values(n);
    std::memcpy(values.data(), r.take(n * sizeof(double), Kind::TruncatedPayload), n * sizeof(double));
    headers.emplace_back(std::move(name), std::move(dims));
    payloads.push_back(std::move(values));
  }
  const auto& w_in = headers[0].second;
  const auto& w_out = headers[7].second;
  const auto& poi_w = headers[8].second;
  if (w_in.size() != 2 || w_out.size() != 2 || poi_w.size() != 2) {
    throw FormatError(Kind::InvalidData, r.source() + ": bad tensor ranks in training state");
  }
  nn::AlignmentModel m;
  m.head = nn::AeProjectionHead::zeros(w_in[1], w_in[0], w_out[0]);
  m.poi.w = nn::Matrix::Zero(poi_w[0], poi_w[1]);
  auto params = m.parameters();
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (headers[k].first != params[k].name || headers[k].second != params[k].dims) {
      throw FormatError(Kind::InvalidData, r.source() + ": unexpected tensor '" + headers[k].first + "' in training state");
    }
    std::memcpy(params[k].data, payloads[k].data(), params[k].size * sizeof(double));
  }
  return m;
}

void put_moments(binio::Writer& w, const std::vector<std::vector<double>>& moments) {
  w.put<std::uint32_t>(static_cast<std::uint32_t>(moments.size()));
  for (const auto& m : moments) {
    w.put<std::uint64_t>(m.size());
    w.put_bytes(m.data(), m.size() * sizeof(double));
  }
}

std::vector<std::vector<double>> get_moments(binio::Reader& r) {
  using Kind = FormatError::Kind;
  const auto count = r.get<std::uint32_t>(Kind::TruncatedPayload);
  std::vector<std::vector<double>> out(count);
  for (auto& m : out) {
    const auto n = r.get<std::uint64_t>(Kind::TruncatedPayload);
    m.resize(n);
    std::memcpy(m.data(), r.take(n * sizeof(double), Kind::TruncatedPayload), n * sizeof(double));
  }
  return out;
}

}  // namespace

void save_train_state(const TrainState& s, const std::string& path) {
  binio::Writer w;
  w.put_bytes(kStateMagic, 4);
  w.put<std::uint32_t>(1);
  w.put<std::uint64_t>(s.next_epoch);
  w.put<std::int64_t>(s.best_epoch ? static_cast<std::int64_t>(*s.best_epoch) : -1);
  w.put<double>(s.best_l_ap);
  w.put<std::uint64_t>(s.seed);
  w.put<std::uint64_t>(s.used_pois);
  w.put<std::uint64_t>(s.optimizer.step);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(s.log.size()));
  for (const auto& e : s.log) {
    w.put<std::uint64_t>(e.epoch);
    w.put<double>(e.l_ae);
    w.put<double>(e.l_ap);
    w.put<double>(e.l_total);
    w.put<std::uint8_t>(e.is_best ? 1 : 0);
  }
  put_model(w, s.current);
  put_model(w, s.best);
  put_moments(w, s.optimizer.first_moment);
  put_moments(w, s.optimizer.second_moment);
  w.save(path);
}

TrainState load_train_state(const std::string& path) {
  using Kind = FormatError::Kind;
  auto r = binio::Reader::from_file(path);
  if (!r.has(4) || r.get_string(4) != std::string_view(kStateMagic, 4)) {
    throw FormatError(Kind::BadMagic, path + ": not a training-state file (bad magic)");
  }
  const auto version = r.get<std::uint32_t>();
  if (version != 1) throw FormatError(Kind::UnsupportedVersion, path + ": unsupported training-state version");
  TrainState s;
  s.next_epoch = r.get<std::uint64_t>();
  const auto best = r.get<std::int64_t>();
  if (best >= 0) s.best_epoch = static_cast<std::size_t>(best);
  s.best_l_ap = r.get<double>();
  s.seed = r.get<std::uint64_t>();
  s.used_pois = r.get<std::uint64_t>();
  s.optimizer.step = r.get<std::uint64_t>();
  const auto rows = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < rows; ++i) {
    EpochLog e;
    e.epoch = r.get<std::uint64_t>(Kind::TruncatedPayload);
    e.l_ae = r.get<double>(Kind::TruncatedPayload);
    e.l_ap = r.get<double>(Kind::TruncatedPayload);
    e.l_total = r.get<double>(Kind::TruncatedPayload);
    e.is_best = r.get<std::uint8_t>(Kind::TruncatedPayload) != 0;
    s.log.push_back(e);
  }
  s.current = get_model(r);
  s.best = get_model(r);
  s.optimizer.first_moment = get_moments(r);
  s.optimizer.second_moment = get_moments(r);
  if (r.remaining() != 0) throw FormatError(Kind::MalformedHeader, path + ": trailing bytes in training state");
  return s;
}

}  // namespace aether
