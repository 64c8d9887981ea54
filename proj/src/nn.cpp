#include "aether/nn.hpp"

#include <algorithm>
#include <cmath>

#include "aether/common.hpp"
#include "aether/error.hpp"

namespace aether::nn {

namespace {

void require_finite(const Matrix& m, const char* stage) {
  if (!m.allFinite()) throw NumericError(std::string("non-finite values after layer ") + stage);
}

void fill_uniform(Matrix& m, double bound, CounterRng& rng) {
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-bound, bound);
}

void add_bias(Matrix& m, const Vector& b) { m.rowwise() += b.transpose(); }

}  // namespace

AeProjectionHead AeProjectionHead::zeros(std::size_t input, std::size_t hidden, std::size_t output) {
  const auto in = static_cast<Eigen::Index>(input);
  const auto h = static_cast<Eigen::Index>(hidden);
  const auto out = static_cast<Eigen::Index>(output);
  AeProjectionHead head;
  head.w_in = Matrix::Zero(h, in);
  head.mlp_w1 = Matrix::Zero(h, h);
  head.mlp_b1 = Vector::Zero(h);
  head.mlp_w2 = Matrix::Zero(h, h);
  head.mlp_b2 = Vector::Zero(h);
  head.gate_w = Matrix::Zero(h, h);
  head.gate_b = Vector::Zero(h);
  head.w_out = Matrix::Zero(out, h);
  return head;
}

void AeProjectionHead::validate() const {
  const auto h = w_in.rows();
  auto square = [h](const Matrix& m) { return m.rows() == h && m.cols() == h; };
  const bool ok = h > 0 && w_in.cols() > 0 && square(mlp_w1) && square(mlp_w2) && square(gate_w) &&
                  mlp_b1.size() == h && mlp_b2.size() == h && gate_b.size() == h && w_out.cols() == h &&
                  w_out.rows() > 0;
  if (!ok) throw ValidationError("AeProjectionHead: inconsistent parameter shapes");
}

AeProjectionHead& AeProjectionHead::operator+=(const AeProjectionHead& o) {
  w_in += o.w_in;
  mlp_w1 += o.mlp_w1;
  mlp_b1 += o.mlp_b1;
  mlp_w2 += o.mlp_w2;
  mlp_b2 += o.mlp_b2;
  gate_w += o.gate_w;
  gate_b += o.gate_b;
  w_out += o.w_out;
  return *this;
}

void AeProjectionHead::set_zero() {
  w_in.setZero();
  mlp_w1.setZero();
  mlp_b1.setZero();
  mlp_w2.setZero();
  mlp_b2.setZero();
  gate_w.setZero();
  gate_b.setZero();
  w_out.setZero();
}

AeProjectionHead init_head(std::size_t input, std::size_t hidden, std::size_t output, CounterRng& rng) {
  AeProjectionHead head = AeProjectionHead::zeros(input, hidden, output);
  const double in = static_cast<double>(input);
  const double h = static_cast<double>(hidden);
  fill_uniform(head.w_in, std::sqrt(3.0 / in), rng);
  fill_uniform(head.mlp_w1, std::sqrt(6.0 / h), rng);  // feeds a ReLU
  fill_uniform(head.mlp_w2, std::sqrt(3.0 / h), rng);
  fill_uniform(head.gate_w, std::sqrt(3.0 / h), rng);
  fill_uniform(head.w_out, std::sqrt(3.0 / h), rng);
  return head;
}

PoiProjector init_projector(std::size_t output, std::size_t text_dim, CounterRng& rng) {
  PoiProjector p;
  p.w = Matrix::Zero(static_cast<Eigen::Index>(output), static_cast<Eigen::Index>(text_dim));
  fill_uniform(p.w, std::sqrt(3.0 / static_cast<double>(text_dim)), rng);
  return p;
}

// ---------------------------------------------------------------- normalization

Matrix normalize_rows(const Matrix& v, Vector* norms) {
  Matrix z(v.rows(), v.cols());
  Vector n(v.rows());
  for (Eigen::Index i = 0; i < v.rows(); ++i) {
    n[i] = v.row(i).norm();
    z.row(i) = v.row(i) / (n[i] + kNormEpsilon);
  }
  if (norms) *norms = std::move(n);
  return z;
}

Matrix normalize_rows_backward(const Matrix& z, const Vector& norms, const Matrix& upstream) {
  // d/dv [v / (n + eps)] applied to u:  u / (n + eps) - z (z.u) / n
  Matrix dv(z.rows(), z.cols());
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const double n = norms[i];
    dv.row(i) = upstream.row(i) / (n + kNormEpsilon);
    if (n > 0.0) dv.row(i) -= z.row(i) * (z.row(i).dot(upstream.row(i)) / n);
  }
  return dv;
}

// ---------------------------------------------------------------- head

Matrix head_forward(const AeProjectionHead& head, const Matrix& inputs, HeadActivations* cache) {
  if (inputs.cols() != head.w_in.cols()) {
    throw ValidationError("head_forward: input has " + std::to_string(inputs.cols()) + " columns, head expects " +
                          std::to_string(head.w_in.cols()));
  }
  HeadActivations local;
  HeadActivations& c = cache ? *cache : local;
  if (!inputs.allFinite()) throw NumericError("head_forward: non-finite input");
  c.input = inputs;

  c.x0.noalias() = inputs * head.w_in.transpose();
  require_finite(c.x0, "w_in");

  c.pre_relu.noalias() = c.x0 * head.mlp_w1.transpose();
  add_bias(c.pre_relu, head.mlp_b1);
  require_finite(c.pre_relu, "mlp_w1");
  c.relu = c.pre_relu.cwiseMax(0.0);

  c.mlp.noalias() = c.relu * head.mlp_w2.transpose();
  add_bias(c.mlp, head.mlp_b2);
  require_finite(c.mlp, "mlp_w2");

  c.gate.noalias() = c.x0 * head.gate_w.transpose();
  add_bias(c.gate, head.gate_b);
  require_finite(c.gate, "gate_w");
  c.gate = c.gate.unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });

  c.x1 = c.x0 + c.gate.cwiseProduct(c.mlp);

  Matrix pre(inputs.rows(), head.w_out.rows());
  pre.noalias() = c.x1 * head.w_out.transpose();
  require_finite(pre, "w_out");
  c.z = normalize_rows(pre, &c.norms);
  return c.z;
}

Matrix head_forward_blocked(const AeProjectionHead& head, const Matrix& inputs) {
  if (inputs.cols() != head.w_in.cols()) {
    throw ValidationError("head_forward: input has " + std::to_string(inputs.cols()) + " columns, head expects " +
                          std::to_string(head.w_in.cols()));
  }
  const Eigen::Index n = inputs.rows();
  const Eigen::Index blocks = (n + kForwardBlock - 1) / kForwardBlock;
  Matrix out(n, head.w_out.rows());
  parallel_for(static_cast<std::size_t>(blocks), [&](std::size_t b) {
    const Eigen::Index r0 = static_cast<Eigen::Index>(b) * kForwardBlock;
    const Eigen::Index rows = std::min(kForwardBlock, n - r0);
    Matrix block = Matrix::Zero(kForwardBlock, inputs.cols());
    block.topRows(rows) = inputs.middleRows(r0, rows);
    out.middleRows(r0, rows) = head_forward(head, block).topRows(rows);
  });
  return out;
}

Vector head_forward(const AeProjectionHead& head, std::span<const double> input) {
  Matrix row = Eigen::Map<const Matrix>(input.data(), 1, static_cast<Eigen::Index>(input.size()));
  const Matrix z = head_forward_blocked(head, row);
  return z.row(0).transpose();
}

void head_backward(const AeProjectionHead& head, const HeadActivations& c, const Matrix& upstream,
                   AeProjectionHead& grads, Matrix* input_grad) {
  if (upstream.rows() != c.z.rows() || upstream.cols() != c.z.cols()) {
    throw ValidationError("head_backward: upstream gradient shape mismatch");
  }
  if (!upstream.allFinite()) throw NumericError("head_backward: non-finite upstream gradient");

  const Matrix d_pre = normalize_rows_backward(c.z, c.norms, upstream);
  grads.w_out.noalias() += d_pre.transpose() * c.x1;
  Matrix d_x1(c.x1.rows(), c.x1.cols());
  d_x1.noalias() = d_pre * head.w_out;

  const Matrix d_mlp = d_x1.cwiseProduct(c.gate);
  const Matrix d_gate_pre =
      d_x1.cwiseProduct(c.mlp).cwiseProduct(c.gate).cwiseProduct((1.0 - c.gate.array()).matrix());

  grads.gate_w.noalias() += d_gate_pre.transpose() * c.x0;
  grads.gate_b += d_gate_pre.colwise().sum().transpose();

  grads.mlp_w2.noalias() += d_mlp.transpose() * c.relu;
  grads.mlp_b2 += d_mlp.colwise().sum().transpose();

  Matrix d_relu(d_mlp.rows(), d_mlp.cols());
  d_relu.noalias() = d_mlp * head.mlp_w2;
  const Matrix d_pre_relu = (c.pre_relu.array() > 0.0).select(d_relu, 0.0);

  grads.mlp_w1.noalias() += d_pre_relu.transpose() * c.x0;
  grads.mlp_b1 += d_pre_relu.colwise().sum().transpose();

  Matrix d_x0 = d_x1;
  d_x0.noalias() += d_gate_pre * head.gate_w;
  d_x0.noalias() += d_pre_relu * head.mlp_w1;
  require_finite(d_x0, "w_in (backward)");

  grads.w_in.noalias() += d_x0.transpose() * c.input;
  if (input_grad) {
    input_grad->resize(c.input.rows(), c.input.cols());
    input_grad->noalias() = d_x0 * head.w_in;
  }
}

// ---------------------------------------------------------------- projector

Matrix poi_project(const PoiProjector& proj, const Matrix& text, ProjectorActivations* cache) {
  if (text.cols() != proj.w.cols()) {
    throw ValidationError("poi_project: text dimension " + std::to_string(text.cols()) + " != projector input " +
                          std::to_string(proj.w.cols()));
  }
  if (!text.allFinite()) throw NumericError("poi_project: non-finite input");
  Matrix pre(text.rows(), proj.w.rows());
  pre.noalias() = text * proj.w.transpose();
  require_finite(pre, "poi_w");
  Vector norms;
  Matrix z = normalize_rows(pre, &norms);
  if (cache) {
    cache->input = text;
    cache->norms = std::move(norms);
    cache->z = z;
  }
  return z;
}

Vector poi_project(const PoiProjector& proj, std::span<const double> text) {
  Matrix row = Eigen::Map<const Matrix>(text.data(), 1, static_cast<Eigen::Index>(text.size()));
  return poi_project(proj, row).row(0).transpose();
}

void poi_project_backward(const ProjectorActivations& c, const Matrix& upstream, Matrix& w_grad) {
  if (upstream.rows() != c.z.rows() || upstream.cols() != c.z.cols()) {
    throw ValidationError("poi_project_backward: upstream gradient shape mismatch");
  }
  const Matrix d_pre = normalize_rows_backward(c.z, c.norms, upstream);
  w_grad.noalias() += d_pre.transpose() * c.input;
}

// ---------------------------------------------------------------- parameters

namespace {

ParamRef matrix_ref(const char* name, Matrix& m, bool decay) {
  return ParamRef{name, m.data(), static_cast<std::size_t>(m.size()),
                  {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())}, decay};
}

ParamRef vector_ref(const char* name, Vector& v) {
  return ParamRef{name, v.data(), static_cast<std::size_t>(v.size()), {static_cast<std::uint32_t>(v.size())}, false};
}

}  // namespace

std::vector<ParamRef> AlignmentModel::parameters() {
  return {
      matrix_ref("w_in", head.w_in, true),     matrix_ref("mlp_w1", head.mlp_w1, true),
      vector_ref("mlp_b1", head.mlp_b1),       matrix_ref("mlp_w2", head.mlp_w2, true),
      vector_ref("mlp_b2", head.mlp_b2),       matrix_ref("gate_w", head.gate_w, true),
      vector_ref("gate_b", head.gate_b),       matrix_ref("w_out", head.w_out, true),
      matrix_ref("poi_w", poi.w, true),
  };
}

AlignmentModel AlignmentModel::zeros_like(const AlignmentModel& other) {
  AlignmentModel m;
  m.head = AeProjectionHead::zeros(other.head.input_dim(), other.head.hidden(), other.head.output_dim());
  m.poi.w = Matrix::Zero(other.poi.w.rows(), other.poi.w.cols());
  return m;
}

void AlignmentModel::set_zero() {
  head.set_zero();
  poi.w.setZero();
}

AlignmentModel& AlignmentModel::operator+=(const AlignmentModel& other) {
  head += other.head;
  poi.w += other.poi.w;
  return *this;
}

bool AlignmentModel::all_finite() const {
  return head.w_in.allFinite() && head.mlp_w1.allFinite() && head.mlp_b1.allFinite() && head.mlp_w2.allFinite() &&
         head.mlp_b2.allFinite() && head.gate_w.allFinite() && head.gate_b.allFinite() && head.w_out.allFinite() &&
         poi.w.allFinite();
}

void adamw_step(AdamWState& state, std::span<ParamRef> params, std::span<const ParamRef> grads) {
  if (params.size() != grads.size()) throw ValidationError("adamw_step: parameter/gradient count mismatch");
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (params[k].size != grads[k].size) {
      throw ValidationError("adamw_step: shape mismatch for tensor " + params[k].name);
    }
    for (std::size_t i = 0; i < grads[k].size; ++i) {
      if (!std::isfinite(grads[k].data[i])) {
        throw NumericError("adamw_step: non-finite gradient in tensor " + params[k].name + " at index " +
                           std::to_string(i));
      }
    }
  }
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.size, 0.0);
      state.second_moment.emplace_back(p.size, 0.0);
    }
  }
  if (state.first_moment.size() != params.size()) throw ValidationError("adamw_step: optimizer state tensor count mismatch");
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (state.first_moment[k].size() != params[k].size || state.second_moment[k].size() != params[k].size) {
      throw ValidationError("adamw_step: optimizer state shape mismatch for tensor " + params[k].name);
    }
  }

  const AdamWConfig& cfg = state.config;
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bias1 = 1.0 - std::pow(cfg.beta1, t);
  const double bias2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    double* p = params[k].data;
    const double* g = grads[k].data;
    double* m = state.first_moment[k].data();
    double* v = state.second_moment[k].data();
    const double decay = (params[k].decay && cfg.weight_decay != 0.0) ? 1.0 - cfg.learning_rate * cfg.weight_decay : 1.0;
    for (std::size_t i = 0; i < params[k].size; ++i) {
      p[i] *= decay;
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double m_hat = m[i] / bias1;
      const double v_hat = v[i] / bias2;
      p[i] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
    }
    for (std::size_t i = 0; i < params[k].size; ++i) {
      if (!std::isfinite(p[i])) throw NumericError("adamw_step: parameter " + params[k].name + " became non-finite");
    }
  }
}

}  // namespace aether::nn
