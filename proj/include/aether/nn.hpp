#pragma once

// Numerical core for the alignment model: the gated-residual projection head
// for pooled embedding-field vectors, the linear text projector, row-wise L2
// normalization and AdamW. Everything is float64 with hand-derived gradients.
//
// Head wiring, for an input row a:
//   x0 = W_in a
//   m  = W2 relu(W1 x0 + b1) + b2
//   g  = sigmoid(Wg x0 + bg)
//   x1 = x0 + g * m
//   z  = normalize(W_out x1),   normalize(v) = v / (|v| + 1e-12)

#include <Eigen/Core>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "aether/rng.hpp"

namespace aether::nn {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

inline constexpr double kNormEpsilon = 1e-12;

struct AeProjectionHead {
  Matrix w_in;    // hidden x input
  Matrix mlp_w1;  // hidden x hidden
  Vector mlp_b1;
  Matrix mlp_w2;  // hidden x hidden
  Vector mlp_b2;
  Matrix gate_w;  // hidden x hidden
  Vector gate_b;
  Matrix w_out;   // output x hidden

  std::size_t input_dim() const { return static_cast<std::size_t>(w_in.cols()); }
  std::size_t hidden() const { return static_cast<std::size_t>(w_in.rows()); }
  std::size_t output_dim() const { return static_cast<std::size_t>(w_out.rows()); }

  static AeProjectionHead zeros(std::size_t input, std::size_t hidden, std::size_t output);
  /// Throws ValidationError if the shapes are inconsistent.
  void validate() const;
  AeProjectionHead& operator+=(const AeProjectionHead& other);
  void set_zero();
};

struct PoiProjector {
  Matrix w;  // output x text_dim, no bias

  std::size_t text_dim() const { return static_cast<std::size_t>(w.cols()); }
  std::size_t output_dim() const { return static_cast<std::size_t>(w.rows()); }
};

/// Kaiming-style uniform fan-in initialization, biases zero.
AeProjectionHead init_head(std::size_t input, std::size_t hidden, std::size_t output, CounterRng& rng);
PoiProjector init_projector(std::size_t output, std::size_t text_dim, CounterRng& rng);

// ---------------------------------------------------------------- normalization

/// Row-wise v / (|v| + eps). Stores the row norms if `norms` is given.
Matrix normalize_rows(const Matrix& v, Vector* norms = nullptr);

/// Exact vector-Jacobian product of normalize_rows: given z, |v| and dL/dz, returns dL/dv.
Matrix normalize_rows_backward(const Matrix& z, const Vector& norms, const Matrix& upstream);

// ---------------------------------------------------------------- head

/// Intermediates kept by head_forward for head_backward.
struct HeadActivations {
  Matrix input;
  Matrix x0;
  Matrix pre_relu;
  Matrix relu;
  Matrix mlp;
  Matrix gate;
  Matrix x1;
  Vector norms;
  Matrix z;
};

/// Batched forward; one input per row. Throws NumericError naming the layer
/// on a non-finite intermediate.
Matrix head_forward(const AeProjectionHead& head, const Matrix& inputs, HeadActivations* cache = nullptr);
/// Evaluates fixed-size zero-padded blocks of kForwardBlock rows, so each
/// row's result is bit-identical however the inputs are grouped. The
/// single-vector overload uses this path.
inline constexpr Eigen::Index kForwardBlock = 64;
Matrix head_forward_blocked(const AeProjectionHead& head, const Matrix& inputs);
Vector head_forward(const AeProjectionHead& head, std::span<const double> input);

/// Accumulates dL/dθ into `grads` (shape of `head`) and, when requested, writes dL/d(input).
void head_backward(const AeProjectionHead& head, const HeadActivations& cache, const Matrix& upstream,
                   AeProjectionHead& grads, Matrix* input_grad = nullptr);

// ---------------------------------------------------------------- text projector

struct ProjectorActivations {
  Matrix input;
  Vector norms;
  Matrix z;
};

Matrix poi_project(const PoiProjector& proj, const Matrix& text, ProjectorActivations* cache = nullptr);
Vector poi_project(const PoiProjector& proj, std::span<const double> text);
void poi_project_backward(const ProjectorActivations& cache, const Matrix& upstream, Matrix& w_grad);

// ---------------------------------------------------------------- parameters and AdamW

/// Flat view onto one parameter tensor.
struct ParamRef {
  std::string name;
  double* data = nullptr;
  std::size_t size = 0;
  std::vector<std::uint32_t> dims;
  bool decay = true;  // weights decay, biases do not
};

struct AlignmentModel {
  AeProjectionHead head;
  PoiProjector poi;

  /// Canonical order: w_in, mlp_w1, mlp_b1, mlp_w2, mlp_b2, gate_w, gate_b, w_out, poi_w.
  std::vector<ParamRef> parameters();
  static AlignmentModel zeros_like(const AlignmentModel& other);
  void set_zero();
  AlignmentModel& operator+=(const AlignmentModel& other);
  bool all_finite() const;
};

struct AdamWConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.01;
};

struct AdamWState {
  AdamWConfig config;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
};

/// One decoupled-weight-decay Adam step. `params` and `grads` are parallel
/// lists; decayable tensors are first scaled by (1 - lr * weight_decay).
/// Moment buffers are created on the first step and shape-checked afterwards.
void adamw_step(AdamWState& state, std::span<ParamRef> params, std::span<const ParamRef> grads);

}  // namespace aether::nn
