#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ngc/linalg.hpp"

namespace ngc {

enum class MetricKind { DotProduct, Bilinear, SharedBilinear };
enum class Activation { Identity, Tanh };

std::string_view to_string(MetricKind kind);
std::string_view to_string(Activation act);

/// Intra-group similarity μ(q, p) = ⟨σ(q·G_left), σ(p·G_right)⟩.
/// DotProduct is the parameter-free case σ = id, G = I. SharedBilinear ties
/// both sides to g_left.
struct IntraMetric {
  MetricKind kind = MetricKind::DotProduct;
  Activation activation = Activation::Identity;
  Matrix g_left;   // r x r̃
  Matrix g_right;  // r x r̃, Bilinear only

  static IntraMetric dot_product() { return {}; }
  static IntraMetric bilinear(Matrix g_left, Matrix g_right, Activation act);
  static IntraMetric shared(Matrix g, Activation act);
  /// Seeded Gaussian initialization with standard deviation 1/√r̃.
  static IntraMetric random(MetricKind kind, std::size_t rank, std::size_t r_tilde, Activation act,
                            std::uint64_t seed);

  bool trainable() const { return kind != MetricKind::DotProduct; }
  const Matrix& right() const { return kind == MetricKind::SharedBilinear ? g_left : g_right; }
  std::size_t parameter_count() const;
  std::size_t feature_dim(std::size_t rank) const;
};

/// One factorized weight block: row i of q_out is the state of output
/// neuron i, row j of q_in the state of input neuron j.
struct StateBlock {
  Matrix q_out;  // N_out x r
  Matrix q_in;   // N_in x r
  IntraMetric metric;
  std::string origin;

  std::size_t rank() const { return q_in.cols(); }
  std::size_t n_out() const { return q_out.rows(); }
  std::size_t n_in() const { return q_in.rows(); }
  std::size_t parameter_count() const { return q_out.size() + q_in.size() + metric.parameter_count(); }
};

/// Validates metric shapes against the state rank; throws ShapeError.
void validate(const StateBlock& b);

Matrix left_features(const StateBlock& b);   // φ_L(q_out), N_out x r̃
Matrix right_features(const StateBlock& b);  // φ_R(q_in),  N_in x r̃

/// Best rank-r DotProduct factorization of w (N_out x N_in).
StateBlock factorize_block(const Matrix& w, std::size_t r, std::string origin = {});
/// Effective weight Ŵ[i,j] = μ(q_out[i], q_in[j]).
Matrix reconstruct(const StateBlock& b);
/// y_i = Σ_j μ(q_out[i], q_in[j])·x_j.
Vector apply(const StateBlock& b, std::span<const double> x);
/// Row-batched apply: row t of the result is apply(b, row t of x).
Matrix apply_rows(const StateBlock& b, const Matrix& x);
/// x·Ŵ for row vectors x of length N_out (the input-gradient of apply_rows).
Matrix apply_rows_transposed(const StateBlock& b, const Matrix& dy);

struct StateGradients {
  Matrix q_out;
  Matrix q_in;
  Matrix g_left;   // empty for DotProduct
  Matrix g_right;  // empty unless Bilinear
};

/// Chain rule from ∂L/∂Ŵ (N_out x N_in) to the block's parameters.
StateGradients backprop_weight(const StateBlock& b, const Matrix& d_weight);

struct CalibrationOptions {
  std::size_t epochs = 100;
  double lr = 1e-2;
  bool train_states = false;
  /// When set (rows = captured input activations x_t), the loss matches
  /// outputs Σ_t ‖(Ŵ − target)·x_t‖² instead of weights.
  std::optional<Matrix> inputs;
};

struct CalibrationResult {
  StateBlock block;
  std::vector<double> loss;  // loss before each epoch, then the final loss
};

double calibration_loss(const StateBlock& b, const Matrix& target, const std::optional<Matrix>& inputs = {});
StateGradients calibration_gradient(const StateBlock& b, const Matrix& target,
                                    const std::optional<Matrix>& inputs = {});
/// Plain gradient descent on the metric parameters (and optionally states).
/// Throws NotTrainable for a DotProduct metric.
CalibrationResult calibrate_metric(const StateBlock& b, const Matrix& target, const CalibrationOptions& opts);
inline CalibrationResult calibrate_metric(const StateBlock& b, const Matrix& target, std::size_t epochs, double lr) {
  return calibrate_metric(b, target, CalibrationOptions{epochs, lr, false, std::nullopt});
}

struct Reparameterization {
  Matrix c_left;   // U Σ^{1/2}
  Matrix c_right;  // V Σ^{1/2}
};

/// ⟨u, m·v⟩ = ⟨c_leftᵀu, c_rightᵀv⟩ for square m.
Reparameterization metric_reparameterize(const Matrix& m);

/// R = Lᵀ from the Cholesky factor, so uᵀ·g·v = ⟨Ru, Rv⟩.
Matrix spd_reduce(const Matrix& g);

struct SharingCheck {
  bool lossless = false;
  std::optional<Matrix> isometry;  // Procrustes fit, set when lossless
  Matrix fitted;                   // the Procrustes fit regardless of outcome
  double orthogonality_error = 0.0;
  double feature_residual = 0.0;   // max |φ_L2 − φ_L1·U|
  double output_residual = 0.0;    // max |y_2(x) − (φ_L1·U)·φ_Rᵀ·x| over inputs
};

inline constexpr double kProcrustesTolerance = 1e-6;

/// Tests whether b2's left features are an isometric image of b1's under
/// the shared input side. Both blocks must share q_in and the right-side
/// feature map; ShapeError otherwise. Rows of `inputs` are input vectors.
SharingCheck sharing_lossless_check(const StateBlock& b1, const StateBlock& b2, const Matrix& inputs,
                                    double tolerance = kProcrustesTolerance);

/// Directory layout: meta.json plus q_in/q_out/g_left/g_right NGCT files.
void save_state_block(const StateBlock& b, const std::filesystem::path& dir);
StateBlock load_state_block(const std::filesystem::path& dir);

}  // namespace ngc
