#include "ngc/groups.hpp"

#include <cmath>
#include <fstream>

#include "json.hpp"
#include "ngc/error.hpp"
#include "ngc/rng.hpp"
#include "ngc/tensor_io.hpp"

namespace ngc {

namespace {

void activate(Matrix& m, Activation act) {
  if (act == Activation::Tanh)
    for (double& v : m.values()) v = std::tanh(v);
}

// Multiplies an upstream gradient by σ'(pre) given the activated values.
void activation_backward(Matrix& grad, const Matrix& activated, Activation act) {
  if (act != Activation::Tanh) return;
  auto g = grad.values();
  auto a = activated.values();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] *= 1.0 - a[i] * a[i];
}

Matrix features(const Matrix& states, const Matrix& g, Activation act) {
  Matrix f = matmul(states, g);
  activate(f, act);
  return f;
}

}  // namespace

std::string_view to_string(MetricKind kind) {
  switch (kind) {
    case MetricKind::DotProduct: return "dot";
    case MetricKind::Bilinear: return "bilinear";
    case MetricKind::SharedBilinear: return "shared";
  }
  return "?";
}

std::string_view to_string(Activation act) { return act == Activation::Tanh ? "tanh" : "identity"; }

IntraMetric IntraMetric::bilinear(Matrix g_left, Matrix g_right, Activation act) {
  require(g_left.rows() == g_right.rows() && g_left.cols() == g_right.cols(), ErrorCode::ShapeError,
          "bilinear metric: G_left and G_right must have equal shapes");
  return IntraMetric{MetricKind::Bilinear, act, std::move(g_left), std::move(g_right)};
}

IntraMetric IntraMetric::shared(Matrix g, Activation act) {
  return IntraMetric{MetricKind::SharedBilinear, act, std::move(g), Matrix{}};
}

IntraMetric IntraMetric::random(MetricKind kind, std::size_t rank, std::size_t r_tilde, Activation act,
                                std::uint64_t seed) {
  if (kind == MetricKind::DotProduct) return dot_product();
  require(rank >= 1 && r_tilde >= 1, ErrorCode::InvalidInput, "metric dimensions must be >= 1");
  Rng rng = make_rng(seed, 0x6d657472);
  const double stddev = 1.0 / std::sqrt(static_cast<double>(r_tilde));
  Matrix gl = gaussian_matrix(rank, r_tilde, rng, stddev);
  if (kind == MetricKind::SharedBilinear) return shared(std::move(gl), act);
  Matrix gr = gaussian_matrix(rank, r_tilde, rng, stddev);
  return bilinear(std::move(gl), std::move(gr), act);
}

std::size_t IntraMetric::parameter_count() const {
  switch (kind) {
    case MetricKind::DotProduct: return 0;
    case MetricKind::Bilinear: return g_left.size() + g_right.size();
    case MetricKind::SharedBilinear: return g_left.size();
  }
  return 0;
}

std::size_t IntraMetric::feature_dim(std::size_t rank) const {
  return kind == MetricKind::DotProduct ? rank : g_left.cols();
}

void validate(const StateBlock& b) {
  require(!b.q_out.empty() && !b.q_in.empty(), ErrorCode::ShapeError, "state block has empty states");
  require(b.q_out.cols() == b.q_in.cols(), ErrorCode::ShapeError, "q_out and q_in ranks differ");
  if (b.metric.trainable()) {
    const Matrix& gr = b.metric.right();
    require(b.metric.g_left.rows() == b.rank() && gr.rows() == b.rank(), ErrorCode::ShapeError,
            "metric rows must equal the state rank");
    require(b.metric.g_left.cols() == gr.cols(), ErrorCode::ShapeError, "metric widths differ");
  }
}

Matrix left_features(const StateBlock& b) {
  if (!b.metric.trainable()) return b.q_out;
  return features(b.q_out, b.metric.g_left, b.metric.activation);
}

Matrix right_features(const StateBlock& b) {
  if (!b.metric.trainable()) return b.q_in;
  return features(b.q_in, b.metric.right(), b.metric.activation);
}

StateBlock factorize_block(const Matrix& w, std::size_t r, std::string origin) {
  require(r >= 1 && r <= std::min(w.rows(), w.cols()), ErrorCode::RankError,
          "factorize_block: rank " + std::to_string(r) + " exceeds block dimensions");
  auto [a, b] = truncate_factor(svd(w), r);
  return StateBlock{std::move(a), std::move(b), IntraMetric::dot_product(), std::move(origin)};
}

Matrix reconstruct(const StateBlock& b) {
  validate(b);
  return matmul_nt(left_features(b), right_features(b));
}

Vector apply(const StateBlock& b, std::span<const double> x) {
  require(x.size() == b.n_in(), ErrorCode::ShapeError,
          "apply: input length " + std::to_string(x.size()) + " != N_in " + std::to_string(b.n_in()));
  const Matrix y = apply_rows(b, Matrix::row_vector(x));
  return Vector(y.row(0).begin(), y.row(0).end());
}

Matrix apply_rows(const StateBlock& b, const Matrix& x) {
  validate(b);
  require(x.cols() == b.n_in(), ErrorCode::ShapeError, "apply_rows: input width != N_in");
  // y = x·φ_R·φ_Lᵀ, evaluated in factored form.
  return matmul_nt(matmul(x, right_features(b)), left_features(b));
}

Matrix apply_rows_transposed(const StateBlock& b, const Matrix& dy) {
  validate(b);
  require(dy.cols() == b.n_out(), ErrorCode::ShapeError, "apply_rows_transposed: width != N_out");
  return matmul_nt(matmul(dy, left_features(b)), right_features(b));
}

StateGradients backprop_weight(const StateBlock& b, const Matrix& d_weight) {
  validate(b);
  require(d_weight.rows() == b.n_out() && d_weight.cols() == b.n_in(), ErrorCode::ShapeError,
          "backprop_weight: gradient shape mismatch");
  StateGradients g;
  if (!b.metric.trainable()) {
    g.q_out = matmul(d_weight, b.q_in);
    g.q_in = matmul_tn(d_weight, b.q_out);
    return g;
  }
  const Matrix fl = left_features(b);
  const Matrix fr = right_features(b);
  Matrix d_left = matmul(d_weight, fr);      // ∂L/∂φ_L
  Matrix d_right = matmul_tn(d_weight, fl);  // ∂L/∂φ_R
  activation_backward(d_left, fl, b.metric.activation);
  activation_backward(d_right, fr, b.metric.activation);
  g.q_out = matmul_nt(d_left, b.metric.g_left);
  g.q_in = matmul_nt(d_right, b.metric.right());
  g.g_left = matmul_tn(b.q_out, d_left);
  Matrix g_right = matmul_tn(b.q_in, d_right);
  if (b.metric.kind == MetricKind::SharedBilinear)
    g.g_left += g_right;
  else
    g.g_right = std::move(g_right);
  return g;
}

namespace {

Matrix calibration_residual(const StateBlock& b, const Matrix& target) {
  Matrix w = reconstruct(b);
  require(w.rows() == target.rows() && w.cols() == target.cols(), ErrorCode::ShapeError,
          "calibration target must be N_out x N_in");
  return w - target;
}

}  // namespace

double calibration_loss(const StateBlock& b, const Matrix& target, const std::optional<Matrix>& inputs) {
  const Matrix e = calibration_residual(b, target);
  if (!inputs) return dot(e.values(), e.values());
  const Matrix out = matmul_nt(*inputs, e);
  return dot(out.values(), out.values());
}

StateGradients calibration_gradient(const StateBlock& b, const Matrix& target,
                                    const std::optional<Matrix>& inputs) {
  Matrix e = calibration_residual(b, target);
  Matrix d = inputs ? matmul(e, matmul_tn(*inputs, *inputs)) : e;
  d *= 2.0;
  return backprop_weight(b, d);
}

CalibrationResult calibrate_metric(const StateBlock& b, const Matrix& target, const CalibrationOptions& opts) {
  require(b.metric.trainable(), ErrorCode::NotTrainable, "dot-product metric has no parameters");
  require(opts.lr >= 0.0 && std::isfinite(opts.lr), ErrorCode::InvalidInput, "learning rate must be >= 0");
  if (opts.inputs)
    require(opts.inputs->cols() == b.n_in(), ErrorCode::ShapeError, "calibration inputs must have N_in columns");
  CalibrationResult result{b, {}};
  StateBlock& cur = result.block;
  for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
    result.loss.push_back(calibration_loss(cur, target, opts.inputs));
    const StateGradients g = calibration_gradient(cur, target, opts.inputs);
    cur.metric.g_left -= g.g_left * opts.lr;
    if (cur.metric.kind == MetricKind::Bilinear) cur.metric.g_right -= g.g_right * opts.lr;
    if (opts.train_states) {
      cur.q_out -= g.q_out * opts.lr;
      cur.q_in -= g.q_in * opts.lr;
    }
  }
  result.loss.push_back(calibration_loss(cur, target, opts.inputs));
  return result;
}

Reparameterization metric_reparameterize(const Matrix& m) {
  require(m.rows() == m.cols(), ErrorCode::ShapeError, "metric_reparameterize: matrix must be square");
  const SvdResult sv = svd(m);
  const std::size_t n = m.rows();
  Reparameterization out{sv.u, sv.vt.transpose()};
  for (std::size_t k = 0; k < n; ++k) {
    const double root = std::sqrt(sv.s[k]);
    for (std::size_t i = 0; i < n; ++i) {
      out.c_left(i, k) *= root;
      out.c_right(i, k) *= root;
    }
  }
  return out;
}

Matrix spd_reduce(const Matrix& g) {
  require(g.rows() == g.cols(), ErrorCode::ShapeError, "spd_reduce: matrix must be square");
  require(is_symmetric(g, 1e-10), ErrorCode::NotPositiveDefinite, "spd_reduce: matrix is not symmetric");
  return cholesky(g).transpose();
}

SharingCheck sharing_lossless_check(const StateBlock& b1, const StateBlock& b2, const Matrix& inputs,
                                    double tolerance) {
  validate(b1);
  validate(b2);
  require(b1.q_in.rows() == b2.q_in.rows() && b1.q_in.cols() == b2.q_in.cols(), ErrorCode::ShapeError,
          "sharing check: input-side states differ in shape");
  require(max_abs_diff(b1.q_in, b2.q_in) == 0.0, ErrorCode::ShapeError,
          "sharing check: blocks do not share input-side states");
  require(b1.metric.activation == b2.metric.activation && b1.metric.trainable() == b2.metric.trainable(),
          ErrorCode::ShapeError, "sharing check: right-side feature maps differ");
  if (b1.metric.trainable()) {
    const Matrix& r1 = b1.metric.right();
    const Matrix& r2 = b2.metric.right();
    require(r1.rows() == r2.rows() && r1.cols() == r2.cols() && max_abs_diff(r1, r2) == 0.0,
            ErrorCode::ShapeError, "sharing check: right-side metric parameters differ");
  }
  require(b1.n_out() == b2.n_out(), ErrorCode::ShapeError, "sharing check: output groups differ in size");
  require(inputs.cols() == b1.n_in(), ErrorCode::ShapeError, "sharing check: inputs must have N_in columns");

  const Matrix f1 = left_features(b1);
  const Matrix f2 = left_features(b2);
  const Matrix fr = right_features(b1);

  // Orthogonal Procrustes: argmin_U ‖f1·U − f2‖ over orthogonal U.
  const SvdResult sv = svd(matmul_tn(f1, f2));
  SharingCheck out;
  out.fitted = matmul(sv.u, sv.vt);
  const std::size_t k = out.fitted.rows();
  out.orthogonality_error = max_abs_diff(matmul_tn(out.fitted, out.fitted), Matrix::identity(k));

  const Matrix f1u = matmul(f1, out.fitted);
  out.feature_residual = max_abs_diff(f1u, f2);
  const Matrix y2 = apply_rows(b2, inputs);
  const Matrix y_shared = matmul_nt(matmul(inputs, fr), f1u);
  out.output_residual = max_abs_diff(y2, y_shared);

  const double scale = std::max(1.0, frobenius_norm(f2));
  out.lossless = out.orthogonality_error <= tolerance && out.feature_residual <= tolerance * scale &&
                 out.output_residual <= tolerance * std::max(1.0, frobenius_norm(y2));
  if (out.lossless) out.isometry = out.fitted;
  return out;
}

void save_state_block(const StateBlock& b, const std::filesystem::path& dir) {
  validate(b);
  std::filesystem::create_directories(dir);
  nlohmann::json meta;
  meta["metric"] = std::string(to_string(b.metric.kind));
  meta["activation"] = std::string(to_string(b.metric.activation));
  meta["n_out"] = b.n_out();
  meta["n_in"] = b.n_in();
  meta["r"] = b.rank();
  meta["r_tilde"] = b.metric.feature_dim(b.rank());
  meta["origin"] = b.origin;
  std::ofstream(dir / "meta.json") << meta.dump(2) << "\n";
  write_matrix(dir / "q_out.ngct", b.q_out);
  write_matrix(dir / "q_in.ngct", b.q_in);
  if (b.metric.trainable()) {
    write_matrix(dir / "g_left.ngct", b.metric.g_left);
    write_matrix(dir / "g_right.ngct", b.metric.right());
  }
}

StateBlock load_state_block(const std::filesystem::path& dir) {
  std::ifstream in(dir / "meta.json");
  require(in.good(), ErrorCode::IoError, "missing " + (dir / "meta.json").string());
  nlohmann::json meta;
  try {
    in >> meta;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::IoError, std::string("meta.json: ") + e.what());
  }
  StateBlock b;
  b.q_out = read_matrix(dir / "q_out.ngct");
  b.q_in = read_matrix(dir / "q_in.ngct");
  b.origin = meta.value("origin", "");
  const std::string kind = meta.at("metric").get<std::string>();
  const Activation act = meta.at("activation").get<std::string>() == "tanh" ? Activation::Tanh : Activation::Identity;
  if (kind == "bilinear") {
    b.metric = IntraMetric::bilinear(read_matrix(dir / "g_left.ngct"), read_matrix(dir / "g_right.ngct"), act);
  } else if (kind == "shared") {
    b.metric = IntraMetric::shared(read_matrix(dir / "g_left.ngct"), act);
  } else {
    require(kind == "dot", ErrorCode::IoError, "unknown metric kind '" + kind + "'");
  }
  validate(b);
  return b;
}

}  // namespace ngc
