#include "ngc/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "json.hpp"
#include "ngc/error.hpp"

namespace ngc {
namespace {

Matrix rows(const Matrix& m, std::size_t first, std::size_t count) { return m.block(first, 0, count, m.cols()); }

double mean_abs(const Vector& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += std::abs(x);
  return s / static_cast<double>(v.size());
}

// Σ_t (pred_t − target_t) ⊘ clamp(target_t), divided by `count`.
Vector guarded_mean_ratio(const Matrix& pred, const Matrix& target, double epsilon) {
  Vector out(target.cols(), 0.0);
  for (std::size_t t = 0; t < target.rows(); ++t)
    for (std::size_t j = 0; j < target.cols(); ++j)
      out[j] += (pred(t, j) - target(t, j)) / clamp_denominator(target(t, j), epsilon);
  for (double& v : out) v /= static_cast<double>(target.rows());
  return out;
}

void check_psd(const Matrix& f) {
  require(f.rows() == 4 && f.cols() == 4, ErrorCode::ShapeError, "F must be 4 x 4");
  require(is_symmetric(f, 1e-10), ErrorCode::NotPositiveDefinite, "F is not symmetric");
  const Vector ev = symmetric_eigenvalues(f);
  const double scale = std::max(1.0, std::abs(ev.back()));
  require(ev.front() >= -1e-12 * scale, ErrorCode::NotPositiveDefinite, "F has a negative eigenvalue");
}

double row_norm(const Matrix& m) { return norm2(m.values()); }

}  // namespace

Matrix stacked_states(const StateBlock& b) { return vstack(b.q_out, b.q_in); }

SideProjection fit_side(const Matrix& root, const Matrix& com, double lambda, double ridge) {
  require(root.rows() == com.rows() && root.cols() == com.cols(), ErrorCode::ShapeError,
          "root and com traces must be aligned");
  require(root.rows() >= 2, ErrorCode::InsufficientData, "fitting projections needs T >= 2");
  const std::size_t t = root.rows() - 1, n = root.cols();
  const Matrix x = hstack(rows(root, 1, t) * lambda, rows(com, 0, t) * (1.0 - lambda));
  const Matrix p = least_squares(x, rows(com, 1, t), ridge);
  return {p.block(0, 0, n, n), p.block(n, 0, n, n)};
}

StateProjection fit_states(const Matrix& root, const Matrix& com_prev, const Matrix& com, double lambda,
                           double ridge) {
  require(root.rows() == com.rows() && com_prev.rows() == com.rows(), ErrorCode::ShapeError,
          "state snapshots must cover the same neurons");
  require(com_prev.cols() == com.cols(), ErrorCode::ShapeError, "com snapshots must share the rank");
  const std::size_t r = root.cols(), rs = com.cols();
  const Matrix x = hstack(root * lambda, com_prev * (1.0 - lambda));
  const Matrix p = least_squares(x, com, ridge);
  return {p.block(0, 0, r, rs), p.block(r, 0, rs, rs)};
}

ProjectionSet fit_projections(const ActivationTrace& root, const ActivationTrace& com,
                              const std::vector<BlockId>& blocks, const StateSnapshots& snapshots, double lambda,
                              double ridge) {
  require(lambda > 0.0 && lambda <= 1.0, ErrorCode::InvalidInput, "lambda must lie in (0, 1]");
  require(root.steps() >= 2 && com.steps() >= 2, ErrorCode::InsufficientData, "fitting projections needs T >= 2");
  require(root.tokens == com.tokens, ErrorCode::InvalidInput, "traces must cover the same token sequence");
  ProjectionSet out;
  out.lambda = lambda;
  for (const auto& id : blocks) {
    for (Side side : {Side::In, Side::Out}) {
      const SideKey key{id, side};
      out.sides[key] = fit_side(root.at(key), com.at(key), lambda, ridge);
    }
    if (snapshots.com.count(id))
      out.states[id] =
          fit_states(snapshots.root.at(id), snapshots.com_prev.at(id), snapshots.com.at(id), lambda, ridge);
  }
  return out;
}

double clamp_denominator(double a, double epsilon) {
  if (std::abs(a) >= epsilon) return a;
  return a < 0.0 ? -epsilon : epsilon;
}

SideResiduals side_residuals(const Matrix& root, const Matrix& com, const SideProjection& p, double epsilon) {
  require(root.rows() >= 2 && root.rows() == com.rows(), ErrorCode::InsufficientData, "residuals need T >= 2");
  const std::size_t t = com.rows();
  SideResiduals r;
  r.grad_t_trs = guarded_mean_ratio(matmul(root, p.t_trs), com, epsilon);
  r.grad_t_com = guarded_mean_ratio(matmul(rows(com, 0, t - 1), p.t_com), rows(com, 1, t - 1), epsilon);
  return r;
}

StateResiduals state_residuals(const Matrix& root, const Matrix& com_prev, const Matrix& com,
                               const StateProjection& p, double epsilon) {
  return {guarded_mean_ratio(matmul(root, p.h_trs), com, epsilon),
          guarded_mean_ratio(matmul(com_prev, p.h_com), com, epsilon)};
}

ResidualSet compute_residuals(const ActivationTrace& root, const ActivationTrace& com,
                              const StateSnapshots& snapshots, const ProjectionSet& projections, double epsilon) {
  ResidualSet out;
  for (const auto& [key, p] : projections.sides) out.sides[key] = side_residuals(root.at(key), com.at(key), p, epsilon);
  for (const auto& [id, p] : projections.states)
    out.states[id] =
        state_residuals(snapshots.root.at(id), snapshots.com_prev.at(id), snapshots.com.at(id), p, epsilon);
  return out;
}

Vector column_gains(const Matrix& m) {
  Vector g(m.cols(), 0.0);
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) g[j] += m(i, j) * m(i, j);
  for (double& v : g) v = std::sqrt(v);
  return g;
}

Matrix build_phi(const SideProjection& p, const SideResiduals& r, const StateProjection* sp,
                 const StateResiduals* sr) {
  const std::size_t n = p.t_trs.cols();
  require(p.t_com.cols() == n && r.grad_t_trs.size() == n && r.grad_t_com.size() == n, ErrorCode::ShapeError,
          "activation terms of Phi disagree in length");
  const std::size_t rs = sp ? sp->h_com.cols() : 0;
  if (sp) {
    require(sr != nullptr, ErrorCode::ShapeError, "state projections need state residuals");
    require(sp->h_trs.cols() == rs && sr->grad_h_trs.size() == rs && sr->grad_h_com.size() == rs,
            ErrorCode::ShapeError, "state terms of Phi disagree in length");
  }
  Matrix phi(n + rs, 4);
  const Vector gt = column_gains(p.t_trs), gc = column_gains(p.t_com);
  for (std::size_t i = 0; i < n; ++i) {
    phi(i, 0) = gt[i];
    phi(i, 1) = r.grad_t_trs[i];
    phi(i, 2) = gc[i];
    phi(i, 3) = r.grad_t_com[i];
  }
  if (sp) {
    const Vector ht = column_gains(sp->h_trs), hc = column_gains(sp->h_com);
    for (std::size_t i = 0; i < rs; ++i) {
      phi(n + i, 0) = ht[i];
      phi(n + i, 1) = sr->grad_h_trs[i];
      phi(n + i, 2) = hc[i];
      phi(n + i, 3) = sr->grad_h_com[i];
    }
  }
  return phi;
}

std::map<SideKey, Matrix> build_phi(const ProjectionSet& projections, const ResidualSet& residuals) {
  std::map<SideKey, Matrix> out;
  for (const auto& [key, p] : projections.sides) {
    const auto sp = projections.states.find(key.block);
    const bool has_states = sp != projections.states.end();
    out[key] = build_phi(p, residuals.sides.at(key), has_states ? &sp->second : nullptr,
                         has_states ? &residuals.states.at(key.block) : nullptr);
  }
  return out;
}

const Matrix& StabilityConfig::f_for(const BlockId& id) const {
  const auto it = f_per_block.find(id);
  return it == f_per_block.end() ? f_metric : it->second;
}

double stability_score(const std::map<SideKey, Matrix>& phis, const StabilityConfig& cfg) {
  check_psd(cfg.f_metric);
  for (const auto& [id, f] : cfg.f_per_block) check_psd(f);
  double s = 0.0;
  for (const auto& [key, phi] : phis) {
    const Matrix g = matmul_nt(matmul(phi, cfg.f_for(key.block)), phi);
    s += cfg.norm == ScoreNorm::Frobenius ? frobenius_norm(g) : sigma_max(g);
  }
  return s;
}

double stability_score_approx(const ProjectionSet& projections, const ResidualSet& residuals,
                              const StabilityConfig& cfg) {
  double s = 0.0;
  for (const auto& [key, p] : projections.sides) {
    const double st = sigma_max(p.t_trs), sc = sigma_max(p.t_com);
    require(sc > 0.0, ErrorCode::DegenerateDynamics, "sigma_max(T_com) vanishes for " + key.name());
    require(st > 0.0, ErrorCode::DegenerateDynamics, "sigma_max(T_trs) vanishes for " + key.name());
    s += std::log(st / sc) - cfg.alpha * mean_abs(residuals.sides.at(key).grad_t_com);
    if (const auto it = residuals.states.find(key.block); it != residuals.states.end())
      s -= cfg.beta * mean_abs(it->second.grad_h_com);
  }
  return s;
}

Matrix simulate_updates(const Matrix& root, const SideProjection& p, double lambda, const Matrix& a0,
                        const std::optional<Matrix>& disturbances) {
  require(a0.rows() == 1 && a0.cols() == p.t_com.rows(), ErrorCode::ShapeError, "a0 must be one row of width N");
  if (disturbances)
    require(disturbances->rows() <= root.rows() && disturbances->cols() == a0.cols(), ErrorCode::ShapeError,
            "disturbance schedule longer than the trace");
  Matrix out(root.rows(), a0.cols());
  Matrix a = a0;
  out.set_block(0, 0, a);
  for (std::size_t t = 0; t + 1 < root.rows(); ++t) {
    Matrix next = matmul(Matrix::row_vector(root.row(t + 1)), p.t_trs) * lambda;
    next += matmul(a, p.t_com) * (1.0 - lambda);
    if (disturbances && t < disturbances->rows()) next += Matrix::row_vector(disturbances->row(t));
    a = std::move(next);
    out.set_block(t + 1, 0, a);
  }
  return out;
}

ActivationTrace simulate_com_updates(const ActivationTrace& root, const ProjectionSet& projections,
                                     const std::map<SideKey, Matrix>& disturbances) {
  ActivationTrace out;
  out.system = System::Com;
  out.tokens = root.tokens;
  for (const auto& [key, p] : projections.sides) {
    const Matrix& r = root.at(key);
    const auto d = disturbances.find(key);
    out.acts[key] = simulate_updates(r, p, projections.lambda, r.top_rows(1),
                                     d == disturbances.end() ? std::nullopt : std::optional<Matrix>(d->second));
  }
  return out;
}

double contraction_modulus(const ErrorSystem& sys) {
  double rho = 0.0;
  for (const auto& m : sys.m_a) rho = std::max(rho, sigma_max(m));
  for (const auto& m : sys.m_q) rho = std::max(rho, sigma_max(m));
  return rho;
}

double disturbance_level(const ErrorSystem& sys) {
  double s = 0.0;
  for (std::size_t t = 0; t < sys.horizon(); ++t) s = std::max(s, row_norm(sys.delta_a[t]) + row_norm(sys.delta_q[t]));
  return s;
}

Vector simulate_deviation(const ErrorSystem& sys) {
  Vector dev;
  dev.reserve(sys.horizon() + 1);
  Matrix ea = sys.e0_a, eq = sys.e0_q;
  dev.push_back(std::max(row_norm(ea), row_norm(eq)));
  for (std::size_t t = 0; t < sys.horizon(); ++t) {
    ea = matmul(ea, sys.m_a[t]) + sys.delta_a[t];
    eq = matmul(eq, sys.m_q[t]) + sys.delta_q[t];
    dev.push_back(std::max(row_norm(ea), row_norm(eq)));
  }
  return dev;
}

ErrorSystem random_error_system(std::size_t n_a, std::size_t n_q, std::size_t horizon, double rho,
                                double disturbance_scale, Rng& rng) {
  require(horizon >= 1 && n_a >= 1 && n_q >= 1, ErrorCode::InvalidInput, "error system dimensions must be >= 1");
  std::uniform_real_distribution<double> unit(0.5, 1.0);
  auto transition = [&](std::size_t n, double target) {
    Matrix m = gaussian_matrix(n, n, rng);
    m *= target / sigma_max(m);
    return m;
  };
  ErrorSystem sys;
  for (std::size_t t = 0; t < horizon; ++t) {
    const double ra = t == 0 ? rho : unit(rng) * rho;
    const double rq = t == 0 ? rho : unit(rng) * rho;
    sys.m_a.push_back(transition(n_a, ra));
    sys.m_q.push_back(transition(n_q, rq));
    sys.delta_a.push_back(gaussian_matrix(1, n_a, rng, disturbance_scale));
    sys.delta_q.push_back(gaussian_matrix(1, n_q, rng, disturbance_scale));
  }
  sys.e0_a = gaussian_matrix(1, n_a, rng);
  sys.e0_q = gaussian_matrix(1, n_q, rng);
  return sys;
}

ErrorSystem scaled_disturbances(const ErrorSystem& sys, double scale) {
  ErrorSystem out = sys;
  for (auto& d : out.delta_a) d *= scale;
  for (auto& d : out.delta_q) d *= scale;
  return out;
}

double iss_bound(double rho, double e0, double s, std::size_t t) {
  return std::pow(rho, static_cast<double>(t)) * e0 + s / (1.0 - rho);
}

IssReport iss_bound_check(const ErrorSystem& sys) {
  IssReport rep;
  rep.trials = 1;
  rep.rho = contraction_modulus(sys);
  if (rep.rho >= 1.0) {
    rep.not_contractive = 1;
    return rep;
  }
  const double s = disturbance_level(sys);
  const Vector dev = simulate_deviation(sys);
  rep.max_slack = -std::numeric_limits<double>::infinity();
  rep.min_slack = std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < dev.size(); ++t) {
    const double bound = iss_bound(rep.rho, dev[0], s, t);
    const double slack = bound - dev[t];
    rep.max_slack = std::max(rep.max_slack, slack);
    rep.min_slack = std::min(rep.min_slack, slack);
    // Relative rounding allowance for the recursion itself.
    if (slack < -1e-12 * std::max(1.0, bound)) ++rep.violations;
  }
  return rep;
}

IssReport iss_bound_check(std::size_t horizon, std::size_t trials, std::uint64_t seed, double rho_max,
                          std::size_t n_a, std::size_t n_q) {
  IssReport total;
  total.max_slack = -std::numeric_limits<double>::infinity();
  total.min_slack = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < trials; ++i) {
    Rng rng = make_rng(seed, i);
    const double rho = std::uniform_real_distribution<double>(0.1, rho_max)(rng);
    const IssReport r = iss_bound_check(random_error_system(n_a, n_q, horizon, rho, 0.1, rng));
    total.trials += 1;
    total.violations += r.violations;
    total.not_contractive += r.not_contractive;
    total.rho = std::max(total.rho, r.rho);
    if (r.not_contractive) continue;
    total.max_slack = std::max(total.max_slack, r.max_slack);
    total.min_slack = std::min(total.min_slack, r.min_slack);
  }
  return total;
}

LossGapReport loss_gap_check(const ErrorSystem& sys, const Matrix& root_rows, const Matrix& decoder,
                             const Matrix& target_row) {
  require(root_rows.rows() == sys.horizon() + 1, ErrorCode::ShapeError, "need one root row per step");
  require(decoder.rows() == root_rows.cols() && target_row.cols() == decoder.cols(), ErrorCode::ShapeError,
          "decoder shape mismatch");
  LossGapReport rep;
  rep.lipschitz = sigma_max(decoder);
  rep.steps = root_rows.rows();
  const double rho = contraction_modulus(sys);
  const double s = disturbance_level(sys);
  auto loss = [&](const Matrix& a) { return frobenius_norm(matmul(a, decoder) - target_row); };

  Matrix ea = sys.e0_a, eq = sys.e0_q;
  const double e0 = std::max(row_norm(ea), row_norm(eq));
  double gap_sum = 0.0, transient_sum = 0.0;
  for (std::size_t t = 0; t < rep.steps; ++t) {
    if (t > 0) {
      ea = matmul(ea, sys.m_a[t - 1]) + sys.delta_a[t - 1];
      eq = matmul(eq, sys.m_q[t - 1]) + sys.delta_q[t - 1];
    }
    const Matrix a_root = Matrix::row_vector(root_rows.row(t));
    const double gap = std::abs(loss(a_root + ea) - loss(a_root));
    if (gap > rep.lipschitz * row_norm(ea) * (1.0 + 1e-12) + 1e-15) ++rep.violations;
    rep.max_gap = std::max(rep.max_gap, gap);
    gap_sum += gap;
    transient_sum += std::pow(rho, static_cast<double>(t)) * e0;
  }
  rep.mean_gap = gap_sum / static_cast<double>(rep.steps);
  if (rho < 1.0) {
    rep.average_bound = rep.lipschitz * (s / (1.0 - rho) + transient_sum / static_cast<double>(rep.steps)) * (1.0 + 1e-9);
    rep.average_holds = rep.mean_gap <= rep.average_bound;
  } else {
    rep.average_bound = std::numeric_limits<double>::infinity();
  }
  return rep;
}

LossGapReport loss_gap_check(std::size_t horizon, std::size_t trials, std::uint64_t seed, double rho_max) {
  LossGapReport total;
  for (std::size_t i = 0; i < trials; ++i) {
    Rng rng = make_rng(seed, 0x10000 + i);
    const double rho = std::uniform_real_distribution<double>(0.1, rho_max)(rng);
    const ErrorSystem sys = random_error_system(8, 4, horizon, rho, 0.1, rng);
    const Matrix root = gaussian_matrix(horizon + 1, 8, rng);
    const Matrix decoder = gaussian_matrix(8, 3, rng);
    const Matrix target = gaussian_matrix(1, 3, rng);
    const LossGapReport r = loss_gap_check(sys, root, decoder, target);
    total.steps += r.steps;
    total.violations += r.violations + (r.average_holds ? 0 : 1);
    total.average_holds = total.average_holds && r.average_holds;
    total.lipschitz = std::max(total.lipschitz, r.lipschitz);
    total.max_gap = std::max(total.max_gap, r.max_gap);
    total.mean_gap = std::max(total.mean_gap, r.mean_gap);
    total.average_bound = std::max(total.average_bound, r.average_bound);
  }
  return total;
}

PotentialReport external_potential_test(const ErrorSystem& base, double scale) {
  require(scale >= 0.0, ErrorCode::InvalidInput, "disturbance scale must be non-negative");
  const ErrorSystem sys = scaled_disturbances(base, scale);
  PotentialReport rep;
  rep.scale = scale;
  rep.rho = contraction_modulus(sys);
  require(rep.rho < 1.0, ErrorCode::NotContractive, "base system is not contractive");
  rep.s = disturbance_level(sys);
  rep.bound_term = rep.s / (1.0 - rep.rho);
  const Vector dev = simulate_deviation(sys);
  rep.max_deviation = *std::max_element(dev.begin(), dev.end());
  const IssReport iss = iss_bound_check(sys);
  rep.violations = iss.violations;

  // Departure from the disturbance-free trajectory.
  ErrorSystem forced = sys;
  forced.e0_a = Matrix(1, sys.e0_a.cols());
  forced.e0_q = Matrix(1, sys.e0_q.cols());
  const Vector dep = simulate_deviation(forced);
  rep.departure = *std::max_element(dep.begin(), dep.end());
  return rep;
}

PotentialSweep external_potential_sweep(const std::vector<double>& scales, std::size_t trials, std::uint64_t seed,
                                        double rho_max) {
  PotentialSweep sweep;
  sweep.scales = scales;
  for (std::size_t i = 0; i < trials; ++i) {
    Rng rng = make_rng(seed, 0x20000 + i);
    const double rho = std::uniform_real_distribution<double>(0.1, rho_max)(rng);
    const ErrorSystem base = random_error_system(8, 4, 200, rho, 0.1, rng);
    std::vector<PotentialReport> reps;
    for (double s : scales) reps.push_back(external_potential_test(base, s));
    sweep.trials += 1;
    for (std::size_t k = 0; k < reps.size(); ++k) {
      sweep.violations += reps[k].violations;
      if (k > 0 && (reps[k].departure < reps[k - 1].departure || reps[k].bound_term < reps[k - 1].bound_term))
        ++sweep.non_monotone;
    }
    if (i == 0) sweep.first_trial = reps;
  }
  return sweep;
}

StabilityReport score_system(const ActivationTrace& root, const ActivationTrace& com, const std::vector<BlockId>& blocks,
                             const StateSnapshots& snapshots, double lambda, const StabilityConfig& cfg) {
  StabilityReport rep;
  rep.projections = fit_projections(root, com, blocks, snapshots, lambda);
  rep.residuals = compute_residuals(root, com, snapshots, rep.projections, cfg.epsilon);
  rep.phis = build_phi(rep.projections, rep.residuals);
  rep.s = stability_score(rep.phis, cfg);
  rep.s_approx = stability_score_approx(rep.projections, rep.residuals, cfg);

  for (const auto& [key, p] : rep.projections.sides) rep.rho = std::max(rep.rho, sigma_max(p.t_com));
  for (const auto& [id, p] : rep.projections.states) rep.rho = std::max(rep.rho, sigma_max(p.h_com));
  rep.contractive = rep.rho < 1.0;

  // The fitted activation recursion per side: e_{t+1} = e_t·T_com + δ_t with
  // δ_t the one-step regression residual.
  rep.iss.max_slack = -std::numeric_limits<double>::infinity();
  rep.iss.min_slack = std::numeric_limits<double>::infinity();
  rep.iss.rho = rep.rho;
  for (const auto& [key, p] : rep.projections.sides) {
    const Matrix& a_root = root.at(key);
    const Matrix& a_com = com.at(key);
    rep.iss.trials += 1;
    const double rho = sigma_max(p.t_com);
    if (rho >= 1.0) {
      rep.iss.not_contractive += 1;
      continue;
    }
    ErrorSystem sys;
    const std::size_t n = a_com.cols();
    const Matrix zero_q(1, 1);
    for (std::size_t t = 0; t + 1 < a_com.rows(); ++t) {
      Matrix pred = matmul(Matrix::row_vector(a_root.row(t + 1)), p.t_trs) * lambda;
      pred += matmul(Matrix::row_vector(a_com.row(t)), p.t_com) * (1.0 - lambda);
      sys.m_a.push_back(p.t_com * (1.0 - lambda));
      sys.m_q.push_back(Matrix(1, 1));
      sys.delta_a.push_back(Matrix::row_vector(a_com.row(t + 1)) - pred);
      sys.delta_q.push_back(zero_q);
    }
    sys.e0_a = Matrix(1, n);
    sys.e0_q = zero_q;
    const IssReport r = iss_bound_check(sys);
    rep.iss.violations += r.violations;
    rep.iss.max_slack = std::max(rep.iss.max_slack, r.max_slack);
    rep.iss.min_slack = std::min(rep.iss.min_slack, r.min_slack);
  }
  if (rep.iss.trials == rep.iss.not_contractive) rep.iss.max_slack = rep.iss.min_slack = 0.0;
  return rep;
}

std::string stability_report_json(const StabilityReport& report, double lambda, const StabilityConfig& cfg) {
  using nlohmann::json;
  json sides = json::object();
  for (const auto& [key, p] : report.projections.sides) {
    const auto& r = report.residuals.sides.at(key);
    json entry{{"sigma_trs", sigma_max(p.t_trs)},
               {"sigma_com", sigma_max(p.t_com)},
               {"grad_t_trs", mean_abs(r.grad_t_trs)},
               {"grad_t_com", mean_abs(r.grad_t_com)}};
    if (const auto it = report.residuals.states.find(key.block); it != report.residuals.states.end()) {
      entry["grad_h_trs"] = mean_abs(it->second.grad_h_trs);
      entry["grad_h_com"] = mean_abs(it->second.grad_h_com);
    }
    sides[key.name()] = entry;
  }
  json j;
  j["schema_version"] = "1";
  j["sides"] = sides;
  j["totals"] = {{"S", report.s},
                 {"S_approx", report.s_approx},
                 {"rho", report.rho},
                 {"contractive", report.contractive},
                 {"iss",
                  {{"trials", report.iss.trials},
                   {"not_contractive", report.iss.not_contractive},
                   {"violations", report.iss.violations},
                   {"max_slack", report.iss.max_slack},
                   {"min_slack", report.iss.min_slack}}}};
  j["config"] = {{"lambda", lambda},
                 {"alpha", cfg.alpha},
                 {"beta", cfg.beta},
                 {"epsilon", cfg.epsilon},
                 {"norm", cfg.norm == ScoreNorm::Frobenius ? "frobenius" : "spectral"},
                 {"selection", "argmin S_approx"}};
  return j.dump(2);
}

}  // namespace ngc
