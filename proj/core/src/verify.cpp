#include "ngc/verify.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "json.hpp"
#include "ngc/block.hpp"
#include "ngc/dynamics.hpp"
#include "ngc/error.hpp"
#include "ngc/groups.hpp"
#include "ngc/init.hpp"
#include "ngc/linalg.hpp"
#include "ngc/netmodel.hpp"
#include "ngc/policy.hpp"
#include "ngc/rng.hpp"

namespace ngc {
namespace {

std::size_t trials(const VerifyOptions& o, std::size_t fast, std::size_t full) {
  return o.level == VerifyLevel::Full ? full : fast;
}

std::size_t uniform_size(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

double relative(double err, double scale) { return err / std::max(scale, 1e-300); }

CheckResult make(std::string id, std::string name, double value, double limit, std::size_t n) {
  CheckResult c;
  c.id = std::move(id);
  c.name = std::move(name);
  c.value = value;
  c.limit = limit;
  c.trials = n;
  c.passed = std::isfinite(value) && value <= limit;
  return c;
}

Matrix low_rank(std::size_t m, std::size_t n, std::size_t k, Rng& rng) {
  return matmul(gaussian_matrix(m, k, rng), gaussian_matrix(k, n, rng));
}

Matrix scaled_to_norm(Matrix m, double target) { return m * (target / sigma_max(m)); }

// ‖a − b‖ / max(‖a‖, ‖b‖) over the sampled entries.
double gradient_error(const std::vector<double>& analytic, const std::vector<double>& numeric) {
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
    na += analytic[i] * analytic[i];
    nn += numeric[i] * numeric[i];
  }
  const double scale = std::sqrt(std::max(na, nn));
  return scale == 0.0 ? 0.0 : std::sqrt(diff) / scale;
}

template <class Loss>
double fd_check(Matrix& param, const Matrix& analytic, Loss&& loss, std::size_t samples, Rng& rng,
                double h = 1e-5) {
  std::vector<double> a, n;
  for (std::size_t s = 0; s < samples; ++s) {
    const std::size_t r = uniform_size(rng, 0, param.rows() - 1);
    const std::size_t c = uniform_size(rng, 0, param.cols() - 1);
    const double keep = param(r, c);
    param(r, c) = keep + h;
    const double up = loss();
    param(r, c) = keep - h;
    const double down = loss();
    param(r, c) = keep;
    a.push_back(analytic(r, c));
    n.push_back((up - down) / (2.0 * h));
  }
  return gradient_error(a, n);
}

}  // namespace

std::optional<VerifyLevel> parse_verify_level(std::string_view text) {
  if (text == "fast") return VerifyLevel::Fast;
  if (text == "full") return VerifyLevel::Full;
  return std::nullopt;
}

bool VerifyReport::passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed; });
}

const CheckResult* VerifyReport::find(std::string_view id) const {
  for (const auto& c : checks)
    if (c.id == id) return &c;
  return nullptr;
}

CheckResult check_exact_realization(const VerifyOptions& opts) {
  Rng rng = make_rng(opts.seed, 1);
  const std::size_t n_trials = trials(opts, 100, 1000);
  double worst = 0.0;
  for (std::size_t i = 0; i < n_trials; ++i) {
    const std::size_t m = uniform_size(rng, 1, 32), n = uniform_size(rng, 1, 48);
    const std::size_t k = uniform_size(rng, 1, std::min(m, n));
    const Matrix w = low_rank(m, n, k, rng);
    const SvdResult sv = svd(w);
    const std::size_t r = sv.numerical_rank();
    Factorization f = truncate_factor(sv, r);
    if (opts.truncation_fault != 0.0) {
      for (double& v : f.a.values()) v += opts.truncation_fault;
    }
    StateBlock b;
    b.q_out = std::move(f.a);
    b.q_in = std::move(f.b);
    worst = std::max(worst, relative(frobenius_norm(reconstruct(b) - w), frobenius_norm(w)));
  }
  auto c = make("exact_realization", "rank(W) states reproduce W", worst, 1e-8, n_trials);
  c.detail = "max relative Frobenius error";
  return c;
}

CheckResult check_eckart_young(const VerifyOptions& opts) {
  Rng rng = make_rng(opts.seed, 2);
  const std::size_t n_trials = trials(opts, 100, 1000);
  double worst = 0.0;
  for (std::size_t i = 0; i < n_trials; ++i) {
    const std::size_t m = uniform_size(rng, 2, 32), n = uniform_size(rng, 2, 48);
    const Matrix w = gaussian_matrix(m, n, rng);
    const std::size_t r = uniform_size(rng, 1, std::min(m, n) - 1);
    const double err = frobenius_norm(truncate(svd(w), r) - w);
    // Tail energy from the eigenvalues of the Gram matrix, independent of the SVD.
    Vector eig = symmetric_eigenvalues(m <= n ? matmul_nt(w, w) : matmul_tn(w, w));
    double tail = 0.0;
    for (std::size_t j = 0; j + r < eig.size(); ++j) tail += std::max(eig[j], 0.0);
    const double energy = frobenius_norm(w) * frobenius_norm(w);
    worst = std::max(worst, std::abs(err * err - tail) / energy);
  }
  auto c = make("eckart_young", "truncation error equals tail energy", worst, 1e-8, n_trials);
  c.detail = "max |err^2 - tail| / ||W||^2";
  return c;
}

CheckResult check_iss(const VerifyOptions& opts) {
  const std::size_t n_trials = trials(opts, 100, 1000);
  const IssReport r = iss_bound_check(200, n_trials, opts.seed + 3, 0.9);

  ErrorSystem tight;
  for (int t = 0; t < 64; ++t) {
    tight.m_a.push_back(Matrix{{0.5}});
    tight.m_q.push_back(Matrix{{0.5}});
    tight.delta_a.push_back(Matrix{{0.0}});
    tight.delta_q.push_back(Matrix{{0.0}});
  }
  tight.e0_a = Matrix{{1.0}};
  tight.e0_q = Matrix{{0.0}};
  const Vector dev = simulate_deviation(tight);
  double tight_err = 0.0;
  for (std::size_t t = 0; t < dev.size(); ++t) {
    tight_err = std::max(tight_err, std::abs(dev[t] - std::ldexp(1.0, -static_cast<int>(t))));
    tight_err = std::max(tight_err, std::abs(iss_bound(0.5, 1.0, 0.0, t) - dev[t]));
  }
  const double value = static_cast<double>(r.violations + r.not_contractive) + tight_err;
  auto c = make("iss", "deviation bound over contractive systems", value, 0.0, n_trials);
  std::ostringstream d;
  d << "violations " << r.violations << ", rejected " << r.not_contractive << ", min slack " << r.min_slack
    << ", scalar tight-case error " << tight_err;
  c.detail = d.str();
  return c;
}

CheckResult check_loss_gap(const VerifyOptions& opts) {
  const std::size_t n_trials = trials(opts, 100, 1000);
  const LossGapReport r = loss_gap_check(200, n_trials, opts.seed + 4, 0.9);
  const double value = static_cast<double>(r.violations) + (r.average_holds ? 0.0 : 1.0);
  auto c = make("loss_gap", "Lipschitz loss gap bound", value, 0.0, n_trials);
  std::ostringstream d;
  d << "per-step violations " << r.violations << ", average bound " << (r.average_holds ? "holds" : "violated");
  c.detail = d.str();
  return c;
}

CheckResult check_external_potential(const VerifyOptions& opts) {
  const std::size_t n_trials = trials(opts, 100, 1000);
  const PotentialSweep s = external_potential_sweep({1.0, 2.0, 4.0}, n_trials, opts.seed + 5, 0.9);
  const double value = static_cast<double>(s.violations + s.non_monotone);
  auto c = make("external_potential", "bound holds and grows with disturbance scale", value, 0.0, n_trials);
  std::ostringstream d;
  d << "violations " << s.violations << ", non-monotone " << s.non_monotone;
  c.detail = d.str();
  return c;
}

CheckResult check_delay_compilation(const VerifyOptions& opts) {
  Rng rng = make_rng(opts.seed, 6);
  const std::size_t seqs = trials(opts, 50, 200);
  double worst = 0.0;
  std::size_t count = 0;
  for (std::size_t d = 0; d <= 8; ++d) {
    for (std::size_t hold = 1; hold <= 4; ++hold) {
      const std::size_t dim = 3;
      const AugmentedSharing link = compile_delayed_link(InterLink{0, 1, d, hold}, dim);
      for (std::size_t s = 0; s < seqs; ++s, ++count) {
        const Matrix z = gaussian_matrix(64, dim, rng);
        const Matrix y = link.run(z);
        for (std::size_t t = 0; t < 64; ++t) {
          const std::size_t sample = t - t % hold;
          for (std::size_t j = 0; j < dim; ++j) {
            const double expect = sample >= d ? z(sample - d, j) : 0.0;
            worst = std::max(worst, std::abs(y(t, j) - expect));
          }
        }
      }
    }
  }
  auto c = make("delay_compilation", "shift register equals delayed zero-order-hold link", worst, 1e-12, count);
  c.detail = "max abs difference over d in [0,8], hold in [1,4]";
  return c;
}

CheckResult check_sharing(const VerifyOptions& opts) {
  Rng rng = make_rng(opts.seed, 7);
  const std::size_t n_trials = trials(opts, 20, 100);
  double lossless_err = 0.0, isometry_err = 0.0;
  std::size_t missed = 0, false_alarms = 0;
  for (std::size_t i = 0; i < n_trials; ++i) {
    const std::size_t r = uniform_size(rng, 2, 6);
    const std::size_t n_out = uniform_size(rng, r, 12), n_in = uniform_size(rng, 2, 12);
    StateBlock b1;
    b1.q_out = gaussian_matrix(n_out, r, rng);
    b1.q_in = gaussian_matrix(n_in, r, rng);
    const Matrix u = random_orthogonal(r, rng);
    StateBlock b2 = b1;
    b2.q_out = matmul(b1.q_out, u);
    const Matrix inputs = gaussian_matrix(8, n_in, rng);

    const SharingCheck ok = sharing_lossless_check(b1, b2, inputs, 1e-10);
    if (!ok.lossless) ++missed;
    lossless_err = std::max({lossless_err, ok.feature_residual, ok.output_residual});
    isometry_err = std::max(isometry_err, max_abs_diff(ok.fitted, u));

    StateBlock b3 = b1;
    b3.q_out = matmul(b1.q_out, u + gaussian_matrix(r, r, rng) * 0.3);
    if (sharing_lossless_check(b1, b3, inputs, 1e-10).lossless) ++false_alarms;
  }
  const bool ok = missed == 0 && false_alarms == 0 && lossless_err <= 1e-10 && isometry_err <= 1e-6;
  auto c = make("sharing", "rotated output states share input states losslessly", ok ? 0.0 : 1.0, 0.0, n_trials);
  std::ostringstream d;
  d << "residual " << lossless_err << ", isometry error " << isometry_err << ", missed " << missed
    << ", counterexamples accepted " << false_alarms;
  c.detail = d.str();
  return c;
}

CheckResult check_metric_reparameterization(const VerifyOptions& opts) {
  Rng rng = make_rng(opts.seed, 8);
  const std::size_t n_trials = trials(opts, 100, 1000);
  double worst = 0.0;
  for (std::size_t i = 0; i < n_trials; ++i) {
    const std::size_t r = uniform_size(rng, 1, 8);
    const Matrix m = gaussian_matrix(r, r, rng);
    const Matrix u = gaussian_matrix(r, 1, rng), v = gaussian_matrix(r, 1, rng);
    const Reparameterization p = metric_reparameterize(m);
    const double direct = matmul(matmul_tn(u, m), v)(0, 0);
    const double reduced = dot(matmul_tn(p.c_left, u).values(), matmul_tn(p.c_right, v).values());
    const double scale = frobenius_norm(u) * frobenius_norm(v) * sigma_max(m);
    worst = std::max(worst, relative(std::abs(direct - reduced), scale));

    const Matrix a = gaussian_matrix(r, r, rng);
    const Matrix g = matmul_nt(a, a) + Matrix::identity(r) * 0.5;
    const Matrix rr = spd_reduce(g);
    const double g_form = matmul(matmul_tn(u, g), v)(0, 0);
    const double r_form = dot(matmul(rr, u).values(), matmul(rr, v).values());
    worst = std::max(worst, relative(std::abs(g_form - r_form), frobenius_norm(u) * frobenius_norm(v) * sigma_max(g)));
  }
  auto c = make("metric_reparameterization", "bilinear and SPD forms reduce to dot products", worst, 1e-10, n_trials);
  c.detail = "max relative form difference";
  return c;
}

CheckResult check_universality(const VerifyOptions& opts) {
  Rng rng = make_rng(opts.seed, 9);
  const std::size_t r = 4, r_tilde = 12, n = 10;
  StateBlock b;
  b.q_out = gaussian_matrix(n, r, rng);
  b.q_in = gaussian_matrix(n, r, rng);
  b.metric = IntraMetric::random(MetricKind::Bilinear, r, r_tilde, Activation::Tanh, opts.seed + 9);
  const Matrix target = low_rank(n, n, 2, rng) * 0.3;
  CalibrationOptions co;
  co.epochs = trials(opts, 300, 1000);
  co.lr = 3e-3;
  co.train_states = true;
  const auto res = calibrate_metric(b, target, co);
  const double ratio = res.loss.back() / res.loss.front();
  auto c = make("universality", "metric calibration fits a finite target", ratio, 0.1, 1);
  c.detail = "final / initial calibration loss";
  return c;
}

CheckResult check_gradients(const VerifyOptions& opts) {
  Rng rng = make_rng(opts.seed, 10);
  const std::size_t samples = trials(opts, 8, 32);
  double worst = 0.0;
  std::ostringstream d;

  // Calibration loss over states and both metric matrices.
  for (MetricKind kind : {MetricKind::Bilinear, MetricKind::SharedBilinear}) {
    StateBlock b;
    b.q_out = gaussian_matrix(6, 3, rng);
    b.q_in = gaussian_matrix(5, 3, rng);
    b.metric = IntraMetric::random(kind, 3, 4, Activation::Tanh, opts.seed + 10);
    const Matrix target = gaussian_matrix(6, 5, rng);
    const Matrix inputs = gaussian_matrix(7, 5, rng);
    const StateGradients g = calibration_gradient(b, target, inputs);
    auto loss = [&] { return calibration_loss(b, target, inputs); };
    const double e = std::max({fd_check(b.q_out, g.q_out, loss, samples, rng),
                               fd_check(b.q_in, g.q_in, loss, samples, rng),
                               fd_check(b.metric.g_left, g.g_left, loss, samples, rng),
                               kind == MetricKind::Bilinear ? fd_check(b.metric.g_right, g.g_right, loss, samples, rng)
                                                            : 0.0});
    d << to_string(kind) << " calibration " << e << "; ";
    worst = std::max(worst, e);
  }

  ToyConfig cfg;
  cfg.d_model = 8;
  cfg.d_ff = 12;
  cfg.vocab = 8;
  cfg.context = 8;
  cfg.seed = opts.seed + 10;
  TaskSpec task;
  task.length = 6;
  task.vocab = 8;
  std::vector<Sample> batch;
  Rng srng = make_rng(opts.seed, 11);
  for (int i = 0; i < 3; ++i) batch.push_back(sample_task(task, srng));

  RootModel root = init_root(cfg);
  NamedTensors root_grads;
  loss_and_gradients(root, batch, root_grads);
  double root_err = 0.0;
  for (auto& [name, param] : parameters(root)) {
    root_err = std::max(root_err, fd_check(*param, root_grads.at(name), [&] { return batch_loss(root, batch); },
                                           samples, rng));
  }
  d << "toy weights " << root_err << "; ";
  worst = std::max(worst, root_err);

  const ModelShape shape = cfg.shape();
  MetricSpec metric{MetricKind::Bilinear, Activation::Tanh, 1.0, opts.seed + 12};
  const Policy policy = parse_policy("qq-kk-vv@0.75", shape);
  const RankAllocation alloc = rank_for_budget(policy, shape, metric);
  std::map<BlockId, Matrix> targets;
  for (const auto& id : policy.replaced_blocks(shape)) targets[id] = root.weights.at(id);
  ComModel com = replace_blocks(root, policy, merge_states(policy, alloc, targets, metric));
  NamedTensors com_grads;
  loss_and_gradients(com, batch, com_grads);
  double com_err = 0.0;
  for (auto& [name, param] : trainable_parameters(com)) {
    com_err = std::max(com_err, fd_check(*param, com_grads.at(name), [&] { return batch_loss(com, batch); },
                                         samples, rng));
  }
  d << "com states and metrics " << com_err;
  worst = std::max(worst, com_err);

  auto c = make("gradients", "analytic gradients match central differences", worst, 1e-4, samples);
  c.detail = d.str();
  return c;
}

CheckResult check_init_identities(const VerifyOptions& opts) {
  Rng rng = make_rng(opts.seed, 13);
  const std::size_t n_trials = trials(opts, 10, 50);
  double blend_err = 0.0, flow_err = 0.0, max_rise = 0.0;
  for (std::size_t i = 0; i < n_trials; ++i) {
    const std::size_t n_out = uniform_size(rng, 2, 10), n_in = uniform_size(rng, 2, 10);
    const std::size_t t = n_in + uniform_size(rng, 4, 20);
    const Matrix w = gaussian_matrix(n_out, n_in, rng);
    const Matrix acts = gaussian_matrix(t, n_in, rng);

    InitConfig ic;
    ic.lambda = 0.5;
    ic.rank = std::min(n_out, n_in);
    ic.seed = opts.seed + i;
    blend_err = std::max(blend_err, relative(frobenius_norm(init_svd_blend(w, acts, ic) - w), frobenius_norm(w)));

    const double s = sigma_max(acts);
    ic.flow_step = 0.5 / (ic.lambda * s * s + (1.0 - ic.lambda) * static_cast<double>(t));
    ic.flow_steps = 400;
    const FlowResult f = init_gradient_flow(w, acts, ic);
    for (std::size_t k = 1; k < f.objective.size(); ++k)
      max_rise = std::max(max_rise, (f.objective[k] - f.objective[k - 1]) / std::max(f.objective[0], 1e-300));
    flow_err = std::max(flow_err, relative(frobenius_norm(f.c - w), frobenius_norm(w)));
  }
  const bool ok = blend_err <= 1e-8 && max_rise <= 1e-12 && flow_err <= 1e-3;
  auto c = make("init_identities", "full-rank blend and gradient flow recover W", ok ? 0.0 : 1.0, 0.0, n_trials);
  std::ostringstream d;
  d << "blend error " << blend_err << ", largest objective rise " << max_rise << ", flow endpoint error "
    << flow_err;
  c.detail = d.str();
  return c;
}

CheckResult check_projection_recovery(const VerifyOptions& opts) {
  Rng rng = make_rng(opts.seed, 14);
  const std::size_t n_trials = trials(opts, 10, 50);
  const double lambda = 0.5;
  double worst = 0.0;
  for (std::size_t i = 0; i < n_trials; ++i) {
    const std::size_t n = uniform_size(rng, 2, 8), steps = 200;
    const Matrix t_trs = scaled_to_norm(gaussian_matrix(n, n, rng), 0.9);
    const Matrix t_com = scaled_to_norm(gaussian_matrix(n, n, rng), 0.8);
    const Matrix root = gaussian_matrix(steps, n, rng);
    Matrix com(steps, n);
    com.set_block(0, 0, gaussian_matrix(1, n, rng));
    for (std::size_t t = 0; t + 1 < steps; ++t) {
      const Matrix next = matmul(root.block(t + 1, 0, 1, n), t_trs) * lambda +
                          matmul(com.block(t, 0, 1, n), t_com) * (1.0 - lambda);
      com.set_block(t + 1, 0, next);
    }
    const SideProjection p = fit_side(root, com, lambda, 0.0);
    worst = std::max({worst, relative(max_abs_diff(p.t_trs, t_trs), 1.0), relative(max_abs_diff(p.t_com, t_com), 1.0)});

    const std::size_t r = uniform_size(rng, 2, 6), r_star = uniform_size(rng, 1, r), rows = 30;
    const Matrix h_trs = gaussian_matrix(r, r_star, rng), h_com = gaussian_matrix(r_star, r_star, rng);
    const Matrix q_root = gaussian_matrix(rows, r, rng), q_prev = gaussian_matrix(rows, r_star, rng);
    const Matrix q_com = matmul(q_root, h_trs) * lambda + matmul(q_prev, h_com) * (1.0 - lambda);
    const StateProjection sp = fit_states(q_root, q_prev, q_com, lambda, 0.0);
    worst = std::max({worst, max_abs_diff(sp.h_trs, h_trs), max_abs_diff(sp.h_com, h_com)});
  }
  auto c = make("projection_recovery", "fitted projections recover planted generators", worst, 1e-6, n_trials);
  c.detail = "max abs generator error";
  return c;
}

CheckResult check_policy_budget(const VerifyOptions& opts) {
  const ModelShape shape{4, 32, 64};
  std::size_t failures = 0, count = 0;
  for (double ratio : {0.25, 0.5, 0.75}) {
    for (PolicyFamily fam : {PolicyFamily::None, PolicyFamily::AdjacentSameKind, PolicyFamily::AdjacentCrossKind,
                             PolicyFamily::HybridBank}) {
      for (const Policy& p : enumerate_policies(shape, fam, ratio)) {
        ++count;
        if (!(parse_policy(render_policy(p), shape) == p)) ++failures;
        if (!(policy_from_json(policy_to_json(p), shape) == p)) ++failures;
        if (!rank_for_budget(p, shape).within_budget()) ++failures;
      }
    }
  }
  (void)opts;
  auto c = make("policy_budget", "policy round-trip and parameter audit", static_cast<double>(failures), 0.0, count);
  c.detail = "failed round-trips or budget audits";
  return c;
}

VerifyReport verify_suite(const VerifyOptions& opts) {
  VerifyReport r;
  r.level = opts.level;
  using Check = CheckResult (*)(const VerifyOptions&);
  const std::pair<const char*, Check> all[] = {
      {"exact_realization", check_exact_realization},
      {"eckart_young", check_eckart_young},
      {"iss", check_iss},
      {"loss_gap", check_loss_gap},
      {"external_potential", check_external_potential},
      {"delay_compilation", check_delay_compilation},
      {"sharing", check_sharing},
      {"metric_reparameterization", check_metric_reparameterization},
      {"universality", check_universality},
      {"gradients", check_gradients},
      {"init_identities", check_init_identities},
      {"projection_recovery", check_projection_recovery},
      {"policy_budget", check_policy_budget},
  };
  for (const auto& [id, fn] : all) {
    try {
      r.checks.push_back(fn(opts));
    } catch (const Error& e) {
      CheckResult c;
      c.id = id;
      c.name = "raised an error";
      c.detail = e.what();
      r.checks.push_back(c);
    }
  }
  return r;
}

std::string verify_report_json(const VerifyReport& report) {
  nlohmann::json j;
  j["schema_version"] = "1";
  j["level"] = report.level == VerifyLevel::Full ? "full" : "fast";
  j["passed"] = report.passed();
  j["checks"] = nlohmann::json::array();
  for (const auto& c : report.checks) {
    j["checks"].push_back({{"id", c.id},
                           {"name", c.name},
                           {"passed", c.passed},
                           {"value", c.value},
                           {"limit", c.limit},
                           {"trials", c.trials},
                           {"detail", c.detail}});
  }
  return j.dump(2) + "\n";
}

}  // namespace ngc
