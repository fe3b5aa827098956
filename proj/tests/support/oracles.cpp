#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace oracle {

Dense to_dense(const ngc::Matrix& m) {
  Dense d(m.rows(), std::vector<double>(m.cols()));
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) d[i][j] = m(i, j);
  return d;
}

ngc::Matrix from_dense(const Dense& d) {
  ngc::Matrix m(d.size(), d.front().size());
  for (std::size_t i = 0; i < d.size(); ++i)
    for (std::size_t j = 0; j < d[i].size(); ++j) m(i, j) = d[i][j];
  return m;
}

Dense matmul(const Dense& a, const Dense& b) {
  Dense c(a.size(), std::vector<double>(b.front().size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = 0; k < b.size(); ++k)
      for (std::size_t j = 0; j < b[k].size(); ++j) c[i][j] += a[i][k] * b[k][j];
  return c;
}

Dense transpose(const Dense& a) {
  Dense t(a.front().size(), std::vector<double>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[i].size(); ++j) t[j][i] = a[i][j];
  return t;
}

double frobenius(const Dense& a) {
  double s = 0.0;
  for (const auto& row : a)
    for (double v : row) s += v * v;
  return std::sqrt(s);
}

Dense orthonormal_columns(std::size_t m, std::size_t k, ngc::Rng& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<std::vector<double>> cols;
  while (cols.size() < k) {
    std::vector<double> v(m);
    for (double& x : v) x = g(rng);
    for (int pass = 0; pass < 2; ++pass) {
      for (const auto& c : cols) {
        double p = 0.0;
        for (std::size_t i = 0; i < m; ++i) p += v[i] * c[i];
        for (std::size_t i = 0; i < m; ++i) v[i] -= p * c[i];
      }
    }
    double n = 0.0;
    for (double x : v) n += x * x;
    n = std::sqrt(n);
    if (n < 1e-8) continue;
    for (double& x : v) x /= n;
    cols.push_back(v);
  }
  Dense out(m, std::vector<double>(k));
  for (std::size_t j = 0; j < k; ++j)
    for (std::size_t i = 0; i < m; ++i) out[i][j] = cols[j][i];
  return out;
}

ngc::Matrix planted_spectrum(std::size_t m, std::size_t n, const std::vector<double>& s, ngc::Rng& rng) {
  const std::size_t k = s.size();
  Dense u = orthonormal_columns(m, k, rng);
  const Dense v = orthonormal_columns(n, k, rng);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < k; ++j) u[i][j] *= s[j];
  return from_dense(matmul(u, transpose(v)));
}

double power_sigma_max(const ngc::Matrix& a, std::size_t iterations) {
  const Dense d = to_dense(a);
  const std::size_t n = a.cols();
  std::vector<double> x(n, 1.0), y(a.rows());
  for (std::size_t i = 0; i < n; ++i) x[i] += 0.01 * static_cast<double>(i);
  double lambda = 0.0;
  for (std::size_t it = 0; it < iterations; ++it) {
    for (std::size_t i = 0; i < a.rows(); ++i) {
      y[i] = 0.0;
      for (std::size_t j = 0; j < n; ++j) y[i] += d[i][j] * x[j];
    }
    std::vector<double> z(n, 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i)
      for (std::size_t j = 0; j < n; ++j) z[j] += d[i][j] * y[i];
    double norm = 0.0;
    for (double v : z) norm += v * v;
    norm = std::sqrt(norm);
    if (norm == 0.0) return 0.0;
    lambda = norm;
    for (std::size_t j = 0; j < n; ++j) x[j] = z[j] / norm;
  }
  return std::sqrt(lambda);
}

namespace {

std::vector<double> feature(const std::vector<double>& q, const ngc::Matrix& g, ngc::Activation act) {
  std::vector<double> f(g.cols(), 0.0);
  for (std::size_t c = 0; c < g.cols(); ++c) {
    for (std::size_t k = 0; k < q.size(); ++k) f[c] += q[k] * g(k, c);
    if (act == ngc::Activation::Tanh) f[c] = std::tanh(f[c]);
  }
  return f;
}

}  // namespace

Dense entrywise_reconstruct(const ngc::StateBlock& b) {
  const Dense qo = to_dense(b.q_out), qi = to_dense(b.q_in);
  Dense w(b.n_out(), std::vector<double>(b.n_in(), 0.0));
  for (std::size_t i = 0; i < b.n_out(); ++i) {
    for (std::size_t j = 0; j < b.n_in(); ++j) {
      std::vector<double> fl = qo[i], fr = qi[j];
      if (b.metric.kind != ngc::MetricKind::DotProduct) {
        fl = feature(qo[i], b.metric.g_left, b.metric.activation);
        fr = feature(qi[j], b.metric.kind == ngc::MetricKind::Bilinear ? b.metric.g_right : b.metric.g_left,
                     b.metric.activation);
      }
      for (std::size_t k = 0; k < fl.size(); ++k) w[i][j] += fl[k] * fr[k];
    }
  }
  return w;
}

namespace {

// rows of x times wᵀ: y[t][i] = Σ_j x[t][j]·w[i][j]
Dense linear(const Dense& x, const Dense& w) {
  Dense y(x.size(), std::vector<double>(w.size(), 0.0));
  for (std::size_t t = 0; t < x.size(); ++t)
    for (std::size_t i = 0; i < w.size(); ++i)
      for (std::size_t j = 0; j < w[i].size(); ++j) y[t][i] += x[t][j] * w[i][j];
  return y;
}

}  // namespace

Dense reference_forward(const ngc::RootModel& m, const std::vector<int>& tokens) {
  const std::size_t T = tokens.size(), d = m.config.d_model;
  const Dense tok = to_dense(m.tok_emb), pos = to_dense(m.pos_emb);
  Dense h(T, std::vector<double>(d));
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t j = 0; j < d; ++j) h[t][j] = tok[tokens[t]][j] + pos[t][j];
  for (std::size_t l = 0; l < m.config.layers; ++l) {
    auto w = [&](ngc::BlockKind k) { return to_dense(m.weights.at({l, k})); };
    const Dense q = linear(h, w(ngc::BlockKind::Q)), k = linear(h, w(ngc::BlockKind::K)),
                v = linear(h, w(ngc::BlockKind::V));
    Dense att(T, std::vector<double>(d, 0.0));
    for (std::size_t t = 0; t < T; ++t) {
      std::vector<double> score(t + 1);
      double mx = -1e300;
      for (std::size_t s = 0; s <= t; ++s) {
        double dotp = 0.0;
        for (std::size_t j = 0; j < d; ++j) dotp += q[t][j] * k[s][j];
        score[s] = dotp / std::sqrt(static_cast<double>(d));
        mx = std::max(mx, score[s]);
      }
      double z = 0.0;
      for (double& sc : score) z += (sc = std::exp(sc - mx));
      for (std::size_t s = 0; s <= t; ++s)
        for (std::size_t j = 0; j < d; ++j) att[t][j] += score[s] / z * v[s][j];
    }
    const Dense o = linear(att, w(ngc::BlockKind::O));
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t j = 0; j < d; ++j) h[t][j] += o[t][j];
    Dense u = linear(h, w(ngc::BlockKind::UP));
    for (auto& row : u)
      for (double& x : row) x = x > 0.0 ? x : 0.0;
    const Dense mlp = linear(u, w(ngc::BlockKind::DOWN));
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t j = 0; j < d; ++j) h[t][j] += mlp[t][j];
  }
  return linear(h, to_dense(m.out_proj));
}

Dense delayed_hold_link(const Dense& z, std::size_t delay, std::size_t hold) {
  Dense y(z.size(), std::vector<double>(z.front().size(), 0.0));
  for (std::size_t t = 0; t < z.size(); ++t) {
    const std::size_t s = t - t % hold;
    if (s >= delay) y[t] = z[s - delay];
  }
  return y;
}

Dense step_loop_updates(const Dense& root, const Dense& t_trs, const Dense& t_com, double lambda,
                        const std::vector<double>& a0, const Dense& disturbances) {
  const std::size_t n = a0.size();
  Dense com(root.size(), std::vector<double>(n, 0.0));
  com[0] = a0;
  for (std::size_t t = 0; t + 1 < root.size(); ++t) {
    for (std::size_t j = 0; j < n; ++j) {
      double v = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        v += lambda * root[t + 1][i] * t_trs[i][j] + (1.0 - lambda) * com[t][i] * t_com[i][j];
      if (t < disturbances.size()) v += disturbances[t][j];
      com[t + 1][j] = v;
    }
  }
  return com;
}

namespace {

std::vector<double> step(const std::vector<double>& e, const Dense& m, const std::vector<double>& d) {
  std::vector<double> out(d);
  for (std::size_t j = 0; j < out.size(); ++j)
    for (std::size_t i = 0; i < e.size(); ++i) out[j] += e[i] * m[i][j];
  return out;
}

double norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace

std::vector<double> step_loop_deviation(const std::vector<Dense>& m_a, const std::vector<Dense>& m_q,
                                        const std::vector<std::vector<double>>& d_a,
                                        const std::vector<std::vector<double>>& d_q, std::vector<double> e_a,
                                        std::vector<double> e_q) {
  std::vector<double> dev{std::max(norm(e_a), norm(e_q))};
  for (std::size_t t = 0; t < m_a.size(); ++t) {
    e_a = step(e_a, m_a[t], d_a[t]);
    e_q = step(e_q, m_q[t], d_q[t]);
    dev.push_back(std::max(norm(e_a), norm(e_q)));
  }
  return dev;
}

double spearman_no_ties(const std::vector<double>& a, const std::vector<double>& b) {
  auto ranks = [](const std::vector<double>& v) {
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
      std::size_t below = 0;
      for (double x : v) below += x < v[i];
      r[i] = static_cast<double>(below + 1);
    }
    return r;
  };
  const auto ra = ranks(a), rb = ranks(b);
  double d2 = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d2 += (ra[i] - rb[i]) * (ra[i] - rb[i]);
  const double n = static_cast<double>(a.size());
  return 1.0 - 6.0 * d2 / (n * (n * n - 1.0));
}

}  // namespace oracle
