#include "ngc/netmodel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "ngc/error.hpp"
#include "ngc/rng.hpp"
#include "ngc/tensor_io.hpp"

namespace ngc {
namespace {

using nlohmann::json;

constexpr std::array<BlockKind, 6> kLayerKinds = kAllBlockKinds;

struct LayerCache {
  Matrix x, q, k, v, p, a, o, h1, u, g, m;
};

struct SequenceCache {
  std::vector<int> tokens;
  std::vector<LayerCache> layers;
  Matrix h;  // final residual stream
  Matrix logits;
};

// Serves every block either from its dense weight or from a neuronal-state
// view; features of the views are computed once per engine.
class Engine {
 public:
  explicit Engine(const RootModel& m) : base_(m) {}
  explicit Engine(const ComModel& c) : base_(c.base) {
    for (const auto& [id, binding] : c.states.bindings) {
      View v{c.states.view(id), {}, {}};
      v.fl = left_features(v.block);
      v.fr = right_features(v.block);
      views_.emplace(id, std::move(v));
    }
  }

  const RootModel& base() const { return base_; }
  const StateBlock* view(const BlockId& id) const {
    const auto it = views_.find(id);
    return it == views_.end() ? nullptr : &it->second.block;
  }

  Matrix lin(const BlockId& id, const Matrix& x) const {
    if (const auto it = views_.find(id); it != views_.end()) return matmul_nt(matmul(x, it->second.fr), it->second.fl);
    return matmul_nt(x, weight(id));
  }

  // Returns ∂L/∂x and accumulates ∂L/∂Ŵ = dyᵀ·x.
  Matrix lin_back(const BlockId& id, const Matrix& x, const Matrix& dy, std::map<BlockId, Matrix>& d_weights) const {
    Matrix& dw = d_weights[id];
    if (dw.empty()) dw = Matrix(dy.cols(), x.cols());
    dw += matmul_tn(dy, x);
    if (const auto it = views_.find(id); it != views_.end()) return matmul_nt(matmul(dy, it->second.fl), it->second.fr);
    return matmul(dy, weight(id));
  }

 private:
  struct View {
    StateBlock block;
    Matrix fl, fr;
  };

  const Matrix& weight(const BlockId& id) const {
    const auto it = base_.weights.find(id);
    require(it != base_.weights.end(), ErrorCode::UnknownBlock, "model has no weight " + id.name());
    return it->second;
  }

  const RootModel& base_;
  std::map<BlockId, View> views_;
};

void check_tokens(const ToyConfig& cfg, const std::vector<int>& tokens) {
  require(!tokens.empty(), ErrorCode::InvalidInput, "empty token sequence");
  require(tokens.size() <= cfg.context, ErrorCode::InvalidInput,
          "sequence length " + std::to_string(tokens.size()) + " exceeds context " + std::to_string(cfg.context));
  for (int t : tokens)
    require(t >= 0 && static_cast<std::size_t>(t) < cfg.vocab, ErrorCode::InvalidToken,
            "token " + std::to_string(t) + " outside vocab");
}

void relu(Matrix& m) {
  for (double& v : m.values()) v = std::max(v, 0.0);
}

// Causal softmax of q·kᵀ/√d; masked entries are exactly zero.
Matrix attention_probabilities(const Matrix& q, const Matrix& k) {
  const std::size_t t_len = q.rows();
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  Matrix p = matmul_nt(q, k);
  for (std::size_t i = 0; i < t_len; ++i) {
    auto row = p.row(i);
    double mx = row[0] * scale;
    for (std::size_t j = 0; j <= i; ++j) mx = std::max(mx, row[j] * scale);
    double sum = 0.0;
    for (std::size_t j = 0; j <= i; ++j) {
      row[j] = std::exp(row[j] * scale - mx);
      sum += row[j];
    }
    for (std::size_t j = 0; j <= i; ++j) row[j] /= sum;
    for (std::size_t j = i + 1; j < t_len; ++j) row[j] = 0.0;
  }
  return p;
}

SequenceCache run_forward(const Engine& e, const std::vector<int>& tokens) {
  const RootModel& m = e.base();
  check_tokens(m.config, tokens);
  const std::size_t t_len = tokens.size();
  const std::size_t d = m.config.d_model;
  SequenceCache c;
  c.tokens = tokens;
  Matrix h(t_len, d);
  for (std::size_t t = 0; t < t_len; ++t) {
    auto row = h.row(t);
    const auto te = m.tok_emb.row(static_cast<std::size_t>(tokens[t]));
    const auto pe = m.pos_emb.row(t);
    for (std::size_t j = 0; j < d; ++j) row[j] = te[j] + pe[j];
  }
  c.layers.resize(m.config.layers);
  for (std::size_t l = 0; l < m.config.layers; ++l) {
    LayerCache& lc = c.layers[l];
    lc.x = h;
    lc.q = e.lin({l, BlockKind::Q}, lc.x);
    lc.k = e.lin({l, BlockKind::K}, lc.x);
    lc.v = e.lin({l, BlockKind::V}, lc.x);
    lc.p = attention_probabilities(lc.q, lc.k);
    lc.a = matmul(lc.p, lc.v);
    lc.o = e.lin({l, BlockKind::O}, lc.a);
    lc.h1 = lc.x + lc.o;
    lc.u = e.lin({l, BlockKind::UP}, lc.h1);
    lc.g = lc.u;
    relu(lc.g);
    lc.m = e.lin({l, BlockKind::DOWN}, lc.g);
    h = lc.h1 + lc.m;
  }
  c.h = h;
  c.logits = matmul_nt(h, m.out_proj);
  return c;
}

ActivationTrace trace_of(const SequenceCache& c, System system) {
  ActivationTrace tr;
  tr.system = system;
  tr.tokens = c.tokens;
  for (std::size_t l = 0; l < c.layers.size(); ++l) {
    const LayerCache& lc = c.layers[l];
    auto put = [&](BlockKind k, const Matrix& in, const Matrix& out) {
      tr.acts[{{l, k}, Side::In}] = in;
      tr.acts[{{l, k}, Side::Out}] = out;
    };
    put(BlockKind::Q, lc.x, lc.q);
    put(BlockKind::K, lc.x, lc.k);
    put(BlockKind::V, lc.x, lc.v);
    put(BlockKind::O, lc.a, lc.o);
    put(BlockKind::UP, lc.h1, lc.u);
    put(BlockKind::DOWN, lc.g, lc.m);
  }
  return tr;
}

ForwardResult make_result(const SequenceCache& c, System system) {
  ForwardResult r;
  r.logits = c.logits;
  r.trace = trace_of(c, system);
  for (const auto& lc : c.layers) r.attention.push_back(lc.p);
  return r;
}

struct RawGradients {
  Matrix tok_emb, pos_emb, out_proj;
  std::map<BlockId, Matrix> weights;  // ∂L/∂Ŵ for every block, dense or replaced
};

std::size_t scored_count(const std::vector<Sample>& batch) {
  std::size_t n = 0;
  for (const auto& s : batch)
    for (int t : s.targets) n += t != kUnscored;
  require(n > 0, ErrorCode::InvalidInput, "batch has no scored positions");
  return n;
}

// Adds this sequence's share of the mean cross-entropy and, when `grads` is
// set, back-propagates it.
double sequence_loss(const Engine& e, const Sample& s, double weight, RawGradients* grads) {
  const SequenceCache c = run_forward(e, s.tokens);
  const RootModel& m = e.base();
  const std::size_t t_len = s.tokens.size();
  const std::size_t vocab = m.config.vocab;
  Matrix dlogits(t_len, vocab);
  double loss = 0.0;
  for (std::size_t t = 0; t < t_len; ++t) {
    const int target = s.targets[t];
    if (target == kUnscored) continue;
    require(target >= 0 && static_cast<std::size_t>(target) < vocab, ErrorCode::InvalidToken, "target outside vocab");
    const auto row = c.logits.row(t);
    const double mx = *std::max_element(row.begin(), row.end());
    double sum = 0.0;
    for (double v : row) sum += std::exp(v - mx);
    const double log_z = mx + std::log(sum);
    loss += weight * (log_z - row[static_cast<std::size_t>(target)]);
    auto drow = dlogits.row(t);
    for (std::size_t j = 0; j < vocab; ++j) drow[j] = weight * std::exp(row[j] - log_z);
    drow[static_cast<std::size_t>(target)] -= weight;
  }
  if (!grads) return loss;

  const std::size_t d = m.config.d_model;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  grads->out_proj += matmul_tn(dlogits, c.h);
  Matrix dh = matmul(dlogits, m.out_proj);
  for (std::size_t l = m.config.layers; l-- > 0;) {
    const LayerCache& lc = c.layers[l];
    Matrix dg = e.lin_back({l, BlockKind::DOWN}, lc.g, dh, grads->weights);
    for (std::size_t i = 0; i < dg.size(); ++i)
      if (lc.u.values()[i] <= 0.0) dg.values()[i] = 0.0;
    Matrix dh1 = dh + e.lin_back({l, BlockKind::UP}, lc.h1, dg, grads->weights);
    const Matrix da = e.lin_back({l, BlockKind::O}, lc.a, dh1, grads->weights);
    const Matrix dp = matmul_nt(da, lc.v);
    const Matrix dv = matmul_tn(lc.p, da);
    Matrix ds(t_len, t_len);
    for (std::size_t i = 0; i < t_len; ++i) {
      double inner = 0.0;
      for (std::size_t j = 0; j <= i; ++j) inner += dp(i, j) * lc.p(i, j);
      for (std::size_t j = 0; j <= i; ++j) ds(i, j) = lc.p(i, j) * (dp(i, j) - inner) * scale;
    }
    const Matrix dq = matmul(ds, lc.k);
    const Matrix dk = matmul_tn(ds, lc.q);
    Matrix dx = dh1;
    dx += e.lin_back({l, BlockKind::Q}, lc.x, dq, grads->weights);
    dx += e.lin_back({l, BlockKind::K}, lc.x, dk, grads->weights);
    dx += e.lin_back({l, BlockKind::V}, lc.x, dv, grads->weights);
    dh = std::move(dx);
  }
  for (std::size_t t = 0; t < t_len; ++t) {
    auto te = grads->tok_emb.row(static_cast<std::size_t>(s.tokens[t]));
    auto pe = grads->pos_emb.row(t);
    const auto g = dh.row(t);
    for (std::size_t j = 0; j < d; ++j) {
      te[j] += g[j];
      pe[j] += g[j];
    }
  }
  return loss;
}

double engine_loss(const Engine& e, const std::vector<Sample>& batch, RawGradients* grads) {
  const double weight = 1.0 / static_cast<double>(scored_count(batch));
  if (grads) {
    const RootModel& m = e.base();
    grads->tok_emb = Matrix(m.tok_emb.rows(), m.tok_emb.cols());
    grads->pos_emb = Matrix(m.pos_emb.rows(), m.pos_emb.cols());
    grads->out_proj = Matrix(m.out_proj.rows(), m.out_proj.cols());
    grads->weights.clear();
  }
  double loss = 0.0;
  for (const auto& s : batch) loss += sequence_loss(e, s, weight, grads);
  return loss;
}

std::vector<Sample> sample_batch(const TaskSpec& task, std::size_t n, Rng& rng) {
  std::vector<Sample> batch;
  batch.reserve(n);
  for (std::size_t i = 0; i < n; ++i) batch.push_back(sample_task(task, rng));
  return batch;
}

void check_task_fits(const ToyConfig& cfg, const TaskSpec& task) {
  task.validate();
  require(task.vocab <= cfg.vocab, ErrorCode::InvalidInput, "task vocab exceeds model vocab");
  require(task.length <= cfg.context, ErrorCode::InvalidInput, "task length exceeds model context");
}

std::vector<int> argmax_rows(const Matrix& logits) {
  std::vector<int> out(logits.rows());
  for (std::size_t t = 0; t < logits.rows(); ++t) {
    const auto row = logits.row(t);
    out[t] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

std::string metric_param_name(const BlockId& id, const char* which) {
  return "metric." + id.name() + "." + which;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorCode::IoError, "cannot write " + path.string());
  out << text;
  require(static_cast<bool>(out), ErrorCode::IoError, "write failed for " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::IoError, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json parse_json_file(const std::filesystem::path& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::exception& e) {
    fail(ErrorCode::IoError, path.string() + ": " + e.what());
  }
}

void save_backbone(const RootModel& m, const std::filesystem::path& dir, json& manifest) {
  std::filesystem::create_directories(dir);
  manifest["config"] = json::parse(config_to_json(m.config));
  write_matrix(dir / "tok_emb.ngct", m.tok_emb);
  write_matrix(dir / "pos_emb.ngct", m.pos_emb);
  write_matrix(dir / "out_proj.ngct", m.out_proj);
  manifest["blocks"] = json::array();
  for (const auto& [id, w] : m.weights) {
    manifest["blocks"].push_back(id.name());
    write_matrix(dir / (id.name() + ".ngct"), w);
  }
}

RootModel load_backbone(const std::filesystem::path& dir, const json& manifest) {
  RootModel m;
  m.config = config_from_json(manifest.at("config").dump());
  m.tok_emb = read_matrix(dir / "tok_emb.ngct");
  m.pos_emb = read_matrix(dir / "pos_emb.ngct");
  m.out_proj = read_matrix(dir / "out_proj.ngct");
  for (const auto& name : manifest.at("blocks")) {
    const auto id = parse_block_id(name.get<std::string>());
    require(id.has_value(), ErrorCode::IoError, "bad block name in manifest");
    m.weights[*id] = read_matrix(dir / (id->name() + ".ngct"));
  }
  return m;
}

}  // namespace

void ToyConfig::validate() const {
  require(layers >= 1 && d_model >= 1 && d_ff >= 1 && vocab >= 1 && context >= 1, ErrorCode::InvalidInput,
          "toy config counts must be >= 1");
}

std::string config_to_json(const ToyConfig& cfg) {
  json j{{"layers", cfg.layers}, {"d_model", cfg.d_model}, {"d_ff", cfg.d_ff},
         {"vocab", cfg.vocab},   {"context", cfg.context}, {"seed", cfg.seed}};
  return j.dump();
}

ToyConfig config_from_json(const std::string& text) {
  try {
    const auto j = json::parse(text);
    ToyConfig c;
    c.layers = j.value("layers", c.layers);
    c.d_model = j.value("d_model", c.d_model);
    c.d_ff = j.value("d_ff", c.d_ff);
    c.vocab = j.value("vocab", c.vocab);
    c.context = j.value("context", c.context);
    c.seed = j.value("seed", c.seed);
    c.validate();
    return c;
  } catch (const json::exception& e) {
    fail(ErrorCode::ParseError, std::string("config json: ") + e.what());
  }
}

RootModel init_root(const ToyConfig& cfg) {
  cfg.validate();
  RootModel m;
  m.config = cfg;
  Rng rng = make_rng(cfg.seed, 0x726f6f74);
  const double d = static_cast<double>(cfg.d_model);
  m.tok_emb = gaussian_matrix(cfg.vocab, cfg.d_model, rng, 1.0);
  m.pos_emb = gaussian_matrix(cfg.context, cfg.d_model, rng, 1.0);
  m.out_proj = gaussian_matrix(cfg.vocab, cfg.d_model, rng, 1.0 / std::sqrt(d));
  const ModelShape shape = cfg.shape();
  for (std::size_t l = 0; l < cfg.layers; ++l)
    for (BlockKind k : kLayerKinds) {
      const BlockDims dims = shape.dims(k);
      m.weights[{l, k}] = gaussian_matrix(dims.n_out, dims.n_in, rng, 1.0 / std::sqrt(static_cast<double>(dims.n_in)));
    }
  return m;
}

std::vector<BlockId> ComModel::replaced() const {
  std::vector<BlockId> out;
  for (const auto& [id, b] : states.bindings) out.push_back(id);
  return out;
}

std::size_t ComModel::replaced_dense_count() const {
  const ModelShape shape = base.config.shape();
  std::size_t n = 0;
  for (const auto& id : replaced()) {
    const BlockDims d = shape.dims(id.kind);
    n += d.n_out * d.n_in;
  }
  return n;
}

std::string_view to_string(System s) { return s == System::Root ? "root" : "com"; }

const Matrix& ActivationTrace::at(const SideKey& key) const {
  const auto it = acts.find(key);
  require(it != acts.end(), ErrorCode::UnknownBlock, "trace has no " + key.name());
  return it->second;
}

void ActivationTrace::append(const ActivationTrace& other) {
  if (tokens.empty()) {
    *this = other;
    return;
  }
  require(system == other.system, ErrorCode::InvalidInput, "cannot append traces of different systems");
  for (auto& [key, m] : acts) m = vstack(m, other.at(key));
  tokens.insert(tokens.end(), other.tokens.begin(), other.tokens.end());
}

void save_trace(const ActivationTrace& trace, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json j;
  j["system"] = std::string(to_string(trace.system));
  j["tokens"] = trace.tokens;
  j["sides"] = json::array();
  for (const auto& [key, m] : trace.acts) {
    j["sides"].push_back(key.name());
    write_matrix(dir / (key.name() + ".ngct"), m);
  }
  write_text(dir / "trace.json", j.dump(2));
}

ActivationTrace load_trace(const std::filesystem::path& dir) {
  const json j = parse_json_file(dir / "trace.json");
  ActivationTrace tr;
  try {
    tr.system = j.at("system").get<std::string>() == "com" ? System::Com : System::Root;
    tr.tokens = j.at("tokens").get<std::vector<int>>();
    for (const auto& name : j.at("sides")) {
      const auto key = parse_side_key(name.get<std::string>());
      require(key.has_value(), ErrorCode::IoError, "bad side name in trace.json");
      tr.acts[*key] = read_matrix(dir / (key->name() + ".ngct"));
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::IoError, std::string("trace.json: ") + e.what());
  }
  return tr;
}

ForwardResult forward(const RootModel& model, const std::vector<int>& tokens) {
  return make_result(run_forward(Engine(model), tokens), System::Root);
}

ForwardResult forward(const ComModel& model, const std::vector<int>& tokens) {
  return make_result(run_forward(Engine(model), tokens), System::Com);
}

double batch_loss(const RootModel& model, const std::vector<Sample>& batch) {
  return engine_loss(Engine(model), batch, nullptr);
}

double batch_loss(const ComModel& model, const std::vector<Sample>& batch) {
  return engine_loss(Engine(model), batch, nullptr);
}

double loss_and_gradients(const RootModel& model, const std::vector<Sample>& batch, NamedTensors& grads) {
  RawGradients raw;
  const double loss = engine_loss(Engine(model), batch, &raw);
  grads.clear();
  grads["tok_emb"] = std::move(raw.tok_emb);
  grads["pos_emb"] = std::move(raw.pos_emb);
  grads["out_proj"] = std::move(raw.out_proj);
  for (auto& [id, g] : raw.weights) grads[id.name()] = std::move(g);
  return loss;
}

double loss_and_gradients(const ComModel& model, const std::vector<Sample>& batch, NamedTensors& grads) {
  const Engine engine(model);
  RawGradients raw;
  const double loss = engine_loss(engine, batch, &raw);
  grads.clear();
  std::vector<Matrix> state_grads;
  for (const auto& s : model.states.states) state_grads.emplace_back(s.rows(), s.cols());
  for (const auto& [id, binding] : model.states.bindings) {
    const StateGradients g = backprop_weight(*engine.view(id), raw.weights.at(id));
    // A member of a merge set touches only its leading rows.
    Matrix& go = state_grads[binding.out_state];
    Matrix& gi = state_grads[binding.in_state];
    go.set_block(0, 0, go.top_rows(binding.out_rows) + g.q_out);
    gi.set_block(0, 0, gi.top_rows(binding.in_rows) + g.q_in);
    if (!g.g_left.empty()) grads[metric_param_name(id, "g_left")] = g.g_left;
    if (!g.g_right.empty()) grads[metric_param_name(id, "g_right")] = g.g_right;
  }
  for (std::size_t i = 0; i < state_grads.size(); ++i) grads["state." + std::to_string(i)] = std::move(state_grads[i]);
  return loss;
}

std::map<std::string, Matrix*> parameters(RootModel& model) {
  std::map<std::string, Matrix*> out{
      {"tok_emb", &model.tok_emb}, {"pos_emb", &model.pos_emb}, {"out_proj", &model.out_proj}};
  for (auto& [id, w] : model.weights) out[id.name()] = &w;
  return out;
}

std::map<std::string, Matrix*> trainable_parameters(ComModel& model) {
  std::map<std::string, Matrix*> out;
  for (std::size_t i = 0; i < model.states.states.size(); ++i)
    out["state." + std::to_string(i)] = &model.states.states[i];
  for (auto& [id, metric] : model.states.metrics) {
    if (!metric.trainable()) continue;
    out[metric_param_name(id, "g_left")] = &metric.g_left;
    if (metric.kind == MetricKind::Bilinear) out[metric_param_name(id, "g_right")] = &metric.g_right;
  }
  return out;
}

TrainResult train_root(const ToyConfig& cfg, const TaskSpec& task, const TrainOptions& opts) {
  check_task_fits(cfg, task);
  require(opts.batch >= 1, ErrorCode::InvalidInput, "batch must be >= 1");
  TrainResult result{init_root(cfg), 0.0, {}};
  RootModel& model = result.model;
  auto params = parameters(model);

  // Adam moments, keyed like the parameters.
  std::map<std::string, Matrix> m1, m2;
  for (const auto& [name, p] : params) {
    m1[name] = Matrix(p->rows(), p->cols());
    m2[name] = Matrix(p->rows(), p->cols());
  }
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  Rng rng = make_rng(opts.seed, 0x747261696e);
  NamedTensors grads;
  result.loss.reserve(opts.steps);
  for (std::size_t step = 1; step <= opts.steps; ++step) {
    const auto batch = sample_batch(task, opts.batch, rng);
    const double loss = loss_and_gradients(model, batch, grads);
    require(std::isfinite(loss), ErrorCode::TrainingDiverged, "non-finite loss at step " + std::to_string(step));
    result.loss.push_back(loss);
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(step));
    for (auto& [name, p] : params) {
      auto g = grads.at(name).values();
      auto mv = m1[name].values();
      auto vv = m2[name].values();
      auto pv = p->values();
      for (std::size_t i = 0; i < pv.size(); ++i) {
        mv[i] = b1 * mv[i] + (1.0 - b1) * g[i];
        vv[i] = b2 * vv[i] + (1.0 - b2) * g[i] * g[i];
        pv[i] -= opts.lr * (mv[i] / c1) / (std::sqrt(vv[i] / c2) + eps);
      }
    }
  }
  require(model.tok_emb.all_finite(), ErrorCode::TrainingDiverged, "non-finite weights after training");
  result.accuracy = eval_task(model, task, opts.eval_samples, opts.seed ^ 0x6576616cULL);
  return result;
}

ComModel replace_blocks(const RootModel& root, const Policy& policy, SharedStates states) {
  const auto wanted = policy.replaced_blocks(root.config.shape());
  require(states.bindings.size() == wanted.size(), ErrorCode::PolicyMismatch,
          "states bind " + std::to_string(states.bindings.size()) + " blocks, policy replaces " +
              std::to_string(wanted.size()));
  const ModelShape shape = root.config.shape();
  for (const auto& id : wanted) {
    const auto it = states.bindings.find(id);
    require(it != states.bindings.end(), ErrorCode::PolicyMismatch, "no states for " + id.name());
    require(states.metrics.count(id), ErrorCode::PolicyMismatch, "no metric for " + id.name());
    const BlockDims d = shape.dims(id.kind);
    require(it->second.out_rows == d.n_out && it->second.in_rows == d.n_in, ErrorCode::ShapeError,
            "state rows disagree with " + id.name());
    validate(states.view(id));
  }
  ComModel com{root, policy, std::move(states)};
  for (const auto& id : wanted) com.base.weights.erase(id);
  return com;
}

ComModel replace_blocks(const RootModel& root, const Policy& policy, const std::map<BlockId, StateBlock>& blocks) {
  const auto wanted = policy.replaced_blocks(root.config.shape());
  require(blocks.size() == wanted.size(), ErrorCode::PolicyMismatch, "block count differs from the policy");
  for (const auto& id : wanted) require(blocks.count(id), ErrorCode::PolicyMismatch, "missing block " + id.name());

  SharedStates s;
  std::map<SideKey, std::size_t> shared;
  for (std::size_t m = 0; m < policy.merge_sets.size(); ++m) {
    const auto& set = policy.merge_sets[m];
    auto side_of = [&](const SideKey& k) -> const Matrix& {
      const StateBlock& b = blocks.at(k.block);
      return k.side == Side::In ? b.q_in : b.q_out;
    };
    const SideKey* widest = &set.front();
    for (const auto& k : set)
      if (side_of(k).rows() > side_of(*widest).rows()) widest = &k;
    const Matrix& full = side_of(*widest);
    for (const auto& k : set) {
      const Matrix& mine = side_of(k);
      require(mine.cols() == full.cols() && max_abs_diff(mine, full.top_rows(mine.rows())) == 0.0,
              ErrorCode::PolicyMismatch, k.name() + " disagrees with its merge set");
      shared[k] = s.states.size();
    }
    s.states.push_back(full);
    s.state_names.push_back("set" + std::to_string(m));
  }
  for (const auto& id : wanted) {
    const StateBlock& b = blocks.at(id);
    StateBinding bind{0, 0, b.n_out(), b.n_in()};
    for (Side side : {Side::Out, Side::In}) {
      const SideKey key{id, side};
      std::size_t idx = 0;
      if (const auto it = shared.find(key); it != shared.end()) {
        idx = it->second;
      } else {
        s.states.push_back(side == Side::In ? b.q_in : b.q_out);
        s.state_names.push_back(key.name());
        idx = s.states.size() - 1;
      }
      (side == Side::In ? bind.in_state : bind.out_state) = idx;
    }
    s.bindings[id] = bind;
    s.metrics[id] = b.metric;
  }
  return replace_blocks(root, policy, std::move(s));
}

FinetuneResult finetune_states(const ComModel& com, const TaskSpec& task, const FinetuneOptions& opts) {
  check_task_fits(com.base.config, task);
  require(opts.batch >= 1, ErrorCode::InvalidInput, "batch must be >= 1");
  FinetuneResult result{com, {}};
  ComModel& model = result.model;
  auto params = trainable_parameters(model);
  Rng rng = make_rng(opts.seed, 0x66696e65);
  NamedTensors grads;
  result.loss.reserve(opts.steps);
  for (std::size_t step = 0; step < opts.steps; ++step) {
    const auto batch = sample_batch(task, opts.batch, rng);
    const double loss = loss_and_gradients(model, batch, grads);
    require(std::isfinite(loss), ErrorCode::TrainingDiverged, "non-finite loss at step " + std::to_string(step));
    result.loss.push_back(loss);
    if (opts.lr == 0.0) continue;
    double sq = 0.0;
    for (const auto& [name, g] : grads)
      for (double v : g.values()) sq += v * v;
    const double norm = std::sqrt(sq);
    const double factor = norm > opts.clip ? opts.clip / norm : 1.0;
    for (auto& [name, p] : params) *p -= grads.at(name) * (opts.lr * factor);
  }
  return result;
}

double eval_task(const Predictor& predict, const TaskSpec& task, std::size_t n_samples, std::uint64_t seed) {
  require(n_samples >= 1, ErrorCode::InvalidInput, "n_samples must be >= 1");
  Rng rng = make_rng(seed, 0x6576616c);
  std::size_t hits = 0, total = 0;
  for (std::size_t i = 0; i < n_samples; ++i) {
    const Sample s = sample_task(task, rng);
    const auto pred = predict(s.tokens);
    require(pred.size() == s.tokens.size(), ErrorCode::ShapeError, "predictor returned the wrong length");
    for (std::size_t t = 0; t < s.targets.size(); ++t) {
      if (s.targets[t] == kUnscored) continue;
      ++total;
      hits += pred[t] == s.targets[t];
    }
  }
  return static_cast<double>(hits) / static_cast<double>(total);
}

double eval_task(const RootModel& model, const TaskSpec& task, std::size_t n_samples, std::uint64_t seed) {
  check_task_fits(model.config, task);
  const Engine engine(model);
  return eval_task([&](const std::vector<int>& t) { return argmax_rows(run_forward(engine, t).logits); }, task,
                   n_samples, seed);
}

double eval_task(const ComModel& model, const TaskSpec& task, std::size_t n_samples, std::uint64_t seed) {
  check_task_fits(model.base.config, task);
  const Engine engine(model);
  return eval_task([&](const std::vector<int>& t) { return argmax_rows(run_forward(engine, t).logits); }, task,
                   n_samples, seed);
}

namespace {

template <class Model>
ActivationTrace capture_impl(const Model& model, const ToyConfig& cfg, System system, const TaskSpec& task,
                             std::size_t min_tokens, std::uint64_t seed) {
  check_task_fits(cfg, task);
  require(min_tokens >= 1, ErrorCode::InvalidInput, "capture needs at least one token");
  const Engine engine(model);
  Rng rng = make_rng(seed, 0x63617074);
  ActivationTrace trace;
  trace.system = system;
  while (trace.steps() < min_tokens) {
    const Sample s = sample_task(task, rng);
    trace.append(trace_of(run_forward(engine, s.tokens), system));
  }
  return trace;
}

}  // namespace

ActivationTrace capture(const RootModel& model, const TaskSpec& task, std::size_t min_tokens, std::uint64_t seed) {
  return capture_impl(model, model.config, System::Root, task, min_tokens, seed);
}

ActivationTrace capture(const ComModel& model, const TaskSpec& task, std::size_t min_tokens, std::uint64_t seed) {
  return capture_impl(model, model.base.config, System::Com, task, min_tokens, seed);
}

void save_root(const RootModel& model, const std::filesystem::path& dir) {
  json manifest;
  manifest["kind"] = "root";
  save_backbone(model, dir, manifest);
  write_text(dir / "manifest.json", manifest.dump(2));
}

RootModel load_root(const std::filesystem::path& dir) {
  const json manifest = parse_json_file(dir / "manifest.json");
  try {
    require(manifest.at("kind") == "root", ErrorCode::IoError, dir.string() + " is not a root checkpoint");
    return load_backbone(dir, manifest);
  } catch (const json::exception& e) {
    fail(ErrorCode::IoError, std::string("manifest.json: ") + e.what());
  }
}

void save_com(const ComModel& model, const std::filesystem::path& dir) {
  json manifest;
  manifest["kind"] = "com";
  save_backbone(model.base, dir, manifest);
  manifest["policy"] = json::parse(policy_to_json(model.policy));
  manifest["states"] = model.states.state_names;
  for (std::size_t i = 0; i < model.states.states.size(); ++i)
    write_matrix(dir / ("state." + std::to_string(i) + ".ngct"), model.states.states[i]);
  json bindings = json::object();
  for (const auto& [id, b] : model.states.bindings) {
    const IntraMetric& metric = model.states.metrics.at(id);
    bindings[id.name()] = {{"out_state", b.out_state}, {"in_state", b.in_state},
                           {"out_rows", b.out_rows},   {"in_rows", b.in_rows},
                           {"metric", std::string(to_string(metric.kind))},
                           {"activation", std::string(to_string(metric.activation))}};
    if (metric.trainable()) write_matrix(dir / (metric_param_name(id, "g_left") + ".ngct"), metric.g_left);
    if (metric.kind == MetricKind::Bilinear)
      write_matrix(dir / (metric_param_name(id, "g_right") + ".ngct"), metric.g_right);
  }
  manifest["bindings"] = bindings;
  write_text(dir / "manifest.json", manifest.dump(2));
}

ComModel load_com(const std::filesystem::path& dir) {
  const json manifest = parse_json_file(dir / "manifest.json");
  try {
    require(manifest.at("kind") == "com", ErrorCode::IoError, dir.string() + " is not a com checkpoint");
    ComModel com;
    com.base = load_backbone(dir, manifest);
    com.policy = policy_from_json(manifest.at("policy").dump(), com.base.config.shape());
    com.states.state_names = manifest.at("states").get<std::vector<std::string>>();
    for (std::size_t i = 0; i < com.states.state_names.size(); ++i)
      com.states.states.push_back(read_matrix(dir / ("state." + std::to_string(i) + ".ngct")));
    for (const auto& [name, b] : manifest.at("bindings").items()) {
      const auto id = parse_block_id(name);
      require(id.has_value(), ErrorCode::IoError, "bad block name in bindings");
      com.states.bindings[*id] = {b.at("out_state").get<std::size_t>(), b.at("in_state").get<std::size_t>(),
                                  b.at("out_rows").get<std::size_t>(), b.at("in_rows").get<std::size_t>()};
      IntraMetric metric;
      const std::string kind = b.at("metric").get<std::string>();
      metric.activation = b.at("activation").get<std::string>() == "tanh" ? Activation::Tanh : Activation::Identity;
      if (kind == "bilinear") {
        metric.kind = MetricKind::Bilinear;
        metric.g_left = read_matrix(dir / (metric_param_name(*id, "g_left") + ".ngct"));
        metric.g_right = read_matrix(dir / (metric_param_name(*id, "g_right") + ".ngct"));
      } else if (kind == "shared") {
        metric.kind = MetricKind::SharedBilinear;
        metric.g_left = read_matrix(dir / (metric_param_name(*id, "g_left") + ".ngct"));
      }
      com.states.metrics[*id] = std::move(metric);
    }
    return com;
  } catch (const json::exception& e) {
    fail(ErrorCode::IoError, std::string("manifest.json: ") + e.what());
  }
}

}  // namespace ngc
