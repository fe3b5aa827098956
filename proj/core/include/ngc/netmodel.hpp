#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "ngc/block.hpp"
#include "ngc/linalg.hpp"
#include "ngc/policy.hpp"
#include "ngc/task.hpp"

namespace ngc {

/// Toy decoder-only transformer: token plus learned positional embedding,
/// single-head causal attention, ReLU MLP, residual stream, no norms, no
/// biases.
struct ToyConfig {
  std::size_t layers = 2;
  std::size_t d_model = 32;
  std::size_t d_ff = 64;
  std::size_t vocab = 64;
  std::size_t context = 32;
  std::uint64_t seed = 0;

  void validate() const;
  ModelShape shape() const { return {layers, d_model, d_ff}; }

  friend bool operator==(const ToyConfig&, const ToyConfig&) = default;
};

std::string config_to_json(const ToyConfig& cfg);
ToyConfig config_from_json(const std::string& text);

struct RootModel {
  ToyConfig config;
  Matrix tok_emb;   // vocab x d_model
  Matrix pos_emb;   // context x d_model
  Matrix out_proj;  // vocab x d_model
  std::map<BlockId, Matrix> weights;  // N_out x N_in, y = x·Wᵀ

  friend bool operator==(const RootModel&, const RootModel&) = default;
};

/// Seeded initialization; weights ~ N(0, 1/N_in), embeddings ~ N(0, 1).
RootModel init_root(const ToyConfig& cfg);

/// Root topology with the policy's blocks served by neuronal states. The
/// replaced blocks are removed from base.weights.
struct ComModel {
  RootModel base;
  Policy policy;
  SharedStates states;

  std::vector<BlockId> replaced() const;
  std::size_t state_parameter_count() const { return states.parameter_count(); }
  /// Dense parameter count of the replaced blocks.
  std::size_t replaced_dense_count() const;
};

enum class System { Root, Com };
std::string_view to_string(System s);

/// Per block side, the T x N activation rows (row t = token step t).
struct ActivationTrace {
  System system = System::Root;
  std::map<SideKey, Matrix> acts;
  std::vector<int> tokens;

  std::size_t steps() const { return tokens.size(); }
  const Matrix& at(const SideKey& key) const;
  /// Concatenates another trace of the same system along time.
  void append(const ActivationTrace& other);
};

void save_trace(const ActivationTrace& trace, const std::filesystem::path& dir);
ActivationTrace load_trace(const std::filesystem::path& dir);

struct ForwardResult {
  Matrix logits;  // T x vocab
  ActivationTrace trace;
  std::vector<Matrix> attention;  // per layer, T x T causal probabilities
};

/// Throws InvalidToken for out-of-vocab tokens, InvalidInput when the
/// sequence is empty or longer than the context.
ForwardResult forward(const RootModel& model, const std::vector<int>& tokens);
ForwardResult forward(const ComModel& model, const std::vector<int>& tokens);

using NamedTensors = std::map<std::string, Matrix>;

/// Mean cross-entropy over the scored positions of `batch`.
double batch_loss(const RootModel& model, const std::vector<Sample>& batch);
double batch_loss(const ComModel& model, const std::vector<Sample>& batch);

/// Loss and gradients of every root parameter ("tok_emb", "pos_emb",
/// "out_proj", "L0.Q", ...).
double loss_and_gradients(const RootModel& model, const std::vector<Sample>& batch, NamedTensors& grads);
/// Loss and gradients of the trainable com parameters only: "state.<i>"
/// and "metric.<block>.g_left" / "metric.<block>.g_right".
double loss_and_gradients(const ComModel& model, const std::vector<Sample>& batch, NamedTensors& grads);

/// Mutable views of the same names, for optimizers and finite-difference
/// checks.
std::map<std::string, Matrix*> parameters(RootModel& model);
std::map<std::string, Matrix*> trainable_parameters(ComModel& model);

struct TrainOptions {
  std::size_t steps = 3000;
  std::size_t batch = 16;
  double lr = 3e-3;  // Adam
  std::uint64_t seed = 7;
  std::size_t eval_samples = 512;
};

struct TrainResult {
  RootModel model;
  double accuracy = 0.0;  // on fresh samples after training
  std::vector<double> loss;
};

/// Deterministic given cfg.seed and opts.seed. Throws TrainingDiverged on a
/// non-finite loss.
TrainResult train_root(const ToyConfig& cfg, const TaskSpec& task, const TrainOptions& opts);

/// Throws PolicyMismatch unless `states` binds exactly the policy's blocks.
ComModel replace_blocks(const RootModel& root, const Policy& policy, SharedStates states);
/// Standalone form: one StateBlock per replaced block. Members of a merge
/// set must agree on the shared side (the widest member's matrix is kept).
ComModel replace_blocks(const RootModel& root, const Policy& policy, const std::map<BlockId, StateBlock>& blocks);

struct FinetuneOptions {
  std::size_t steps = 1000;
  std::size_t batch = 16;
  double lr = 0.05;  // plain gradient descent
  double clip = 1.0;  // global gradient-norm clip
  std::uint64_t seed = 11;
};

struct FinetuneResult {
  ComModel model;
  std::vector<double> loss;
};

/// Updates only state matrices and metric parameters.
FinetuneResult finetune_states(const ComModel& com, const TaskSpec& task, const FinetuneOptions& opts);

using Predictor = std::function<std::vector<int>(const std::vector<int>& tokens)>;

/// Token-level exact-match accuracy over the scored positions of
/// `n_samples` generated instances.
double eval_task(const Predictor& predict, const TaskSpec& task, std::size_t n_samples, std::uint64_t seed);
double eval_task(const RootModel& model, const TaskSpec& task, std::size_t n_samples, std::uint64_t seed);
double eval_task(const ComModel& model, const TaskSpec& task, std::size_t n_samples, std::uint64_t seed);

/// Runs whole task sequences until at least `min_tokens` steps are recorded
/// and concatenates their traces.
ActivationTrace capture(const RootModel& model, const TaskSpec& task, std::size_t min_tokens, std::uint64_t seed);
ActivationTrace capture(const ComModel& model, const TaskSpec& task, std::size_t min_tokens, std::uint64_t seed);

/// Checkpoints: a directory of NGCT tensors plus manifest.json.
void save_root(const RootModel& model, const std::filesystem::path& dir);
RootModel load_root(const std::filesystem::path& dir);
void save_com(const ComModel& model, const std::filesystem::path& dir);
ComModel load_com(const std::filesystem::path& dir);

}  // namespace ngc
