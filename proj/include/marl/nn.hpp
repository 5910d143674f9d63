#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace marl::nn {

struct ShapeMismatch : std::runtime_error {
  explicit ShapeMismatch(const std::string& what) : std::runtime_error(what) {}
};
struct NonFiniteLoss : std::runtime_error {
  explicit NonFiniteLoss(const std::string& what) : std::runtime_error(what) {}
};
struct CheckpointLoadError : std::runtime_error {
  explicit CheckpointLoadError(const std::string& what) : std::runtime_error(what) {}
};

// One tanh hidden layer with separate linear policy and value heads. Small
// enough that every gradient below is derived and checked by hand.
struct NetSpec {
  int obs_dim = 0;
  int hidden_dim = 64;
  int num_actions = 0;

  bool operator==(const NetSpec&) const = default;
};

// The six trainable arrays, row-major. Shared shape container for weights,
// gradients and optimizer moments.
struct Tensors {
  std::vector<float> w1;    // hidden x obs
  std::vector<float> b1;    // hidden
  std::vector<float> w_pi;  // actions x hidden
  std::vector<float> b_pi;  // actions
  std::vector<float> w_v;   // 1 x hidden
  std::vector<float> b_v;   // 1

  std::array<std::vector<float>*, 6> fields() {
    return {&w1, &b1, &w_pi, &b_pi, &w_v, &b_v};
  }
  std::array<const std::vector<float>*, 6> fields() const {
    return {&w1, &b1, &w_pi, &b_pi, &w_v, &b_v};
  }

  bool operator==(const Tensors&) const = default;
};

Tensors zeros_like(const NetSpec& spec);

// Immutable once published: workers receive snapshots by value / shared_ptr
// and never mutate them. `version` counts optimizer steps.
struct Params : Tensors {
  NetSpec spec;
  uint64_t version = 0;

  bool operator==(const Params&) const = default;
};

struct OptState {
  Tensors m;  // first moment
  Tensors v;  // second moment
  int64_t t = 0;
};

// Glorot-uniform weights (|w| <= sqrt(6/(fan_in+fan_out))), zero biases,
// version 0. Deterministic per seed.
Params init_params(const NetSpec& spec, uint64_t seed);
OptState init_opt_state(const NetSpec& spec);

struct ForwardOut {
  std::vector<float> logits;
  float value = 0.0f;
};

// Pure: logits and state value for one observation. Math runs in double
// internally; outputs are rounded to f32 once at the end.
ForwardOut forward(const Params& params, const std::vector<float>& obs);

// Numerically stable softmax / log-softmax over f32 logits, computed in
// double precision.
std::vector<double> softmax(const std::vector<float>& logits);
std::vector<double> log_softmax(const std::vector<float>& logits);
double entropy(const std::vector<double>& probs);

// Inverse-CDF sampling: one uniform draw from `rng`, then a cumulative walk
// over softmax probabilities. log_prob is the exact log-softmax entry.
struct ActionSample {
  int action = 0;
  float log_prob = 0.0f;
};
ActionSample sample_action(const std::vector<float>& logits, std::mt19937& rng);

// Per-step loss callback for grad(): receives the network outputs for step t
// and returns that step's loss contribution plus its gradient w.r.t. the
// logits and the value output. grad() owns the backprop through the torso
// and the mean reduction over steps.
struct StepGrad {
  double loss = 0.0;
  std::vector<double> dlogits;
  double dvalue = 0.0;
};
using StepLossFn = std::function<StepGrad(
    size_t t, const std::vector<float>& logits, float value)>;

struct GradOut {
  double loss = 0.0;
  Tensors grads;
};

// Mean-reduced analytic gradients over a batch of observations: loss =
// mean_t loss_t, grads = d loss / d params. Throws NonFiniteLoss when the
// total is not finite.
GradOut grad(const Params& params,
             const std::vector<std::vector<float>>& observations,
             const StepLossFn& step_fn);

// One Adam update (beta1 0.9, beta2 0.999, eps 1e-8, bias correction).
// Bumps params.version by exactly 1.
void adam_step(Params& params, OptState& opt, const Tensors& grads, float lr);

// Checkpoint container: the whole population's params in one file.
// Layout: "MAJX" magic, u16 format version (1), u16 agent count, then per
// agent u32 obs_dim / hidden_dim / num_actions, u64 params version, and the
// six arrays in Tensors field order as little-endian f32.
void save_checkpoint(const std::string& path, const std::vector<Params>& population);
std::vector<Params> load_checkpoint(const std::string& path);

}  // namespace marl::nn
