#pragma once

// Tree-detection network: bidirectional convolutional GRU encoder, feature
// pyramid attention decoder, two conv blocks (batch renorm, csSE, DropBlock),
// and a hypercolumn sigmoid head.
//
// Inputs are [T, H, W, C] tensors, feature maps [H, W, C], outputs [H, W]
// probabilities. Any T >= 1 is accepted; H, W >= 8.

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include <json.hpp>

#include "tof/nn/params.hpp"
#include "tof/raster.hpp"

namespace tof {

struct NetConfig {
  int input_channels = kNumChannels;
  int hidden_per_direction = 32;
  int fpa_width = 32;
  int conv_block_width = 32;
  double zoneout_prob = 0.2;
  double dropblock_max = 0.2;
  int dropblock_block = 3;
  double head_prior = 0.01;
  double head_init_std = 0.01;
  double renorm_momentum = 0.99;
  double renorm_eps = 1e-3;
  double layer_norm_eps = 1e-5;

  void validate() const;
  friend bool operator==(const NetConfig&, const NetConfig&) = default;
};

void to_json(nlohmann::json& j, const NetConfig& c);
void from_json(const nlohmann::json& j, NetConfig& c);

enum class Mode { train, eval };

/// Per-call switches. Stochastic layers act only in train mode; their masks
/// are drawn from `noise_seed` and the sample's index within the batch.
struct ForwardOptions {
  Mode mode = Mode::eval;
  double dropblock_prob = 0.0;
  double rmax = 1.0;
  double dmax = 0.0;
  std::uint64_t noise_seed = 0;
  std::optional<double> zoneout_override;  // test hook
  bool neutral_se = false;                 // test hook: every SE gate fixed at 1
};

/// Batch moments of the two conv blocks' pre-normalization activations.
struct RenormStats {
  std::array<std::vector<double>, 2> mean;
  std::array<std::vector<double>, 2> var;
  bool valid = false;
};

struct BatchOutput {
  std::vector<Tensor> probs;
  RenormStats stats;
};

/// Receives (sample index, probabilities) and returns dL/dprobabilities.
using LossGradFn = std::function<Tensor(std::size_t, const Tensor&)>;

class Network {
 public:
  explicit Network(NetConfig config, std::uint64_t seed = 0);
  /// Adopts `params`, whose layout must match the one built for `config`.
  Network(NetConfig config, nn::ParamStore params);

  const NetConfig& config() const noexcept { return config_; }
  const nn::ParamStore& params() const noexcept { return params_; }
  nn::ParamStore& params() noexcept { return params_; }

  /// Learnable scalars; running statistics excluded.
  std::size_t param_count() const { return params_.learnable_count(); }
  static std::size_t param_count(const NetConfig& config);

  /// Eval-mode probabilities for one [T, H, W, C] input.
  Tensor predict(const Tensor& input) const;

  BatchOutput forward(const std::vector<const Tensor*>& inputs, const ForwardOptions& opts) const;

  /// Forward pass, loss callback per sample, then backward; gradients are
  /// added to `grads`. Gradient sums are reduced in sample order, so the
  /// result does not depend on the thread count.
  BatchOutput forward_backward(const std::vector<const Tensor*>& inputs, const ForwardOptions& opts,
                               const LossGradFn& loss_grad, nn::Gradients& grads) const;

  /// Moves the renorm running statistics toward the batch moments.
  void commit_running_stats(const RenormStats& stats);

  // Component entry points.

  /// One GRU step of `direction` (0 forward, 1 backward). `mask_seed`
  /// drives zoneout in train mode.
  Tensor gru_cell(int direction, const Tensor& x, const Tensor& h_prev, const ForwardOptions& opts,
                  std::uint64_t mask_seed = 0) const;

  struct CellGradient {
    Tensor h;
    Tensor dx;
    Tensor dh_prev;
  };
  /// gru_cell plus the backward pass for upstream gradient `dh`.
  CellGradient gru_cell_backward(int direction, const Tensor& x, const Tensor& h_prev,
                                 const Tensor& dh, const ForwardOptions& opts,
                                 nn::Gradients& grads, std::uint64_t mask_seed = 0) const;

  /// [T, H, W, C] -> [H, W, 2 * hidden].
  Tensor encode(const Tensor& input, const ForwardOptions& opts,
                std::size_t sample_index = 0) const;
  Tensor fpa_decode(const Tensor& features) const;
  /// Conv block `index` (0 or 1) over a batch of feature maps.
  std::vector<Tensor> conv_block(int index, const std::vector<Tensor>& inputs,
                                 const ForwardOptions& opts) const;

  struct Impl;

 private:
  void build_layout();
  void initialize(std::uint64_t seed);

  NetConfig config_;
  nn::ParamStore params_;
};

}  // namespace tof
