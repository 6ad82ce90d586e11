#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "fedscan/gradcheck.hpp"
#include "fedscan/graph.hpp"
#include "fedscan/params.hpp"

namespace fedscan {

inline constexpr int kNumLabels = 6;

/// Label taxonomy, index order fixed: epidural, intraparenchymal,
/// intraventricular, subarachnoid, subdural, any.
inline constexpr int kAnyLabel = 5;

/// Architecture hyperparameters. The encoder is a stack of dense blocks
/// (each layer convolves the concatenation of everything before it in the
/// block and appends growth_rate_k channels), joined by 1x1-conv + 2x2
/// average-pool transitions, finished with a global average pool. The
/// resulting per-slice feature feeds a GRU, and a shared affine head emits
/// one logit per label per slice.
struct ModelConfig {
  int input_hw = 16;
  int slices = 4;
  int growth_rate = 4;
  std::vector<int> block_layout = {2, 2};
  int gru_hidden = 8;
  int num_labels = kNumLabels;

  void validate() const;

  /// Channel count entering block b (b = 0 is the raw slice, 1 channel).
  int channels_into_block(int b) const;

  /// Length F of the encoder output feature vector:
  /// channels after the last dense block.
  int feature_length() const;

  /// Spatial edge length at block b (halved by each earlier transition).
  int spatial_at_block(int b) const;

  /// Canonical one-line description; hashed into checkpoints.
  std::string canonical_string() const;
};

std::uint64_t model_config_hash(const ModelConfig& cfg);

struct TensorSpecEntry {
  std::string name;
  Shape shape;
  bool is_bias = false;
};

/// The exact parameter name/shape set determined by a config, in the fixed
/// order used everywhere (aggregation, checkpoints, flatten).
std::vector<TensorSpecEntry> parameter_layout(const ModelConfig& cfg);

/// Whether a parameter name denotes a bias under the fixed naming scheme.
bool is_bias_name(const std::string& name);

/// Uniform(-a, a) per tensor with a = sqrt(6 / (fan_in + fan_out)), each
/// tensor on its own stream keyed by (seed, name). Deterministic.
ModelParams build_model(const ModelConfig& cfg, std::uint64_t seed);

/// Builds the model as autodiff graph nodes over a shared parameter set.
/// One instance per forward pass; parameters are loaded once as leaves.
class ModelGraph {
 public:
  ModelGraph(const ModelConfig& cfg, const ModelParams& params);

  Graph& graph() { return g_; }
  NodeId param_node(const std::string& name) const;

  /// [1,H,W] slice -> [F] feature.
  NodeId encoder(NodeId slice);

  /// Adds the S slices of a [S,1,H,W] volume as inputs and encodes each
  /// with the shared parameters; returns one [F] feature node per slice.
  std::vector<NodeId> time_distributed(const Tensor& volume);

  /// [F] features per step -> [Hd] hidden state per step, h_0 = 0.
  std::vector<NodeId> gru(const std::vector<NodeId>& features);

  /// [Hd] hidden per step -> [num_labels] logits per step (shared head).
  std::vector<NodeId> head(const std::vector<NodeId>& hidden);

  /// Sum (not mean) of per-slice BCE losses for one volume; the caller
  /// scales by the total slice count of the batch.
  NodeId volume_loss_sum(const Tensor& volume,
                         const std::vector<std::array<std::uint8_t, 6>>&
                             slice_labels);

 private:
  const ModelConfig& cfg_;
  Graph g_;
  std::vector<std::pair<std::string, NodeId>> param_ids_;
};

/// Pure forward wrappers; each builds a throwaway graph internally.
Tensor encoder_forward(const Tensor& slice, const ModelParams& params,
                       const ModelConfig& cfg);
Tensor time_distributed_forward(const Tensor& volume, const ModelParams& params,
                                const ModelConfig& cfg);  // [S,F]
Tensor gru_forward(const Tensor& features, const ModelParams& params,
                   const ModelConfig& cfg);  // [S,Hd]
Tensor classify(const Tensor& hidden, const ModelParams& params,
                const ModelConfig& cfg);  // [S,num_labels] logits

/// Whole-pipeline forward: [S,1,H,W] volume -> [S,num_labels] logits.
Tensor forward_volume(const Tensor& volume, const ModelParams& params,
                      const ModelConfig& cfg);

/// Volume-level score per label: max over slices of sigmoid(logit).
std::array<double, 6> volume_scores(const Tensor& slice_logits);

struct VolumeSample;  // defined in data.hpp

struct TrainStepResult {
  ModelParams params;
  double loss = 0.0;
};

/// One SGD step on a batch: loss is the mean per-slice BCE over all volumes
/// and slices; params' = params - lr * grad.
TrainStepResult train_step(const ModelParams& params,
                           const std::vector<const VolumeSample*>& batch,
                           const ModelConfig& cfg, double lr);

/// Batch loss and its gradient without applying an update.
LossAndGrad batch_loss_and_grad(const ModelParams& params,
                                const std::vector<const VolumeSample*>& batch,
                                const ModelConfig& cfg);

struct PruneResult {
  ModelParams params;
  ModelParams mask;  // 1 kept, 0 zeroed; biases all 1
};

/// Zeroes the globally smallest-magnitude fraction of weight coordinates
/// (biases exempt). Exactly ceil((1 - fraction) * total_weights) weights
/// survive; ties broken by entry order then flat index.
PruneResult prune_by_magnitude(const ModelParams& params, double fraction);

}  // namespace fedscan
