#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "fedscan/data.hpp"
#include "fedscan/metrics.hpp"
#include "fedscan/model.hpp"
#include "fedscan/params.hpp"

namespace fedscan {

struct ClientState {
  int client_id = 0;
  std::vector<int> shard;  // ascending dataset indices
  double availability = 1.0;
  int local_epochs = 1;
  int batch_size = 1;

  void validate(std::size_t dataset_size) const;
};

/// The only value that crosses the client boundary: weights plus the
/// sample count that weighs them. Never carries data.
struct ModelUpdate {
  ModelParams params;
  std::int64_t sample_count = 0;
  int client_id = 0;
};

struct DPConfig {
  double clip_norm = 1.0;  // C > 0
  double sigma = 0.0;      // noise scale, >= 0; noise std is sigma * C
  std::uint64_t seed = 0;

  void validate() const;
};

struct CommsBytes {
  std::uint64_t downlink = 0;
  std::uint64_t uplink = 0;
};

/// Availability is Bernoulli(p) per client keyed by (seed, round, client);
/// ceil(fraction * available) of the available clients are then drawn
/// uniformly without replacement. Ascending-id result; empty when nobody
/// is available.
std::vector<int> schedule_round(const std::vector<ClientState>& clients,
                                double fraction, std::uint32_t round_index,
                                std::uint64_t seed);

struct LocalTrainResult {
  ModelUpdate update;
  double mean_loss = 0.0;
  int steps = 0;
};

/// Runs local_epochs passes of SGD over the client shard in seeded
/// shuffled batches (key: seed, round, client, epoch). The global model is
/// not modified.
LocalTrainResult local_train(const ClientState& client,
                             const ModelParams& global,
                             const std::vector<VolumeSample>& dataset,
                             const ModelConfig& cfg, double lr,
                             std::uint64_t seed, std::uint32_t round_index);

/// Sample-count-weighted mean of the updates, folded in ascending
/// client_id order. A single update passes through bitwise.
ModelParams fedavg_aggregate(const std::vector<ModelUpdate>& updates);

struct ClipResult {
  ModelParams delta;
  double scale = 1.0;  // 1.0 means the no-op branch was taken
  double norm = 0.0;   // pre-clip global L2 norm
};

/// Scales the delta by C/norm when its global L2 norm exceeds C,
/// otherwise returns it bitwise unchanged.
ClipResult clip_update(const ModelParams& delta, double c);

/// Adds i.i.d. Normal(0, (sigma*clip_norm)^2) noise per coordinate from
/// the stream keyed by `key`; sigma = 0 is a bitwise identity.
ModelParams gaussian_mechanism(const ModelParams& delta, double sigma,
                               double clip_norm, std::uint64_t key);

/// Clip-then-noise on the (local - global) delta, reapplied to the global
/// model. When the clip does not bind and sigma is zero the mechanism is
/// the mathematical identity and the local weights are returned bitwise.
ModelParams apply_dp(const ModelParams& local, const ModelParams& global,
                     const DPConfig& dp, std::uint32_t round_index,
                     int client_id);

/// Pairwise additive masking: for each client pair (i < j by id) one
/// seeded unit-normal mask is added to i's params and subtracted from
/// j's, so the coordinate-wise sum over all updates is preserved up to
/// rounding while each individual update is perturbed.
std::vector<ModelUpdate> mask_pairwise(const std::vector<ModelUpdate>& updates,
                                       std::uint64_t seed);

/// Coordinate-wise sum of masked updates in ascending client_id order.
/// Every client that was masked must be present: masks only cancel in the
/// full sum, so a dropped client makes the total unrecoverable.
ModelParams sum_masked_updates(const std::vector<ModelUpdate>& masked,
                               const std::vector<int>& roster);

/// downlink = K*4*P, uplink = K*(4*P+8): float32 weights both ways plus
/// an 8-byte sample count up.
CommsBytes comms_account(std::uint64_t parameter_count,
                         std::uint64_t participants);

/// Volume-level scores (max over slices of per-slice sigmoid) against
/// volume labels over the given dataset indices. NaN metrics when the
/// index list is empty.
EvalMetrics evaluate_model(const ModelParams& params, const ModelConfig& cfg,
                           const std::vector<VolumeSample>& dataset,
                           const std::vector<int>& indices);

struct FedOptions {
  std::uint32_t rounds = 1;
  double fraction = 1.0;
  double lr = 0.05;
  int local_epochs = 1;
  int batch_size = 8;
  double availability = 1.0;
  std::optional<DPConfig> dp;
  bool masking = false;
  std::uint64_t seed = 0;
  bool parallel = false;

  void validate() const;
};

struct FedResult {
  std::vector<RoundReport> reports;
  ModelParams final_params;
  std::uint64_t total_uplink = 0;
  std::uint64_t total_downlink = 0;
};

/// The full FedAvg loop: schedule, broadcast, local training (serial or
/// concurrent, identical results), optional DP, optional masking,
/// weighted aggregation, evaluation, one report per round. Deterministic
/// in (config, seed); an empty round leaves the global model unchanged.
FedResult run_federated(const std::vector<VolumeSample>& dataset,
                        const std::vector<std::vector<int>>& shards,
                        const std::vector<int>& eval_indices,
                        const ModelConfig& cfg, const FedOptions& opt);

/// Single-worker baseline running the identical keyed batch schedule as a
/// one-client federation (client id 0), one report per round.
FedResult run_centralized(const std::vector<VolumeSample>& dataset,
                          const std::vector<int>& train_indices,
                          const std::vector<int>& eval_indices,
                          const ModelConfig& cfg, const FedOptions& opt);

}  // namespace fedscan
