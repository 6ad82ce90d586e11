#include "fedscan/fed.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <limits>
#include <set>

#include "fedscan/errors.hpp"
#include "fedscan/rng.hpp"

namespace fedscan {

namespace {

constexpr double kBytesPerSecond = 1e6;   // modeled link bandwidth
constexpr double kSecondsPerStep = 1e-3;  // modeled device step cost

void require_distinct_ids(const std::vector<ModelUpdate>& updates) {
  std::set<int> ids;
  for (const ModelUpdate& u : updates) {
    if (!ids.insert(u.client_id).second) {
      throw ProtocolError("duplicate client id " +
                          std::to_string(u.client_id) + " in update set");
    }
  }
}

}  // namespace

void ClientState::validate(std::size_t dataset_size) const {
  if (client_id < 0) {
    throw ConfigError("client_id must be non-negative");
  }
  if (!(availability >= 0.0 && availability <= 1.0)) {
    throw ConfigError("client availability must lie in [0,1]");
  }
  if (local_epochs < 1) {
    throw ConfigError("local_epochs must be >= 1");
  }
  if (batch_size < 1) {
    throw ConfigError("batch_size must be >= 1");
  }
  for (int idx : shard) {
    if (idx < 0 || static_cast<std::size_t>(idx) >= dataset_size) {
      throw ContractError("shard index " + std::to_string(idx) +
                          " outside the dataset");
    }
  }
}

void DPConfig::validate() const {
  if (!(clip_norm > 0.0)) {
    throw ConfigError("dp clip_norm must be > 0");
  }
  if (!(sigma >= 0.0)) {
    throw ConfigError("dp sigma must be >= 0");
  }
}

void FedOptions::validate() const {
  if (rounds < 1) {
    throw ConfigError("rounds must be >= 1");
  }
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw ConfigError("fraction must lie in (0,1]");
  }
  if (!(lr >= 0.0) || !std::isfinite(lr)) {
    throw ConfigError("lr must be finite and >= 0");
  }
  if (local_epochs < 1) {
    throw ConfigError("local_epochs must be >= 1");
  }
  if (batch_size < 1) {
    throw ConfigError("batch_size must be >= 1");
  }
  if (!(availability >= 0.0 && availability <= 1.0)) {
    throw ConfigError("availability must lie in [0,1]");
  }
  if (dp.has_value()) {
    dp->validate();
  }
}

std::vector<int> schedule_round(const std::vector<ClientState>& clients,
                                double fraction, std::uint32_t round_index,
                                std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw DomainError("fraction must lie in (0,1]");
  }
  std::vector<int> available;
  for (const ClientState& c : clients) {
    Rng rng(derive_key(seed, {fnv1a64("avail"), round_index,
                              static_cast<std::uint64_t>(c.client_id)}));
    if (rng.bernoulli(c.availability)) {
      available.push_back(c.client_id);
    }
  }
  if (available.empty()) {
    return {};
  }
  std::sort(available.begin(), available.end());
  const std::size_t n = available.size();
  std::size_t m = static_cast<std::size_t>(
      std::ceil(fraction * static_cast<double>(n) - 1e-9));
  m = std::clamp<std::size_t>(m, 1, n);
  Rng sel(derive_key(seed, {fnv1a64("select"), round_index}));
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(sel.below(n - i));
    std::swap(available[i], available[j]);
  }
  available.resize(m);
  std::sort(available.begin(), available.end());
  return available;
}

LocalTrainResult local_train(const ClientState& client,
                             const ModelParams& global,
                             const std::vector<VolumeSample>& dataset,
                             const ModelConfig& cfg, double lr,
                             std::uint64_t seed, std::uint32_t round_index) {
  if (client.shard.empty()) {
    throw ContractError("client " + std::to_string(client.client_id) +
                        " has an empty shard; it must not be scheduled");
  }
  client.validate(dataset.size());
  std::vector<int> shard = client.shard;
  std::sort(shard.begin(), shard.end());

  LocalTrainResult out;
  out.update.params = global;
  out.update.sample_count = static_cast<std::int64_t>(shard.size());
  out.update.client_id = client.client_id;
  double weighted_loss = 0.0;
  std::size_t processed = 0;
  for (int epoch = 0; epoch < client.local_epochs; ++epoch) {
    std::vector<int> order = shard;
    Rng rng(derive_key(seed, {fnv1a64("shuffle"), round_index,
                              static_cast<std::uint64_t>(client.client_id),
                              static_cast<std::uint64_t>(epoch)}));
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(client.batch_size)) {
      const std::size_t stop =
          std::min(order.size(),
                   start + static_cast<std::size_t>(client.batch_size));
      std::vector<const VolumeSample*> batch;
      batch.reserve(stop - start);
      for (std::size_t i = start; i < stop; ++i) {
        batch.push_back(&dataset[static_cast<std::size_t>(order[i])]);
      }
      TrainStepResult step = train_step(out.update.params, batch, cfg, lr);
      out.update.params = std::move(step.params);
      weighted_loss += step.loss * static_cast<double>(batch.size());
      processed += batch.size();
      ++out.steps;
    }
  }
  out.mean_loss = weighted_loss / static_cast<double>(processed);
  return out;
}

ModelParams fedavg_aggregate(const std::vector<ModelUpdate>& updates) {
  if (updates.empty()) {
    throw ContractError("fedavg_aggregate requires at least one update");
  }
  require_distinct_ids(updates);
  std::vector<const ModelUpdate*> order;
  order.reserve(updates.size());
  for (const ModelUpdate& u : updates) {
    if (u.sample_count < 1) {
      throw ContractError("update sample_count must be >= 1");
    }
    order.push_back(&u);
  }
  std::sort(order.begin(), order.end(),
            [](const ModelUpdate* a, const ModelUpdate* b) {
              return a->client_id < b->client_id;
            });
  double total = 0.0;
  for (const ModelUpdate* u : order) {
    require_same_names(u->params, order.front()->params,
                       "fedavg_aggregate update");
    total += static_cast<double>(u->sample_count);
  }
  ModelParams result = order.front()->params;
  params_scale(result,
               static_cast<double>(order.front()->sample_count) / total);
  for (std::size_t k = 1; k < order.size(); ++k) {
    add_scaled(result, order[k]->params,
               static_cast<double>(order[k]->sample_count) / total);
  }
  return result;
}

ClipResult clip_update(const ModelParams& delta, double c) {
  if (!(c > 0.0)) {
    throw DomainError("clip norm must be > 0");
  }
  ClipResult out;
  out.norm = params_l2_norm(delta);
  out.scale = out.norm > c ? c / out.norm : 1.0;
  out.delta = delta;
  if (out.scale != 1.0) {
    params_scale(out.delta, out.scale);
  }
  return out;
}

ModelParams gaussian_mechanism(const ModelParams& delta, double sigma,
                               double clip_norm, std::uint64_t key) {
  if (!(sigma >= 0.0)) {
    throw DomainError("sigma must be >= 0");
  }
  ModelParams out = delta;
  if (sigma == 0.0) {
    return out;
  }
  const double std_dev = sigma * clip_norm;
  Rng rng(key);
  for (auto& entry : out.entries()) {
    for (std::size_t i = 0; i < entry.value.size(); ++i) {
      entry.value[i] += std_dev * rng.normal();
    }
  }
  return out;
}

ModelParams apply_dp(const ModelParams& local, const ModelParams& global,
                     const DPConfig& dp, std::uint32_t round_index,
                     int client_id) {
  dp.validate();
  const ModelParams delta = params_diff(local, global);
  ClipResult clipped = clip_update(delta, dp.clip_norm);
  if (clipped.scale == 1.0 && dp.sigma == 0.0) {
    // the whole mechanism reduces to the identity; keep the exact bits
    return local;
  }
  const std::uint64_t key =
      derive_key(dp.seed, {fnv1a64("dp"), round_index,
                           static_cast<std::uint64_t>(client_id)});
  const ModelParams noised =
      gaussian_mechanism(clipped.delta, dp.sigma, dp.clip_norm, key);
  ModelParams result = global;
  add_scaled(result, noised, 1.0);
  return result;
}

std::vector<ModelUpdate> mask_pairwise(const std::vector<ModelUpdate>& updates,
                                       std::uint64_t seed) {
  if (updates.size() < 2) {
    throw ContractError("pairwise masking needs at least two updates");
  }
  require_distinct_ids(updates);
  for (const ModelUpdate& u : updates) {
    require_same_names(u.params, updates.front().params, "masked update");
  }
  std::vector<ModelUpdate> masked = updates;
  std::vector<std::size_t> order(masked.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    order[i] = i;
  }
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return masked[a].client_id < masked[b].client_id;
  });
  for (std::size_t a = 0; a < order.size(); ++a) {
    for (std::size_t b = a + 1; b < order.size(); ++b) {
      ModelUpdate& lo = masked[order[a]];
      ModelUpdate& hi = masked[order[b]];
      Rng rng(derive_key(seed, {fnv1a64("pairmask"),
                                static_cast<std::uint64_t>(lo.client_id),
                                static_cast<std::uint64_t>(hi.client_id)}));
      for (std::size_t e = 0; e < lo.params.entries().size(); ++e) {
        Tensor& lo_t = lo.params.entries()[e].value;
        Tensor& hi_t = hi.params.entries()[e].value;
        for (std::size_t i = 0; i < lo_t.size(); ++i) {
          const double m = rng.normal();
          lo_t[i] += m;
          hi_t[i] -= m;
        }
      }
    }
  }
  return masked;
}

ModelParams sum_masked_updates(const std::vector<ModelUpdate>& masked,
                               const std::vector<int>& roster) {
  if (masked.empty()) {
    throw ContractError("cannot sum an empty masked update set");
  }
  std::set<int> present;
  for (const ModelUpdate& u : masked) {
    present.insert(u.client_id);
  }
  const std::set<int> expected(roster.begin(), roster.end());
  if (present != expected) {
    for (int id : expected) {
      if (!present.count(id)) {
        throw MaskDropoutError(
            "client " + std::to_string(id) +
            " dropped after masking; the aggregate sum is unrecoverable");
      }
    }
    throw MaskDropoutError("masked update set does not match the roster");
  }
  std::vector<const ModelUpdate*> order;
  order.reserve(masked.size());
  for (const ModelUpdate& u : masked) {
    order.push_back(&u);
  }
  std::sort(order.begin(), order.end(),
            [](const ModelUpdate* a, const ModelUpdate* b) {
              return a->client_id < b->client_id;
            });
  ModelParams result = order.front()->params;
  for (std::size_t k = 1; k < order.size(); ++k) {
    add_scaled(result, order[k]->params, 1.0);
  }
  return result;
}

CommsBytes comms_account(std::uint64_t parameter_count,
                         std::uint64_t participants) {
  CommsBytes out;
  out.downlink = participants * 4 * parameter_count;
  out.uplink = participants * (4 * parameter_count + 8);
  return out;
}

EvalMetrics evaluate_model(const ModelParams& params, const ModelConfig& cfg,
                           const std::vector<VolumeSample>& dataset,
                           const std::vector<int>& indices) {
  EvalMetrics m;
  if (indices.empty()) {
    m.accuracy = std::numeric_limits<double>::quiet_NaN();
    m.ap.fill(std::numeric_limits<double>::quiet_NaN());
    m.mean_ap = std::numeric_limits<double>::quiet_NaN();
    m.ap_defined = 0;
    return m;
  }
  const int n = static_cast<int>(indices.size());
  Tensor scores = Tensor::zeros({n, kNumLabels});
  Tensor labels = Tensor::zeros({n, kNumLabels});
  for (int i = 0; i < n; ++i) {
    const int idx = indices[static_cast<std::size_t>(i)];
    if (idx < 0 || static_cast<std::size_t>(idx) >= dataset.size()) {
      throw ContractError("eval index " + std::to_string(idx) +
                          " outside the dataset");
    }
    const VolumeSample& sample = dataset[static_cast<std::size_t>(idx)];
    const std::array<double, 6> vs =
        volume_scores(forward_volume(sample.volume, params, cfg));
    for (int j = 0; j < kNumLabels; ++j) {
      scores[static_cast<std::size_t>(i * kNumLabels + j)] =
          vs[static_cast<std::size_t>(j)];
      labels[static_cast<std::size_t>(i * kNumLabels + j)] =
          static_cast<double>(
              sample.volume_labels[static_cast<std::size_t>(j)]);
    }
  }
  return compute_eval_metrics(scores, labels);
}

namespace {

RoundReport make_report(std::uint32_t round_index,
                        const std::vector<int>& selected, double mean_loss,
                        const EvalMetrics& em, const CommsBytes& comms,
                        double seconds) {
  RoundReport r;
  r.round_index = round_index;
  r.selected = selected;
  r.mean_loss = mean_loss;
  r.accuracy = em.accuracy;
  r.ap = em.ap;
  r.mean_ap = em.mean_ap;
  r.ap_defined = em.ap_defined;
  r.uplink_bytes = comms.uplink;
  r.downlink_bytes = comms.downlink;
  r.seconds = seconds;
  return r;
}

}  // namespace

FedResult run_federated(const std::vector<VolumeSample>& dataset,
                        const std::vector<std::vector<int>>& shards,
                        const std::vector<int>& eval_indices,
                        const ModelConfig& cfg, const FedOptions& opt) {
  cfg.validate();
  opt.validate();
  if (shards.empty()) {
    throw ContractError("run_federated requires at least one client shard");
  }
  std::vector<ClientState> clients;
  clients.reserve(shards.size());
  for (std::size_t c = 0; c < shards.size(); ++c) {
    ClientState state;
    state.client_id = static_cast<int>(c);
    state.shard = shards[c];
    std::sort(state.shard.begin(), state.shard.end());
    state.availability = opt.availability;
    state.local_epochs = opt.local_epochs;
    state.batch_size = opt.batch_size;
    state.validate(dataset.size());
    clients.push_back(std::move(state));
  }

  FedResult out;
  out.final_params = build_model(cfg, opt.seed);
  const std::uint64_t p_count = out.final_params.coord_count();
  for (std::uint32_t r = 0; r < opt.rounds; ++r) {
    std::vector<int> selected =
        schedule_round(clients, opt.fraction, r, opt.seed);
    selected.erase(std::remove_if(selected.begin(), selected.end(),
                                  [&](int id) {
                                    return clients[static_cast<std::size_t>(id)]
                                        .shard.empty();
                                  }),
                   selected.end());
    if (selected.empty()) {
      const EvalMetrics em =
          evaluate_model(out.final_params, cfg, dataset, eval_indices);
      out.reports.push_back(make_report(
          r, {}, std::numeric_limits<double>::quiet_NaN(), em, {}, 0.0));
      continue;
    }

    std::vector<LocalTrainResult> results(selected.size());
    auto train_one = [&](std::size_t i) {
      return local_train(clients[static_cast<std::size_t>(selected[i])],
                         out.final_params, dataset, cfg, opt.lr, opt.seed, r);
    };
    if (opt.parallel && selected.size() > 1) {
      std::vector<std::future<LocalTrainResult>> futures;
      futures.reserve(selected.size());
      for (std::size_t i = 0; i < selected.size(); ++i) {
        futures.push_back(
            std::async(std::launch::async, train_one, i));
      }
      for (std::size_t i = 0; i < selected.size(); ++i) {
        results[i] = futures[i].get();
      }
    } else {
      for (std::size_t i = 0; i < selected.size(); ++i) {
        results[i] = train_one(i);
      }
    }

    std::vector<ModelUpdate> updates;
    updates.reserve(results.size());
    double loss_weighted = 0.0;
    double loss_samples = 0.0;
    int max_steps = 0;
    for (LocalTrainResult& res : results) {
      loss_weighted +=
          res.mean_loss * static_cast<double>(res.update.sample_count);
      loss_samples += static_cast<double>(res.update.sample_count);
      max_steps = std::max(max_steps, res.steps);
      updates.push_back(std::move(res.update));
    }
    if (opt.dp.has_value()) {
      for (ModelUpdate& u : updates) {
        u.params = apply_dp(u.params, out.final_params, *opt.dp, r,
                            u.client_id);
      }
    }
    if (opt.masking && updates.size() >= 2) {
      double total = 0.0;
      for (const ModelUpdate& u : updates) {
        total += static_cast<double>(u.sample_count);
      }
      std::vector<ModelUpdate> contributions = updates;
      for (ModelUpdate& u : contributions) {
        params_scale(u.params, static_cast<double>(u.sample_count) / total);
      }
      const std::vector<ModelUpdate> masked = mask_pairwise(
          contributions, derive_key(opt.seed, {fnv1a64("mask"), r}));
      out.final_params = sum_masked_updates(masked, selected);
    } else {
      out.final_params = fedavg_aggregate(updates);
    }

    const CommsBytes comms =
        comms_account(p_count, static_cast<std::uint64_t>(selected.size()));
    out.total_uplink += comms.uplink;
    out.total_downlink += comms.downlink;
    const double seconds =
        static_cast<double>(comms.downlink + comms.uplink) / kBytesPerSecond +
        static_cast<double>(max_steps) * kSecondsPerStep;
    const EvalMetrics em =
        evaluate_model(out.final_params, cfg, dataset, eval_indices);
    out.reports.push_back(make_report(r, selected,
                                      loss_weighted / loss_samples, em, comms,
                                      seconds));
  }
  return out;
}

FedResult run_centralized(const std::vector<VolumeSample>& dataset,
                          const std::vector<int>& train_indices,
                          const std::vector<int>& eval_indices,
                          const ModelConfig& cfg, const FedOptions& opt) {
  cfg.validate();
  opt.validate();
  if (train_indices.empty()) {
    throw ContractError("run_centralized requires training samples");
  }
  ClientState worker;
  worker.client_id = 0;
  worker.shard = train_indices;
  std::sort(worker.shard.begin(), worker.shard.end());
  worker.local_epochs = opt.local_epochs;
  worker.batch_size = opt.batch_size;
  worker.validate(dataset.size());

  FedResult out;
  out.final_params = build_model(cfg, opt.seed);
  for (std::uint32_t r = 0; r < opt.rounds; ++r) {
    LocalTrainResult res =
        local_train(worker, out.final_params, dataset, cfg, opt.lr, opt.seed,
                    r);
    out.final_params = std::move(res.update.params);
    const EvalMetrics em =
        evaluate_model(out.final_params, cfg, dataset, eval_indices);
    const double seconds = static_cast<double>(res.steps) * kSecondsPerStep;
    out.reports.push_back(
        make_report(r, {}, res.mean_loss, em, {}, seconds));
  }
  return out;
}

}  // namespace fedscan
