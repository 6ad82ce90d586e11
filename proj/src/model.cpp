#include "fedscan/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

#include "fedscan/data.hpp"
#include "fedscan/errors.hpp"
#include "fedscan/rng.hpp"

namespace fedscan {

void ModelConfig::validate() const {
  if (input_hw < 1) {
    throw ConfigError("model.input_hw must be positive");
  }
  if (slices < 1) {
    throw ConfigError("model.slices must be positive");
  }
  if (growth_rate < 1) {
    throw ConfigError("model.growth_rate must be positive");
  }
  if (gru_hidden < 1) {
    throw ConfigError("model.gru_hidden must be positive");
  }
  if (num_labels != kNumLabels) {
    throw ConfigError("model.num_labels is the fixed 6-label taxonomy");
  }
  if (block_layout.empty()) {
    throw ConfigError("model.block_layout must list at least one block");
  }
  for (std::size_t b = 0; b < block_layout.size(); ++b) {
    if (block_layout[b] < 1) {
      throw ConfigError("model.block_layout[" + std::to_string(b) +
                        "] must be positive");
    }
  }
  int s = input_hw;
  for (std::size_t b = 0; b + 1 < block_layout.size(); ++b) {
    if (s % 2 != 0) {
      throw ConfigError("model.input_hw " + std::to_string(input_hw) +
                        " is not divisible by the 2x2 pooling of transition " +
                        std::to_string(b));
    }
    s /= 2;
  }
}

int ModelConfig::channels_into_block(int b) const {
  if (b < 0 || static_cast<std::size_t>(b) >= block_layout.size()) {
    throw ContractError("block index out of range");
  }
  int c = 1;
  for (int j = 0; j < b; ++j) {
    c += block_layout[static_cast<std::size_t>(j)] * growth_rate;
    c = std::max(1, c / 2);
  }
  return c;
}

int ModelConfig::feature_length() const {
  const int last = static_cast<int>(block_layout.size()) - 1;
  return channels_into_block(last) + block_layout[last] * growth_rate;
}

int ModelConfig::spatial_at_block(int b) const {
  if (b < 0 || static_cast<std::size_t>(b) >= block_layout.size()) {
    throw ContractError("block index out of range");
  }
  return input_hw >> b;
}

std::string ModelConfig::canonical_string() const {
  std::ostringstream os;
  os << "hw=" << input_hw << ";slices=" << slices << ";growth=" << growth_rate
     << ";blocks=";
  for (std::size_t b = 0; b < block_layout.size(); ++b) {
    if (b > 0) {
      os << ",";
    }
    os << block_layout[b];
  }
  os << ";hidden=" << gru_hidden << ";labels=" << num_labels;
  return os.str();
}

std::uint64_t model_config_hash(const ModelConfig& cfg) {
  return fnv1a64(cfg.canonical_string());
}

std::vector<TensorSpecEntry> parameter_layout(const ModelConfig& cfg) {
  cfg.validate();
  std::vector<TensorSpecEntry> layout;
  const int nb = static_cast<int>(cfg.block_layout.size());
  int c = 1;
  for (int b = 0; b < nb; ++b) {
    const int layers = cfg.block_layout[static_cast<std::size_t>(b)];
    for (int l = 0; l < layers; ++l) {
      const int in_c = c + l * cfg.growth_rate;
      layout.push_back({"encoder.block" + std::to_string(b) + ".layer" +
                            std::to_string(l) + ".conv",
                        {cfg.growth_rate, in_c, 3, 3},
                        false});
    }
    c += layers * cfg.growth_rate;
    if (b + 1 < nb) {
      const int half = std::max(1, c / 2);
      layout.push_back({"encoder.transition" + std::to_string(b) + ".conv",
                        {half, c, 1, 1},
                        false});
      c = half;
    }
  }
  const int f = c;
  for (const char* gate : {"z", "r", "h"}) {
    layout.push_back(
        {std::string("gru.w_") + gate, {cfg.gru_hidden, f}, false});
    layout.push_back(
        {std::string("gru.u_") + gate, {cfg.gru_hidden, cfg.gru_hidden},
         false});
    layout.push_back({std::string("gru.b_") + gate, {cfg.gru_hidden, 1}, true});
  }
  layout.push_back({"head.weight", {cfg.num_labels, cfg.gru_hidden}, false});
  layout.push_back({"head.bias", {cfg.num_labels, 1}, true});
  return layout;
}

bool is_bias_name(const std::string& name) {
  return name == "head.bias" || name.rfind("gru.b_", 0) == 0;
}

ModelParams build_model(const ModelConfig& cfg, std::uint64_t seed) {
  ModelParams params;
  for (const TensorSpecEntry& entry : parameter_layout(cfg)) {
    const std::size_t numel = checked_numel(entry.shape);
    const double fan_in =
        static_cast<double>(numel) / static_cast<double>(entry.shape[0]);
    const double fan_out =
        static_cast<double>(numel) / static_cast<double>(entry.shape[1]);
    const double a = std::sqrt(6.0 / (fan_in + fan_out));
    Rng rng(derive_key(seed, {fnv1a64("init"), fnv1a64(entry.name)}));
    params.add(entry.name, Tensor::uniform(entry.shape, -a, a, rng),
               entry.is_bias);
  }
  return params;
}

ModelGraph::ModelGraph(const ModelConfig& cfg, const ModelParams& params)
    : cfg_(cfg) {
  for (const TensorSpecEntry& entry : parameter_layout(cfg)) {
    if (!params.contains(entry.name)) {
      throw ContractError("parameter set is missing tensor " + entry.name);
    }
    const Tensor& value = params.at(entry.name);
    if (value.shape() != entry.shape) {
      throw ShapeError("parameter " + entry.name + " has shape " +
                       shape_str(value.shape()) + ", config requires " +
                       shape_str(entry.shape));
    }
    param_ids_.emplace_back(entry.name, g_.input(value, /*is_param=*/true));
  }
}

NodeId ModelGraph::param_node(const std::string& name) const {
  for (const auto& [n, id] : param_ids_) {
    if (n == name) {
      return id;
    }
  }
  throw ContractError("no parameter named " + name);
}

NodeId ModelGraph::encoder(NodeId slice) {
  const int nb = static_cast<int>(cfg_.block_layout.size());
  std::vector<NodeId> feats = {slice};
  auto joined = [&]() {
    return feats.size() == 1 ? feats[0] : g_.concat_channels(feats);
  };
  for (int b = 0; b < nb; ++b) {
    const int layers = cfg_.block_layout[static_cast<std::size_t>(b)];
    for (int l = 0; l < layers; ++l) {
      const std::string name = "encoder.block" + std::to_string(b) + ".layer" +
                               std::to_string(l) + ".conv";
      feats.push_back(g_.relu(g_.conv2d(joined(), param_node(name), 1, 1)));
    }
    const NodeId block_out = joined();
    if (b + 1 < nb) {
      const std::string name = "encoder.transition" + std::to_string(b) +
                               ".conv";
      feats = {g_.pool_avg(g_.conv2d(block_out, param_node(name), 1, 0), 2)};
    } else {
      return g_.global_pool_avg(block_out);
    }
  }
  throw ContractError("unreachable");
}

std::vector<NodeId> ModelGraph::time_distributed(const Tensor& volume) {
  if (volume.rank() != 4 || volume.dim(1) != 1) {
    throw ShapeError("volume must be [S,1,H,W], got " +
                     shape_str(volume.shape()));
  }
  if (volume.dim(0) != cfg_.slices || volume.dim(2) != cfg_.input_hw ||
      volume.dim(3) != cfg_.input_hw) {
    throw ShapeError("volume shape " + shape_str(volume.shape()) +
                     " does not match the configured geometry");
  }
  const int h = volume.dim(2), w = volume.dim(3);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  std::vector<NodeId> feats;
  feats.reserve(static_cast<std::size_t>(volume.dim(0)));
  for (int s = 0; s < volume.dim(0); ++s) {
    Tensor sl = Tensor::zeros({1, h, w});
    std::memcpy(sl.data(), volume.data() + static_cast<std::size_t>(s) * plane,
                plane * sizeof(double));
    feats.push_back(encoder(g_.input(std::move(sl))));
  }
  return feats;
}

std::vector<NodeId> ModelGraph::gru(const std::vector<NodeId>& features) {
  const int f = cfg_.feature_length();
  const NodeId wz = param_node("gru.w_z"), uz = param_node("gru.u_z"),
               bz = param_node("gru.b_z");
  const NodeId wr = param_node("gru.w_r"), ur = param_node("gru.u_r"),
               br = param_node("gru.b_r");
  const NodeId wh = param_node("gru.w_h"), uh = param_node("gru.u_h"),
               bh = param_node("gru.b_h");
  NodeId h = g_.input(Tensor::zeros({cfg_.gru_hidden, 1}));
  std::vector<NodeId> out;
  out.reserve(features.size());
  for (NodeId feat : features) {
    const NodeId x = g_.reshape(feat, {f, 1});
    const NodeId z = g_.sigmoid(
        g_.add(g_.add(g_.matmul(wz, x), g_.matmul(uz, h)), bz));
    const NodeId r = g_.sigmoid(
        g_.add(g_.add(g_.matmul(wr, x), g_.matmul(ur, h)), br));
    const NodeId cand = g_.tanh(
        g_.add(g_.add(g_.matmul(wh, x), g_.matmul(uh, g_.mul(r, h))), bh));
    h = g_.add(g_.sub(h, g_.mul(z, h)), g_.mul(z, cand));
    out.push_back(h);
  }
  return out;
}

std::vector<NodeId> ModelGraph::head(const std::vector<NodeId>& hidden) {
  const NodeId w = param_node("head.weight"), b = param_node("head.bias");
  std::vector<NodeId> out;
  out.reserve(hidden.size());
  for (NodeId h : hidden) {
    out.push_back(g_.add(g_.matmul(w, h), b));
  }
  return out;
}

NodeId ModelGraph::volume_loss_sum(
    const Tensor& volume,
    const std::vector<std::array<std::uint8_t, 6>>& slice_labels) {
  if (cfg_.num_labels != kNumLabels) {
    throw ContractError("training requires the fixed 6-label taxonomy");
  }
  if (slice_labels.size() != static_cast<std::size_t>(cfg_.slices)) {
    throw ShapeError("expected " + std::to_string(cfg_.slices) +
                     " slice label rows, got " +
                     std::to_string(slice_labels.size()));
  }
  const std::vector<NodeId> logits = head(gru(time_distributed(volume)));
  NodeId total = -1;
  for (std::size_t t = 0; t < logits.size(); ++t) {
    Tensor targets = Tensor::zeros({kNumLabels, 1});
    for (int j = 0; j < kNumLabels; ++j) {
      targets[static_cast<std::size_t>(j)] =
          static_cast<double>(slice_labels[t][static_cast<std::size_t>(j)]);
    }
    const NodeId loss = g_.bce_with_logits(logits[t], std::move(targets));
    total = (t == 0) ? loss : g_.add(total, loss);
  }
  return total;
}

Tensor encoder_forward(const Tensor& slice, const ModelParams& params,
                       const ModelConfig& cfg) {
  if (slice.rank() != 3 || slice.dim(0) != 1 || slice.dim(1) != cfg.input_hw ||
      slice.dim(2) != cfg.input_hw) {
    throw ShapeError("slice must be [1," + std::to_string(cfg.input_hw) + "," +
                     std::to_string(cfg.input_hw) + "], got " +
                     shape_str(slice.shape()));
  }
  ModelGraph mg(cfg, params);
  const NodeId out = mg.encoder(mg.graph().input(slice));
  return mg.graph().value(out);
}

Tensor time_distributed_forward(const Tensor& volume, const ModelParams& params,
                                const ModelConfig& cfg) {
  ModelGraph mg(cfg, params);
  const std::vector<NodeId> feats = mg.time_distributed(volume);
  const int f = cfg.feature_length();
  Tensor out = Tensor::zeros({cfg.slices, f});
  for (int s = 0; s < cfg.slices; ++s) {
    const Tensor& row = mg.graph().value(feats[static_cast<std::size_t>(s)]);
    std::memcpy(out.data() + static_cast<std::size_t>(s) * f, row.data(),
                static_cast<std::size_t>(f) * sizeof(double));
  }
  return out;
}

Tensor gru_forward(const Tensor& features, const ModelParams& params,
                   const ModelConfig& cfg) {
  const int f = cfg.feature_length();
  if (features.rank() != 2 || features.dim(1) != f) {
    throw ShapeError("features must be [S," + std::to_string(f) + "], got " +
                     shape_str(features.shape()));
  }
  ModelGraph mg(cfg, params);
  std::vector<NodeId> ids;
  const int steps = features.dim(0);
  ids.reserve(static_cast<std::size_t>(steps));
  for (int s = 0; s < steps; ++s) {
    Tensor row = Tensor::zeros({f});
    std::memcpy(row.data(), features.data() + static_cast<std::size_t>(s) * f,
                static_cast<std::size_t>(f) * sizeof(double));
    ids.push_back(mg.graph().input(std::move(row)));
  }
  const std::vector<NodeId> hs = mg.gru(ids);
  Tensor out = Tensor::zeros({steps, cfg.gru_hidden});
  for (int s = 0; s < steps; ++s) {
    const Tensor& h = mg.graph().value(hs[static_cast<std::size_t>(s)]);
    std::memcpy(out.data() + static_cast<std::size_t>(s) * cfg.gru_hidden,
                h.data(),
                static_cast<std::size_t>(cfg.gru_hidden) * sizeof(double));
  }
  return out;
}

Tensor classify(const Tensor& hidden, const ModelParams& params,
                const ModelConfig& cfg) {
  if (hidden.rank() != 2 || hidden.dim(1) != cfg.gru_hidden) {
    throw ShapeError("hidden must be [S," + std::to_string(cfg.gru_hidden) +
                     "], got " + shape_str(hidden.shape()));
  }
  ModelGraph mg(cfg, params);
  const int steps = hidden.dim(0);
  std::vector<NodeId> hs;
  hs.reserve(static_cast<std::size_t>(steps));
  for (int s = 0; s < steps; ++s) {
    Tensor col = Tensor::zeros({cfg.gru_hidden, 1});
    std::memcpy(col.data(),
                hidden.data() + static_cast<std::size_t>(s) * cfg.gru_hidden,
                static_cast<std::size_t>(cfg.gru_hidden) * sizeof(double));
    hs.push_back(mg.graph().input(std::move(col)));
  }
  const std::vector<NodeId> logits = mg.head(hs);
  Tensor out = Tensor::zeros({steps, cfg.num_labels});
  for (int s = 0; s < steps; ++s) {
    const Tensor& l = mg.graph().value(logits[static_cast<std::size_t>(s)]);
    std::memcpy(out.data() + static_cast<std::size_t>(s) * cfg.num_labels,
                l.data(),
                static_cast<std::size_t>(cfg.num_labels) * sizeof(double));
  }
  return out;
}

Tensor forward_volume(const Tensor& volume, const ModelParams& params,
                      const ModelConfig& cfg) {
  ModelGraph mg(cfg, params);
  const std::vector<NodeId> logits = mg.head(mg.gru(mg.time_distributed(volume)));
  Tensor out = Tensor::zeros({cfg.slices, cfg.num_labels});
  for (int s = 0; s < cfg.slices; ++s) {
    const Tensor& l = mg.graph().value(logits[static_cast<std::size_t>(s)]);
    std::memcpy(out.data() + static_cast<std::size_t>(s) * cfg.num_labels,
                l.data(),
                static_cast<std::size_t>(cfg.num_labels) * sizeof(double));
  }
  return out;
}

std::array<double, 6> volume_scores(const Tensor& slice_logits) {
  if (slice_logits.rank() != 2 || slice_logits.dim(1) != kNumLabels ||
      slice_logits.dim(0) < 1) {
    throw ShapeError("slice logits must be [S,6] with S >= 1, got " +
                     shape_str(slice_logits.shape()));
  }
  std::array<double, 6> scores{};
  for (int j = 0; j < kNumLabels; ++j) {
    double best = -1.0;
    for (int s = 0; s < slice_logits.dim(0); ++s) {
      best = std::max(best, stable_sigmoid(slice_logits[static_cast<std::size_t>(
                                s * kNumLabels + j)]));
    }
    scores[static_cast<std::size_t>(j)] = best;
  }
  return scores;
}

LossAndGrad batch_loss_and_grad(const ModelParams& params,
                                const std::vector<const VolumeSample*>& batch,
                                const ModelConfig& cfg) {
  if (batch.empty()) {
    throw ContractError("training batch must not be empty");
  }
  ModelGraph mg(cfg, params);
  NodeId total = -1;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const NodeId ls =
        mg.volume_loss_sum(batch[i]->volume, batch[i]->slice_labels);
    total = (i == 0) ? ls : mg.graph().add(total, ls);
  }
  const double denom = static_cast<double>(batch.size()) *
                       static_cast<double>(cfg.slices);
  const NodeId loss = mg.graph().scale(total, 1.0 / denom);
  mg.graph().backward(loss);
  LossAndGrad out;
  out.loss = mg.graph().value(loss)[0];
  for (const TensorSpecEntry& entry : parameter_layout(cfg)) {
    out.grads.add(entry.name, mg.graph().grad(mg.param_node(entry.name)),
                  entry.is_bias);
  }
  return out;
}

TrainStepResult train_step(const ModelParams& params,
                           const std::vector<const VolumeSample*>& batch,
                           const ModelConfig& cfg, double lr) {
  const LossAndGrad lg = batch_loss_and_grad(params, batch, cfg);
  TrainStepResult out;
  out.params = params;
  add_scaled(out.params, lg.grads, -lr);
  out.loss = lg.loss;
  return out;
}

PruneResult prune_by_magnitude(const ModelParams& params, double fraction) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) {
    throw DomainError("prune fraction must lie in [0,1]");
  }
  struct Coord {
    double mag;
    std::size_t entry;
    std::size_t flat;
  };
  std::vector<Coord> coords;
  for (std::size_t e = 0; e < params.entries().size(); ++e) {
    const auto& entry = params.entries()[e];
    if (entry.is_bias) {
      continue;
    }
    for (std::size_t i = 0; i < entry.value.size(); ++i) {
      coords.push_back({std::fabs(entry.value[i]), e, i});
    }
  }
  const std::size_t total = coords.size();
  std::size_t keep = 0;
  if (total > 0) {
    const double raw =
        std::ceil((1.0 - fraction) * static_cast<double>(total) - 1e-9);
    keep = raw <= 0.0 ? 0 : static_cast<std::size_t>(raw);
    keep = std::min(keep, total);
  }
  const std::size_t zeroed = total - keep;
  std::sort(coords.begin(), coords.end(), [](const Coord& a, const Coord& b) {
    if (a.mag != b.mag) {
      return a.mag < b.mag;
    }
    if (a.entry != b.entry) {
      return a.entry < b.entry;
    }
    return a.flat < b.flat;
  });
  PruneResult out;
  out.params = params;
  for (const auto& entry : params.entries()) {
    out.mask.add(entry.name, Tensor::full(entry.value.shape(), 1.0),
                 entry.is_bias);
  }
  for (std::size_t i = 0; i < zeroed; ++i) {
    const Coord& c = coords[i];
    out.params.entries()[c.entry].value[c.flat] = 0.0;
    out.mask.entries()[c.entry].value[c.flat] = 0.0;
  }
  return out;
}

}  // namespace fedscan
