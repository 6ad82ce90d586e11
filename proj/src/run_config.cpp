#include "fedscan/run_config.hpp"

#include <cmath>
#include <filesystem>
#include <limits>
#include <numeric>

#include <json.hpp>

#include "fedscan/errors.hpp"
#include "fedscan/io.hpp"

namespace fedscan {

namespace {

using nlohmann::json;

json to_json(const RunConfig& cfg) {
  json j;
  j["model"]["input_hw"] = cfg.model.input_hw;
  j["model"]["slices"] = cfg.model.slices;
  j["model"]["growth_rate"] = cfg.model.growth_rate;
  j["model"]["block_layout"] = cfg.model.block_layout;
  j["model"]["gru_hidden"] = cfg.model.gru_hidden;
  j["data"]["n"] = cfg.data.n;
  j["data"]["seed"] = cfg.data.seed;
  j["partition"]["num_clients"] = cfg.partition.num_clients;
  j["partition"]["alpha"] = cfg.partition.alpha;
  j["partition"]["seed"] = cfg.partition.seed;
  json& f = j["federation"];
  f["rounds"] = cfg.federation.rounds;
  f["fraction"] = cfg.federation.fraction;
  f["lr"] = cfg.federation.lr;
  f["local_epochs"] = cfg.federation.local_epochs;
  f["batch_size"] = cfg.federation.batch_size;
  f["availability"] = cfg.federation.availability;
  f["seed"] = cfg.federation.seed;
  f["eval_fraction"] = cfg.federation.eval_fraction;
  f["dp_clip_norm"] = cfg.federation.dp_clip_norm;
  f["dp_sigma"] = cfg.federation.dp_sigma;
  f["dp_seed"] = cfg.federation.dp_seed;
  f["masking"] = cfg.federation.masking;
  f["parallel"] = cfg.federation.parallel;
  j["output_dir"] = cfg.output_dir;
  return j;
}

void merge_checked(json& base, const json& user, const std::string& prefix) {
  if (!user.is_object()) {
    throw ConfigError(prefix.empty()
                          ? "top-level config must be a JSON object"
                          : "config key '" + prefix + "' must be an object");
  }
  for (const auto& [key, value] : user.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!base.contains(key)) {
      throw ConfigError("unknown config key '" + path + "'");
    }
    if (base[key].is_object()) {
      merge_checked(base[key], value, path);
    } else {
      base[key] = value;
    }
  }
}

void apply_override(json& base, const std::string& spec) {
  const std::size_t eq = spec.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + spec + "' is not of the form key=value");
  }
  const std::string dotted = spec.substr(0, eq);
  const std::string raw = spec.substr(eq + 1);
  json* node = &base;
  std::size_t start = 0;
  std::string walked;
  while (true) {
    const std::size_t dot = dotted.find('.', start);
    const std::string seg = dotted.substr(
        start, dot == std::string::npos ? std::string::npos : dot - start);
    walked = walked.empty() ? seg : walked + "." + seg;
    if (seg.empty() || !node->is_object() || !node->contains(seg)) {
      throw ConfigError("unknown config key '" + walked + "'");
    }
    node = &(*node)[seg];
    if (dot == std::string::npos) {
      break;
    }
    start = dot + 1;
  }
  if (node->is_object()) {
    throw ConfigError("config key '" + dotted +
                      "' is a section, not a value");
  }
  json parsed = json::parse(raw, nullptr, /*allow_exceptions=*/false);
  if (parsed.is_discarded() || parsed.is_object()) {
    *node = raw;  // plain string value
  } else {
    *node = std::move(parsed);
  }
}

const json& walk(const json& j, const std::string& path) {
  const json* node = &j;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = path.find('.', start);
    const std::string seg = path.substr(
        start, dot == std::string::npos ? std::string::npos : dot - start);
    node = &node->at(seg);
    if (dot == std::string::npos) {
      return *node;
    }
    start = dot + 1;
  }
}

std::int64_t require_int(const json& j, const std::string& path) {
  const json& node = walk(j, path);
  if (!node.is_number_integer() && !node.is_number_unsigned()) {
    throw ConfigError("config key '" + path + "' must be an integer");
  }
  return node.get<std::int64_t>();
}

int require_int32(const json& j, const std::string& path) {
  const std::int64_t v = require_int(j, path);
  if (v < std::numeric_limits<int>::min() ||
      v > std::numeric_limits<int>::max()) {
    throw ConfigError("config key '" + path + "' is out of range");
  }
  return static_cast<int>(v);
}

std::uint64_t require_u64(const json& j, const std::string& path) {
  const json& node = walk(j, path);
  if (node.is_number_unsigned()) {
    return node.get<std::uint64_t>();
  }
  if (node.is_number_integer() && node.get<std::int64_t>() >= 0) {
    return static_cast<std::uint64_t>(node.get<std::int64_t>());
  }
  throw ConfigError("config key '" + path +
                    "' must be a non-negative integer");
}

double require_double(const json& j, const std::string& path) {
  const json& node = walk(j, path);
  if (!node.is_number()) {
    throw ConfigError("config key '" + path + "' must be a number");
  }
  return node.get<double>();
}

bool require_bool(const json& j, const std::string& path) {
  const json& node = walk(j, path);
  if (!node.is_boolean()) {
    throw ConfigError("config key '" + path + "' must be a boolean");
  }
  return node.get<bool>();
}

std::string require_string(const json& j, const std::string& path) {
  const json& node = walk(j, path);
  if (!node.is_string()) {
    throw ConfigError("config key '" + path + "' must be a string");
  }
  return node.get<std::string>();
}

std::vector<int> require_int_array(const json& j, const std::string& path) {
  const json& node = walk(j, path);
  if (!node.is_array()) {
    throw ConfigError("config key '" + path +
                      "' must be an array of integers");
  }
  std::vector<int> out;
  for (const json& item : node) {
    if (!item.is_number_integer() && !item.is_number_unsigned()) {
      throw ConfigError("config key '" + path +
                        "' must be an array of integers");
    }
    out.push_back(item.get<int>());
  }
  return out;
}

RunConfig extract(const json& j) {
  RunConfig cfg;
  cfg.model.input_hw = require_int32(j, "model.input_hw");
  cfg.model.slices = require_int32(j, "model.slices");
  cfg.model.growth_rate = require_int32(j, "model.growth_rate");
  cfg.model.block_layout = require_int_array(j, "model.block_layout");
  cfg.model.gru_hidden = require_int32(j, "model.gru_hidden");
  cfg.data.n = require_int32(j, "data.n");
  cfg.data.seed = require_u64(j, "data.seed");
  cfg.partition.num_clients = require_int32(j, "partition.num_clients");
  cfg.partition.alpha = require_double(j, "partition.alpha");
  cfg.partition.seed = require_u64(j, "partition.seed");
  const std::uint64_t rounds = require_u64(j, "federation.rounds");
  if (rounds > 0xffffffffull) {
    throw ConfigError("config key 'federation.rounds' is out of range");
  }
  cfg.federation.rounds = static_cast<std::uint32_t>(rounds);
  cfg.federation.fraction = require_double(j, "federation.fraction");
  cfg.federation.lr = require_double(j, "federation.lr");
  cfg.federation.local_epochs = require_int32(j, "federation.local_epochs");
  cfg.federation.batch_size = require_int32(j, "federation.batch_size");
  cfg.federation.availability = require_double(j, "federation.availability");
  cfg.federation.seed = require_u64(j, "federation.seed");
  cfg.federation.eval_fraction = require_double(j, "federation.eval_fraction");
  cfg.federation.dp_clip_norm = require_double(j, "federation.dp_clip_norm");
  cfg.federation.dp_sigma = require_double(j, "federation.dp_sigma");
  cfg.federation.dp_seed = require_u64(j, "federation.dp_seed");
  cfg.federation.masking = require_bool(j, "federation.masking");
  cfg.federation.parallel = require_bool(j, "federation.parallel");
  cfg.output_dir = require_string(j, "output_dir");
  return cfg;
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  partition.validate();
  if (data.n < 1) {
    throw ConfigError("data.n must be >= 1");
  }
  if (!(federation.eval_fraction >= 0.0 && federation.eval_fraction < 1.0)) {
    throw ConfigError("federation.eval_fraction must lie in [0,1)");
  }
  if (!(federation.dp_clip_norm >= 0.0)) {
    throw ConfigError("federation.dp_clip_norm must be >= 0");
  }
  if (federation.dp_sigma > 0.0 && federation.dp_clip_norm == 0.0) {
    throw ConfigError(
        "federation.dp_sigma requires federation.dp_clip_norm > 0");
  }
  fed_options().validate();
  if (data.n - eval_count() < 1) {
    throw ConfigError("federation.eval_fraction leaves no training data");
  }
  if (output_dir.empty()) {
    throw ConfigError("output_dir must not be empty");
  }
}

DPConfig RunConfig::dp_config() const {
  DPConfig dp;
  dp.clip_norm = federation.dp_clip_norm;
  dp.sigma = federation.dp_sigma;
  dp.seed = federation.dp_seed;
  return dp;
}

FedOptions RunConfig::fed_options() const {
  FedOptions opt;
  opt.rounds = federation.rounds;
  opt.fraction = federation.fraction;
  opt.lr = federation.lr;
  opt.local_epochs = federation.local_epochs;
  opt.batch_size = federation.batch_size;
  opt.availability = federation.availability;
  if (dp_enabled()) {
    opt.dp = dp_config();
  }
  opt.masking = federation.masking;
  opt.seed = federation.seed;
  opt.parallel = federation.parallel;
  return opt;
}

int RunConfig::eval_count() const {
  const long long c = std::llround(federation.eval_fraction * data.n);
  return static_cast<int>(
      std::clamp<long long>(c, 0, static_cast<long long>(data.n)));
}

std::vector<int> RunConfig::train_indices() const {
  std::vector<int> idx(static_cast<std::size_t>(data.n - eval_count()));
  std::iota(idx.begin(), idx.end(), 0);
  return idx;
}

std::vector<int> RunConfig::eval_indices() const {
  std::vector<int> idx(static_cast<std::size_t>(eval_count()));
  std::iota(idx.begin(), idx.end(), data.n - eval_count());
  return idx;
}

std::string RunConfig::resolved_json() const {
  return to_json(*this).dump(2) + "\n";
}

RunConfig default_run_config() { return RunConfig{}; }

RunConfig parse_run_config(const std::string& json_text,
                           const std::vector<std::string>& overrides) {
  json user = json::parse(json_text, nullptr, /*allow_exceptions=*/false);
  if (user.is_discarded()) {
    throw ConfigError("config file is not valid JSON");
  }
  json base = to_json(default_run_config());
  merge_checked(base, user, "");
  for (const std::string& spec : overrides) {
    apply_override(base, spec);
  }
  RunConfig cfg = extract(base);
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::string& path,
                          const std::vector<std::string>& overrides) {
  return parse_run_config(read_file_text(path), overrides);
}

void echo_resolved_config(const RunConfig& cfg, const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) {
    throw IoError("cannot create directory " + dir + ": " + ec.message());
  }
  write_file_text(dir + "/config.resolved.json", cfg.resolved_json());
}

}  // namespace fedscan
