#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedscan/data.hpp"
#include "fedscan/fed.hpp"
#include "fedscan/model.hpp"

namespace fedscan {

/// The single source of truth for every command: a JSON file with four
/// sections plus the output directory. Unknown keys anywhere are
/// rejected; "--set dotted.path=value" overrides individual keys.
struct RunConfig {
  ModelConfig model;

  struct Data {
    int n = 400;
    std::uint64_t seed = 1;
  } data;

  PartitionSpec partition;

  struct Federation {
    std::uint32_t rounds = 1;
    double fraction = 1.0;
    double lr = 0.05;
    int local_epochs = 1;
    int batch_size = 8;
    double availability = 1.0;
    std::uint64_t seed = 3;
    double eval_fraction = 0.2;
    double dp_clip_norm = 0.0;  // 0 disables DP
    double dp_sigma = 0.0;
    std::uint64_t dp_seed = 0;
    bool masking = false;
    bool parallel = false;
  } federation;

  std::string output_dir = "out";

  void validate() const;

  bool dp_enabled() const { return federation.dp_clip_norm > 0.0; }
  DPConfig dp_config() const;
  FedOptions fed_options() const;

  /// Count of trailing dataset indices held out for evaluation.
  int eval_count() const;
  std::vector<int> train_indices() const;
  std::vector<int> eval_indices() const;

  /// Canonical JSON text of the fully resolved config (sorted keys,
  /// 2-space indent, trailing newline); byte-deterministic.
  std::string resolved_json() const;
};

RunConfig default_run_config();

/// Parses JSON text; every key must be known and well-typed, then the
/// resulting config is validated.
RunConfig parse_run_config(const std::string& json_text,
                           const std::vector<std::string>& overrides = {});

/// Reads the file and applies "--set" overrides ("a.b.c=value").
RunConfig load_run_config(const std::string& path,
                          const std::vector<std::string>& overrides = {});

/// Writes resolved_json() as config.resolved.json inside dir.
void echo_resolved_config(const RunConfig& cfg, const std::string& dir);

}  // namespace fedscan
