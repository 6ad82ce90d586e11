#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fedscan/params.hpp"
#include "fedscan/tensor.hpp"

namespace fedscan {

/// Fraction of (sample,label) cells where (score >= threshold) equals the
/// label. Scores and labels are [N,L]-shaped with matching dims.
double compute_accuracy(const Tensor& scores, const Tensor& labels,
                        double threshold = 0.5);

/// Rank-walk average precision: sort by descending score, ties broken by
/// ascending original index; AP = mean over positives of precision at each
/// positive's rank. Empty when the label column has no positives.
std::optional<double> compute_average_precision(
    const std::vector<double>& scores, const std::vector<std::uint8_t>& labels);

struct EvalMetrics {
  double accuracy = 0.0;
  std::array<double, 6> ap{};  // NaN where undefined
  double mean_ap = 0.0;        // over defined labels only; NaN if none
  int ap_defined = 0;
};

/// Per-label AP plus their mean over the labels that have positives.
EvalMetrics compute_eval_metrics(const Tensor& scores, const Tensor& labels,
                                 double threshold = 0.5);

struct RoundReport {
  std::uint32_t round_index = 0;
  std::vector<int> selected;  // ascending client ids; empty for a skipped
                              // round or a centralized run
  double mean_loss = 0.0;
  double accuracy = 0.0;
  std::array<double, 6> ap{};
  double mean_ap = 0.0;
  int ap_defined = 0;
  std::uint64_t uplink_bytes = 0;
  std::uint64_t downlink_bytes = 0;
  double seconds = 0.0;  // modeled simulation time, not measured

  bool operator==(const RoundReport&) const = default;
};

/// One report as a single "key=value ..." line, doubles printed with 17
/// significant digits so they round-trip exactly.
std::string format_report_line(const RoundReport& report);
RoundReport parse_report_line(const std::string& line, std::size_t line_no);

void append_report(const RoundReport& report, const std::string& path);
std::vector<RoundReport> read_reports(const std::string& path);

struct CheckpointMeta {
  std::uint64_t config_hash = 0;
  std::uint32_t round_index = 0;
  std::uint64_t param_count = 0;  // total scalar coordinates
  std::uint64_t creation_seed = 0;

  bool operator==(const CheckpointMeta&) const = default;
};

void save_checkpoint(const ModelParams& params, const CheckpointMeta& meta,
                     const std::string& path);

struct LoadedCheckpoint {
  ModelParams params;
  CheckpointMeta meta;
};

/// Reads a checkpoint; when expected_config_hash is given, a mismatch with
/// the stored hash is an error before any params are returned.
LoadedCheckpoint load_checkpoint(
    const std::string& path,
    std::optional<std::uint64_t> expected_config_hash = std::nullopt);

}  // namespace fedscan
