#include "fedscan/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "fedscan/errors.hpp"
#include "fedscan/io.hpp"
#include "fedscan/model.hpp"

namespace fedscan {

namespace {

void require_binary(const Tensor& labels, const char* what) {
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0.0 && labels[i] != 1.0) {
      throw DomainError(std::string(what) + " must be 0/1 valued");
    }
  }
}

std::string fmt_double(double v) {
  if (std::isnan(v)) {
    return "nan";
  }
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double parse_double_field(const std::string& text, const std::string& field,
                          std::size_t line_no) {
  const char* s = text.c_str();
  char* end = nullptr;
  const double v = std::strtod(s, &end);
  if (end == s || *end != '\0') {
    throw ParseError("field '" + field + "' has a malformed number '" + text +
                         "'",
                     line_no);
  }
  return v;
}

std::uint64_t parse_u64_field(const std::string& text, const std::string& field,
                              std::size_t line_no) {
  if (text.empty() ||
      text.find_first_not_of("0123456789") != std::string::npos) {
    throw ParseError("field '" + field + "' has a malformed integer '" + text +
                         "'",
                     line_no);
  }
  errno = 0;
  const unsigned long long v = std::strtoull(text.c_str(), nullptr, 10);
  if (errno != 0) {
    throw ParseError("field '" + field + "' overflows", line_no);
  }
  return v;
}

void check_unit_interval(double v, const std::string& field,
                         std::size_t line_no) {
  if (!std::isnan(v) && !(v >= 0.0 && v <= 1.0)) {
    throw ParseError("field '" + field + "' is outside [0,1]", line_no);
  }
}

}  // namespace

double compute_accuracy(const Tensor& scores, const Tensor& labels,
                        double threshold) {
  if (scores.rank() != 2 || labels.rank() != 2 ||
      !scores.same_shape(labels)) {
    throw ContractError("accuracy inputs must be [N,L] with equal shapes, got " +
                        shape_str(scores.shape()) + " vs " +
                        shape_str(labels.shape()));
  }
  require_binary(labels, "accuracy labels");
  if (scores.size() == 0) {
    throw ContractError("accuracy over an empty matrix is undefined");
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i] >= threshold;
    const bool truth = labels[i] != 0.0;
    correct += (pred == truth) ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(scores.size());
}

std::optional<double> compute_average_precision(
    const std::vector<double>& scores,
    const std::vector<std::uint8_t>& labels) {
  if (scores.size() != labels.size()) {
    throw ContractError("AP inputs must have equal length");
  }
  std::size_t num_pos = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] > 1) {
      throw DomainError("AP labels must be 0/1 valued");
    }
    num_pos += labels[i];
  }
  if (num_pos == 0) {
    return std::nullopt;
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) {
                     if (scores[a] != scores[b]) {
                       return scores[a] > scores[b];
                     }
                     return a < b;
                   });
  double sum = 0.0;
  std::size_t cum_pos = 0;
  for (std::size_t rank = 1; rank <= order.size(); ++rank) {
    if (labels[order[rank - 1]]) {
      ++cum_pos;
      sum += static_cast<double>(cum_pos) / static_cast<double>(rank);
    }
  }
  return sum / static_cast<double>(num_pos);
}

EvalMetrics compute_eval_metrics(const Tensor& scores, const Tensor& labels,
                                 double threshold) {
  if (scores.rank() != 2 || scores.dim(1) != kNumLabels) {
    throw ContractError("eval metrics expect [N,6] scores, got " +
                        shape_str(scores.shape()));
  }
  EvalMetrics m;
  m.accuracy = compute_accuracy(scores, labels, threshold);
  const int n = scores.dim(0);
  double ap_sum = 0.0;
  for (int j = 0; j < kNumLabels; ++j) {
    std::vector<double> col_scores(static_cast<std::size_t>(n));
    std::vector<std::uint8_t> col_labels(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      col_scores[static_cast<std::size_t>(i)] =
          scores[static_cast<std::size_t>(i * kNumLabels + j)];
      col_labels[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(
          labels[static_cast<std::size_t>(i * kNumLabels + j)]);
    }
    const std::optional<double> ap =
        compute_average_precision(col_scores, col_labels);
    if (ap.has_value()) {
      m.ap[static_cast<std::size_t>(j)] = *ap;
      ap_sum += *ap;
      ++m.ap_defined;
    } else {
      m.ap[static_cast<std::size_t>(j)] =
          std::numeric_limits<double>::quiet_NaN();
    }
  }
  m.mean_ap = m.ap_defined > 0
                  ? ap_sum / m.ap_defined
                  : std::numeric_limits<double>::quiet_NaN();
  return m;
}

std::string format_report_line(const RoundReport& r) {
  std::ostringstream os;
  os << "round=" << r.round_index << " selected=";
  if (r.selected.empty()) {
    os << '-';
  } else {
    for (std::size_t i = 0; i < r.selected.size(); ++i) {
      if (i > 0) {
        os << ',';
      }
      os << r.selected[i];
    }
  }
  os << " loss=" << fmt_double(r.mean_loss) << " acc=" << fmt_double(r.accuracy);
  for (int j = 0; j < 6; ++j) {
    os << " ap" << j << "=" << fmt_double(r.ap[static_cast<std::size_t>(j)]);
  }
  os << " map=" << fmt_double(r.mean_ap) << " ap_defined=" << r.ap_defined
     << " uplink=" << r.uplink_bytes << " downlink=" << r.downlink_bytes
     << " seconds=" << fmt_double(r.seconds);
  return os.str();
}

RoundReport parse_report_line(const std::string& line, std::size_t line_no) {
  static const char* kFields[] = {"round", "selected", "loss",  "acc",
                                  "ap0",   "ap1",      "ap2",   "ap3",
                                  "ap4",   "ap5",      "map",   "ap_defined",
                                  "uplink", "downlink", "seconds"};
  std::istringstream tokens(line);
  RoundReport r;
  for (const char* field : kFields) {
    std::string tok;
    if (!(tokens >> tok)) {
      throw ParseError(std::string("missing field '") + field + "'", line_no);
    }
    const std::string prefix = std::string(field) + "=";
    if (tok.rfind(prefix, 0) != 0) {
      throw ParseError(std::string("expected field '") + field + "', found '" +
                           tok + "'",
                       line_no);
    }
    const std::string value = tok.substr(prefix.size());
    const std::string name = field;
    if (name == "round") {
      r.round_index =
          static_cast<std::uint32_t>(parse_u64_field(value, name, line_no));
    } else if (name == "selected") {
      if (value != "-") {
        std::size_t start = 0;
        while (start <= value.size()) {
          const std::size_t comma = value.find(',', start);
          const std::string part =
              value.substr(start, comma == std::string::npos
                                      ? std::string::npos
                                      : comma - start);
          const std::uint64_t id = parse_u64_field(part, name, line_no);
          const int iid = static_cast<int>(id);
          if (!r.selected.empty() && iid <= r.selected.back()) {
            throw ParseError("field 'selected' ids are not ascending",
                             line_no);
          }
          r.selected.push_back(iid);
          if (comma == std::string::npos) {
            break;
          }
          start = comma + 1;
        }
      }
    } else if (name == "loss") {
      r.mean_loss = parse_double_field(value, name, line_no);
    } else if (name == "acc") {
      r.accuracy = parse_double_field(value, name, line_no);
      check_unit_interval(r.accuracy, name, line_no);
    } else if (name.rfind("ap", 0) == 0 && name.size() == 3) {
      const int j = name[2] - '0';
      r.ap[static_cast<std::size_t>(j)] =
          parse_double_field(value, name, line_no);
      check_unit_interval(r.ap[static_cast<std::size_t>(j)], name, line_no);
    } else if (name == "map") {
      r.mean_ap = parse_double_field(value, name, line_no);
      check_unit_interval(r.mean_ap, name, line_no);
    } else if (name == "ap_defined") {
      r.ap_defined = static_cast<int>(parse_u64_field(value, name, line_no));
      if (r.ap_defined > 6) {
        throw ParseError("field 'ap_defined' exceeds 6", line_no);
      }
    } else if (name == "uplink") {
      r.uplink_bytes = parse_u64_field(value, name, line_no);
    } else if (name == "downlink") {
      r.downlink_bytes = parse_u64_field(value, name, line_no);
    } else {
      r.seconds = parse_double_field(value, name, line_no);
    }
  }
  std::string extra;
  if (tokens >> extra) {
    throw ParseError("unexpected trailing field '" + extra + "'", line_no);
  }
  return r;
}

void append_report(const RoundReport& report, const std::string& path) {
  std::ofstream out(path, std::ios::app);
  if (!out) {
    throw IoError("cannot open " + path + " for appending");
  }
  out << format_report_line(report) << '\n';
  out.flush();
  if (!out) {
    throw IoError("failed to append report to " + path);
  }
}

std::vector<RoundReport> read_reports(const std::string& path) {
  const std::string text = read_file_text(path);
  std::vector<RoundReport> out;
  std::istringstream lines(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(lines, line)) {
    ++line_no;
    if (line.empty()) {
      continue;
    }
    out.push_back(parse_report_line(line, line_no));
  }
  return out;
}

void save_checkpoint(const ModelParams& params, const CheckpointMeta& meta,
                     const std::string& path) {
  ByteWriter bw;
  bw.bytes("FSCK", 4);
  bw.u16(1);
  bw.u64(meta.config_hash);
  bw.u32(meta.round_index);
  bw.u64(static_cast<std::uint64_t>(params.coord_count()));
  bw.u64(meta.creation_seed);
  bw.u32(static_cast<std::uint32_t>(params.tensor_count()));
  for (const auto& entry : params.entries()) {
    if (entry.name.size() > 0xffff) {
      throw DomainError("tensor name too long for checkpoint format");
    }
    bw.u16(static_cast<std::uint16_t>(entry.name.size()));
    bw.bytes(entry.name.data(), entry.name.size());
    bw.u8(static_cast<std::uint8_t>(entry.value.rank()));
    for (std::size_t d = 0; d < entry.value.rank(); ++d) {
      bw.u32(static_cast<std::uint32_t>(entry.value.dim(d)));
    }
    for (std::size_t i = 0; i < entry.value.size(); ++i) {
      bw.f64(entry.value[i]);
    }
  }
  write_file_bytes(path, bw.buffer());
}

LoadedCheckpoint load_checkpoint(
    const std::string& path,
    std::optional<std::uint64_t> expected_config_hash) {
  const std::vector<std::uint8_t> buf = read_file_bytes(path);
  ByteReader r(buf);
  r.expect_magic("FSCK", 4);
  std::size_t off = r.offset();
  const std::uint16_t version = r.u16();
  if (version != 1) {
    throw FormatError("unsupported checkpoint version " +
                          std::to_string(version),
                      off);
  }
  LoadedCheckpoint out;
  off = r.offset();
  out.meta.config_hash = r.u64();
  if (expected_config_hash.has_value() &&
      out.meta.config_hash != *expected_config_hash) {
    throw FormatError("checkpoint config hash mismatch", off);
  }
  out.meta.round_index = r.u32();
  out.meta.param_count = r.u64();
  out.meta.creation_seed = r.u64();
  const std::uint32_t tensor_count = r.u32();
  std::uint64_t coords = 0;
  for (std::uint32_t t = 0; t < tensor_count; ++t) {
    const std::uint16_t name_len = r.u16();
    off = r.offset();
    if (name_len == 0) {
      throw FormatError("empty tensor name", off);
    }
    std::string name(name_len, '\0');
    r.raw(name.data(), name_len, "tensor name");
    off = r.offset();
    const std::uint8_t rank = r.u8();
    if (rank == 0) {
      throw FormatError("tensor '" + name + "' has zero rank", off);
    }
    Shape shape;
    std::uint64_t numel = 1;
    for (std::uint8_t d = 0; d < rank; ++d) {
      off = r.offset();
      const std::uint32_t dim = r.u32();
      if (dim == 0) {
        throw FormatError("tensor '" + name + "' has a zero dimension", off);
      }
      if (dim > 0x7fffffffu || numel > (1ull << 40) / dim) {
        throw FormatError("tensor '" + name + "' dimensions overflow", off);
      }
      numel *= dim;
      shape.push_back(static_cast<int>(dim));
    }
    if (r.remaining() < numel * 8) {
      throw FormatError("tensor '" + name +
                            "' payload exceeds remaining file size",
                        r.offset());
    }
    Tensor value = Tensor::zeros(shape);
    for (std::uint64_t i = 0; i < numel; ++i) {
      value[static_cast<std::size_t>(i)] = r.f64();
    }
    if (out.params.contains(name)) {
      throw FormatError("duplicate tensor name '" + name + "'", off);
    }
    out.params.add(name, std::move(value), is_bias_name(name));
    coords += numel;
  }
  r.require_end();
  if (coords != out.meta.param_count) {
    throw FormatError("parameter count field disagrees with tensor payload (" +
                          std::to_string(out.meta.param_count) + " vs " +
                          std::to_string(coords) + ")",
                      18);
  }
  return out;
}

}  // namespace fedscan
