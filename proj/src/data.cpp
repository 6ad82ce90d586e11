#include "fedscan/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <sstream>

#include "fedscan/errors.hpp"
#include "fedscan/io.hpp"
#include "fedscan/rng.hpp"

namespace fedscan {

namespace {

// Subtype contrast bands, brightest for the thinnest shapes so every
// family stays well above the background (<= ~0.39 plus noise).
constexpr double kContrast[5] = {0.45, 0.55, 0.65, 0.75, 0.85};

struct Lesion {
  int subtype = -1;
  int first_slice = 0;
  int last_slice = -1;
  double jitter = 1.0;
  // geometry in normalized coordinates: the inscribed circle of the image
  // maps to the unit disc
  double cx = 0.0, cy = 0.0;
  double rx = 0.0, ry = 0.0;
  double theta0 = 0.0, span = 0.0;
  double r_in = 0.0, r_out = 0.0;

  bool covers(int s) const { return s >= first_slice && s <= last_slice; }

  bool contains(double nx, double ny, int px, int py) const {
    switch (subtype) {
      case 0:  // compact ellipse pressed against the rim
      case 1:  // large deep blob
      case 2:  // vertical bar near the midline
      case 4: {  // flat horizontal lens hugging the rim
        const double dx = (nx - cx) / rx;
        const double dy = (ny - cy) / ry;
        return dx * dx + dy * dy <= 1.0;
      }
      case 3: {  // thin speckled arc of the rim annulus
        const double r = std::sqrt(nx * nx + ny * ny);
        if (r < r_in || r > r_out) {
          return false;
        }
        double ang = std::atan2(ny, nx) - theta0;
        const double two_pi = 2.0 * std::numbers::pi;
        ang -= two_pi * std::floor(ang / two_pi);
        if (ang > span) {
          return false;
        }
        return ((px + py) % 2) == 0;  // speckle
      }
      default:
        return false;
    }
  }
};

Lesion draw_lesion(Rng& rng, int slices) {
  Lesion l;
  l.subtype = static_cast<int>(rng.below(5));
  // lesions span at least two slices when the stack allows it
  const int min_len = slices >= 2 ? 2 : 1;
  const int len = min_len + static_cast<int>(rng.below(
      static_cast<std::uint64_t>(slices - min_len + 1)));
  l.first_slice = static_cast<int>(
      rng.below(static_cast<std::uint64_t>(slices - len + 1)));
  l.last_slice = l.first_slice + len - 1;
  l.jitter = 0.9 + 0.2 * rng.uniform01();
  switch (l.subtype) {
    case 0: {
      const double theta = rng.uniform01() * 2.0 * std::numbers::pi;
      const double rc = 0.50 + 0.08 * rng.uniform01();
      l.cx = rc * std::cos(theta);
      l.cy = rc * std::sin(theta);
      l.rx = 0.42 + 0.10 * rng.uniform01();
      l.ry = 0.26 + 0.08 * rng.uniform01();
      break;
    }
    case 1: {
      l.cx = (rng.uniform01() - 0.5) * 0.30;
      l.cy = (rng.uniform01() - 0.5) * 0.30;
      l.rx = l.ry = 0.48 + 0.12 * rng.uniform01();
      break;
    }
    case 2: {
      l.cx = (rng.uniform01() - 0.5) * 0.20;
      l.cy = (rng.uniform01() - 0.5) * 0.30;
      l.rx = 0.16 + 0.06 * rng.uniform01();
      l.ry = 0.62 + 0.16 * rng.uniform01();
      break;
    }
    case 3: {
      l.theta0 = rng.uniform01() * 2.0 * std::numbers::pi;
      l.span = 2.2 + 1.2 * rng.uniform01();
      l.r_in = 0.52 + 0.08 * rng.uniform01();
      l.r_out = l.r_in + 0.24 + 0.08 * rng.uniform01();
      break;
    }
    case 4: {
      const bool top = rng.below(2) == 0;
      l.cx = (rng.uniform01() - 0.5) * 0.20;
      l.cy = (top ? -1.0 : 1.0) * (0.52 + 0.10 * rng.uniform01());
      l.rx = 0.55 + 0.15 * rng.uniform01();
      l.ry = 0.16 + 0.06 * rng.uniform01();
      break;
    }
    default:
      break;
  }
  return l;
}

VolumeSample generate_volume(int index, const ModelConfig& cfg,
                             std::uint64_t seed) {
  const int s = cfg.slices, h = cfg.input_hw, w = cfg.input_hw;
  Rng rng(derive_key(seed, {fnv1a64("volume"),
                            static_cast<std::uint64_t>(index)}));
  const double bg_base = 0.25 + 0.05 * rng.uniform01();
  const double tilt_x = (rng.uniform01() - 0.5) * 0.04;
  const double tilt_y = (rng.uniform01() - 0.5) * 0.04;
  const bool negative = rng.uniform01() < 0.5;
  Lesion lesion;
  if (!negative) {
    lesion = draw_lesion(rng, s);
  }

  VolumeSample sample;
  sample.volume = Tensor::zeros({s, 1, h, w});
  sample.slice_labels.assign(static_cast<std::size_t>(s), {});
  double* out = sample.volume.data();
  for (int sl = 0; sl < s; ++sl) {
    const bool lesioned = !negative && lesion.covers(sl);
    for (int py = 0; py < h; ++py) {
      for (int px = 0; px < w; ++px) {
        const double noise = rng.uniform01();
        const double ux = (px + 0.5) / w, uy = (py + 0.5) / h;
        const double nx = (ux - 0.5) * 2.0, ny = (uy - 0.5) * 2.0;
        const double d2 = nx * nx + ny * ny;
        double val;
        if (d2 <= 0.95 * 0.95) {
          val = bg_base + 0.06 * (1.0 - d2) + tilt_x * nx + tilt_y * ny;
        } else {
          val = 0.03;
        }
        val += (noise - 0.5) * 0.02;
        if (lesioned && lesion.contains(nx, ny, px, py)) {
          val += kContrast[lesion.subtype] * lesion.jitter;
        }
        val = std::clamp(val, 0.0, 1.0);
        // freeze to float32 so the in-memory dataset equals its own
        // file round-trip exactly
        *out++ = static_cast<double>(static_cast<float>(val));
      }
    }
    if (lesioned) {
      sample.slice_labels[static_cast<std::size_t>(sl)]
                         [static_cast<std::size_t>(lesion.subtype)] = 1;
      sample.slice_labels[static_cast<std::size_t>(sl)][kAnyLabel] = 1;
    }
  }
  for (int sl = 0; sl < s; ++sl) {
    for (int j = 0; j < 6; ++j) {
      if (sample.slice_labels[static_cast<std::size_t>(sl)]
                             [static_cast<std::size_t>(j)]) {
        sample.volume_labels[static_cast<std::size_t>(j)] = 1;
      }
    }
  }
  return sample;
}

}  // namespace

std::vector<VolumeSample> generate_dataset(int n, const ModelConfig& cfg,
                                           std::uint64_t seed) {
  if (n < 1) {
    throw DomainError("generate_dataset requires n >= 1");
  }
  cfg.validate();
  std::vector<VolumeSample> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    out.push_back(generate_volume(i, cfg, seed));
  }
  return out;
}

void PartitionSpec::validate() const {
  if (num_clients < 1) {
    throw ConfigError("partition.num_clients must be >= 1");
  }
  if (!(alpha > 0.0)) {
    throw ConfigError("partition.alpha must be > 0");
  }
}

int dominant_group(const std::array<std::uint8_t, 6>& volume_labels) {
  for (int j = 0; j < 6; ++j) {
    if (volume_labels[static_cast<std::size_t>(j)]) {
      return j;
    }
  }
  return 6;
}

std::vector<std::vector<int>> partition_dirichlet(
    const std::vector<std::array<std::uint8_t, 6>>& volume_labels,
    const PartitionSpec& spec) {
  spec.validate();
  if (volume_labels.empty()) {
    throw DomainError("partition_dirichlet requires a nonempty dataset");
  }
  const int k = spec.num_clients;
  std::vector<std::vector<int>> groups(7);
  for (std::size_t i = 0; i < volume_labels.size(); ++i) {
    groups[static_cast<std::size_t>(dominant_group(volume_labels[i]))]
        .push_back(static_cast<int>(i));
  }
  std::vector<std::vector<int>> shards(static_cast<std::size_t>(k));
  for (int g = 0; g < 7; ++g) {
    std::vector<int>& members = groups[static_cast<std::size_t>(g)];
    if (members.empty()) {
      continue;
    }
    Rng prop_rng(derive_key(spec.seed, {fnv1a64("dirichlet"),
                                        static_cast<std::uint64_t>(g)}));
    const std::vector<double> p = prop_rng.dirichlet(spec.alpha, k);
    Rng shuf_rng(derive_key(spec.seed, {fnv1a64("partition"),
                                        static_cast<std::uint64_t>(g)}));
    shuf_rng.shuffle(members);
    const int m = static_cast<int>(members.size());
    double cum = 0.0;
    int prev = 0;
    for (int c = 0; c < k; ++c) {
      cum += p[static_cast<std::size_t>(c)];
      int bound = (c == k - 1)
                      ? m
                      : static_cast<int>(std::llround(cum * m));
      bound = std::clamp(bound, prev, m);
      for (int i = prev; i < bound; ++i) {
        shards[static_cast<std::size_t>(c)].push_back(
            members[static_cast<std::size_t>(i)]);
      }
      prev = bound;
    }
  }
  // top up empty shards so no client starves when there is enough data
  if (volume_labels.size() >= static_cast<std::size_t>(k)) {
    for (std::size_t c = 0; c < shards.size(); ++c) {
      if (!shards[c].empty()) {
        continue;
      }
      std::size_t donor = 0;
      for (std::size_t d = 1; d < shards.size(); ++d) {
        if (shards[d].size() > shards[donor].size()) {
          donor = d;
        }
      }
      std::sort(shards[donor].begin(), shards[donor].end());
      shards[c].push_back(shards[donor].back());
      shards[donor].pop_back();
    }
  }
  for (std::vector<int>& shard : shards) {
    std::sort(shard.begin(), shard.end());
  }
  return shards;
}

std::vector<std::vector<int>> partition_dirichlet(
    const std::vector<VolumeSample>& dataset, const PartitionSpec& spec) {
  std::vector<std::array<std::uint8_t, 6>> labels;
  labels.reserve(dataset.size());
  for (const VolumeSample& s : dataset) {
    labels.push_back(s.volume_labels);
  }
  return partition_dirichlet(labels, spec);
}

void save_volume(const std::string& path, const VolumeSample& sample) {
  const int s = sample.volume.dim(0), h = sample.volume.dim(2),
            w = sample.volume.dim(3);
  if (s > 0xffff || h > 0xffff || w > 0xffff) {
    throw DomainError("volume dimensions exceed the file format's u16 range");
  }
  ByteWriter bw;
  bw.bytes("FSCN", 4);
  bw.u16(1);
  bw.u16(static_cast<std::uint16_t>(s));
  bw.u16(static_cast<std::uint16_t>(h));
  bw.u16(static_cast<std::uint16_t>(w));
  for (int j = 0; j < 6; ++j) {
    bw.u8(sample.volume_labels[static_cast<std::size_t>(j)]);
  }
  for (int sl = 0; sl < s; ++sl) {
    for (int j = 0; j < 6; ++j) {
      bw.u8(sample.slice_labels[static_cast<std::size_t>(sl)]
                               [static_cast<std::size_t>(j)]);
    }
  }
  const double* v = sample.volume.data();
  for (std::size_t i = 0; i < sample.volume.size(); ++i) {
    bw.f32(static_cast<float>(v[i]));
  }
  write_file_bytes(path, bw.buffer());
}

VolumeSample load_volume(const std::string& path) {
  const std::vector<std::uint8_t> buf = read_file_bytes(path);
  ByteReader r(buf);
  r.expect_magic("FSCN", 4);
  std::size_t off = r.offset();
  const std::uint16_t version = r.u16();
  if (version != 1) {
    throw FormatError("unsupported format version " + std::to_string(version),
                      off);
  }
  off = r.offset();
  const int s = r.u16(), h = r.u16(), w = r.u16();
  if (s == 0 || h == 0 || w == 0) {
    throw FormatError("zero volume dimension", off);
  }
  const std::uint64_t need = 6ull + 6ull * s +
                             4ull * s * h * w;
  if (r.remaining() < need) {
    throw FormatError("declared dimensions exceed payload size", r.offset());
  }
  VolumeSample sample;
  for (int j = 0; j < 6; ++j) {
    off = r.offset();
    const std::uint8_t b = r.u8();
    if (b > 1) {
      throw FormatError("volume label byte is not 0/1", off);
    }
    sample.volume_labels[static_cast<std::size_t>(j)] = b;
  }
  sample.slice_labels.assign(static_cast<std::size_t>(s), {});
  for (int sl = 0; sl < s; ++sl) {
    for (int j = 0; j < 6; ++j) {
      off = r.offset();
      const std::uint8_t b = r.u8();
      if (b > 1) {
        throw FormatError("slice label byte is not 0/1", off);
      }
      sample.slice_labels[static_cast<std::size_t>(sl)]
                         [static_cast<std::size_t>(j)] = b;
    }
  }
  sample.volume = Tensor::zeros({s, 1, h, w});
  double* out = sample.volume.data();
  for (std::size_t i = 0; i < sample.volume.size(); ++i) {
    off = r.offset();
    const float f = r.f32();
    if (!(f >= 0.0f && f <= 1.0f)) {
      throw FormatError("intensity outside [0,1]", off);
    }
    out[i] = static_cast<double>(f);
  }
  r.require_end();
  // cross-level label consistency
  for (int j = 0; j < 6; ++j) {
    std::uint8_t any = 0;
    for (int sl = 0; sl < s; ++sl) {
      any |= sample.slice_labels[static_cast<std::size_t>(sl)]
                                [static_cast<std::size_t>(j)];
    }
    if (any != sample.volume_labels[static_cast<std::size_t>(j)]) {
      throw FormatError("volume label " + std::to_string(j) +
                            " disagrees with slice labels",
                        12 + static_cast<std::size_t>(j));
    }
  }
  for (int sl = 0; sl < s; ++sl) {
    std::uint8_t any = 0;
    for (int j = 0; j < 5; ++j) {
      any |= sample.slice_labels[static_cast<std::size_t>(sl)]
                                [static_cast<std::size_t>(j)];
    }
    if (any != sample.slice_labels[static_cast<std::size_t>(sl)][kAnyLabel]) {
      throw FormatError("slice 'any' label disagrees with subtype labels",
                        18 + static_cast<std::size_t>(sl) * 6 + 5);
    }
  }
  return sample;
}

std::string volume_file_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "volume_%05d.fsv", index);
  return buf;
}

void save_dataset(const std::string& dir,
                  const std::vector<VolumeSample>& dataset) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) {
    throw IoError("cannot create directory " + dir + ": " + ec.message());
  }
  std::ostringstream manifest;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const std::string name = volume_file_name(static_cast<int>(i));
    save_volume(dir + "/" + name, dataset[i]);
    manifest << name;
    for (int j = 0; j < 6; ++j) {
      manifest << ' '
               << static_cast<int>(
                      dataset[i].volume_labels[static_cast<std::size_t>(j)]);
    }
    manifest << '\n';
  }
  write_file_text(dir + "/manifest.txt", manifest.str());
}

std::vector<VolumeSample> load_dataset(const std::string& dir) {
  const std::string text = read_file_text(dir + "/manifest.txt");
  std::vector<VolumeSample> out;
  std::istringstream lines(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(lines, line)) {
    ++line_no;
    if (line.empty()) {
      continue;
    }
    std::istringstream fields(line);
    std::string name;
    if (!(fields >> name)) {
      throw ParseError("manifest row missing file name", line_no);
    }
    std::array<std::uint8_t, 6> labels{};
    for (int j = 0; j < 6; ++j) {
      int v = 0;
      if (!(fields >> v) || (v != 0 && v != 1)) {
        throw ParseError("manifest row has a malformed label column " +
                             std::to_string(j),
                         line_no);
      }
      labels[static_cast<std::size_t>(j)] = static_cast<std::uint8_t>(v);
    }
    std::string extra;
    if (fields >> extra) {
      throw ParseError("manifest row has trailing fields", line_no);
    }
    VolumeSample sample = load_volume(dir + "/" + name);
    if (sample.volume_labels != labels) {
      throw ParseError("manifest labels disagree with volume file " + name,
                       line_no);
    }
    out.push_back(std::move(sample));
  }
  return out;
}

void save_partition(const std::string& path,
                    const std::vector<std::vector<int>>& shards) {
  std::ostringstream os;
  for (const std::vector<int>& shard : shards) {
    if (shard.empty()) {
      os << '-';
    } else {
      for (std::size_t i = 0; i < shard.size(); ++i) {
        if (i > 0) {
          os << ' ';
        }
        os << shard[i];
      }
    }
    os << '\n';
  }
  write_file_text(path, os.str());
}

std::vector<std::vector<int>> load_partition(const std::string& path) {
  const std::string text = read_file_text(path);
  std::vector<std::vector<int>> shards;
  std::istringstream lines(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(lines, line)) {
    ++line_no;
    std::vector<int> shard;
    if (line != "-") {
      std::istringstream fields(line);
      std::string tok;
      while (fields >> tok) {
        std::size_t used = 0;
        int v = 0;
        try {
          v = std::stoi(tok, &used);
        } catch (const std::exception&) {
          throw ParseError("partition row has a non-integer token '" + tok +
                               "'",
                           line_no);
        }
        if (used != tok.size() || v < 0) {
          throw ParseError("partition row has a malformed index '" + tok + "'",
                           line_no);
        }
        shard.push_back(v);
      }
      if (shard.empty()) {
        throw ParseError("partition row is empty (use '-' for no samples)",
                         line_no);
      }
    }
    shards.push_back(std::move(shard));
  }
  return shards;
}

}  // namespace fedscan
