#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "fedscan/model.hpp"
#include "fedscan/tensor.hpp"

namespace fedscan {

/// One synthetic CT volume with per-slice and per-volume binary labels.
/// Label order is fixed: epidural, intraparenchymal, intraventricular,
/// subarachnoid, subdural, any. "any" is the OR of the first five at both
/// levels. Intensities are float32-representable values in [0, 1].
struct VolumeSample {
  Tensor volume;  // [S, 1, H, W]
  std::vector<std::array<std::uint8_t, 6>> slice_labels;  // S entries
  std::array<std::uint8_t, 6> volume_labels{};

  int slices() const { return volume.dim(0); }
  int height() const { return volume.dim(2); }
  int width() const { return volume.dim(3); }
};

/// Deterministic synthetic corpus. Volume i depends only on (seed, i) and
/// the model geometry (slices, input_hw), never on n or on other volumes.
/// About half of the volumes are hemorrhage-free; a positive volume carries
/// exactly one subtype as a bright blob over a contiguous slice range, with
/// a location family and intensity band fixed per subtype.
std::vector<VolumeSample> generate_dataset(int n, const ModelConfig& cfg,
                                           std::uint64_t seed);

struct PartitionSpec {
  int num_clients = 1;
  double alpha = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Dominant-label group used for partitioning: lowest set label index
/// (0..5), or 6 for all-negative volumes.
int dominant_group(const std::array<std::uint8_t, 6>& volume_labels);

/// Dirichlet non-IID split over sample indices, driven only by each
/// sample's dominant-label group. Returns num_clients disjoint shards
/// covering every index; a shard may be empty only when there are fewer
/// samples than clients.
std::vector<std::vector<int>> partition_dirichlet(
    const std::vector<std::array<std::uint8_t, 6>>& volume_labels,
    const PartitionSpec& spec);

std::vector<std::vector<int>> partition_dirichlet(
    const std::vector<VolumeSample>& dataset, const PartitionSpec& spec);

void save_volume(const std::string& path, const VolumeSample& sample);
VolumeSample load_volume(const std::string& path);

/// "volume_00042.fsv" style name inside a dataset directory.
std::string volume_file_name(int index);

/// Writes one file per volume plus manifest.txt (file name and the six
/// volume labels per row, in order).
void save_dataset(const std::string& dir,
                  const std::vector<VolumeSample>& dataset);

/// Loads every volume listed in the directory's manifest, in order.
std::vector<VolumeSample> load_dataset(const std::string& dir);

/// One line per client: space-separated ascending indices, "-" if empty.
void save_partition(const std::string& path,
                    const std::vector<std::vector<int>>& shards);
std::vector<std::vector<int>> load_partition(const std::string& path);

}  // namespace fedscan
