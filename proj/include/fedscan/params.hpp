#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "fedscan/tensor.hpp"

namespace fedscan {

/// Ordered, named collection of parameter tensors. Iteration order is
/// insertion order and is part of the contract: flatten/unflatten, update
/// aggregation and pruning all walk entries in this order.
class ModelParams {
 public:
  struct Entry {
    std::string name;
    Tensor value;
    bool is_bias = false;
  };

  void add(std::string name, Tensor value, bool is_bias = false);

  bool contains(const std::string& name) const;
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }
  std::size_t tensor_count() const { return entries_.size(); }

  /// Total number of scalar coordinates across all tensors.
  std::size_t coord_count() const;

  bool same_names(const ModelParams& other) const;

  /// Concatenation of all tensors in entry order; round-trips bitwise
  /// through unflatten.
  std::vector<double> flatten() const;
  void unflatten(const std::vector<double>& flat);

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// result += factor * delta, matched by entry order; name sets must agree.
void add_scaled(ModelParams& result, const ModelParams& delta, double factor);

/// Entry-wise a - b.
ModelParams params_diff(const ModelParams& a, const ModelParams& b);

/// Global L2 norm over every coordinate of every tensor.
double params_l2_norm(const ModelParams& p);

/// Multiply every coordinate in place.
void params_scale(ModelParams& p, double factor);

/// True iff every coordinate of every tensor compares bitwise equal.
bool params_bitwise_equal(const ModelParams& a, const ModelParams& b);

/// Largest absolute coordinate-wise difference; name sets must agree.
double params_max_abs_diff(const ModelParams& a, const ModelParams& b);

void require_same_names(const ModelParams& a, const ModelParams& b,
                        const char* context);

}  // namespace fedscan
