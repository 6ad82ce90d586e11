#include "fedscan/params.hpp"

#include <cmath>
#include <cstring>

#include "fedscan/errors.hpp"

namespace fedscan {

void ModelParams::add(std::string name, Tensor value, bool is_bias) {
  if (index_.count(name) != 0) {
    throw ContractError("duplicate parameter name: " + name);
  }
  index_.emplace(name, entries_.size());
  entries_.push_back(Entry{std::move(name), std::move(value), is_bias});
}

bool ModelParams::contains(const std::string& name) const {
  return index_.count(name) != 0;
}

Tensor& ModelParams::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) {
    throw ContractError("unknown parameter name: " + name);
  }
  return entries_[it->second].value;
}

const Tensor& ModelParams::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) {
    throw ContractError("unknown parameter name: " + name);
  }
  return entries_[it->second].value;
}

std::size_t ModelParams::coord_count() const {
  std::size_t n = 0;
  for (const Entry& e : entries_) {
    n += e.value.size();
  }
  return n;
}

bool ModelParams::same_names(const ModelParams& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name != other.entries_[i].name) return false;
  }
  return true;
}

std::vector<double> ModelParams::flatten() const {
  std::vector<double> flat;
  flat.reserve(coord_count());
  for (const Entry& e : entries_) {
    flat.insert(flat.end(), e.value.data(), e.value.data() + e.value.size());
  }
  return flat;
}

void ModelParams::unflatten(const std::vector<double>& flat) {
  if (flat.size() != coord_count()) {
    throw ShapeError("unflatten: expected " + std::to_string(coord_count()) +
                     " coordinates, got " + std::to_string(flat.size()));
  }
  std::size_t offset = 0;
  for (Entry& e : entries_) {
    std::memcpy(e.value.data(), flat.data() + offset,
                e.value.size() * sizeof(double));
    offset += e.value.size();
  }
}

void require_same_names(const ModelParams& a, const ModelParams& b,
                        const char* context) {
  if (!a.same_names(b)) {
    throw ProtocolError(std::string(context) +
                        ": parameter name sets differ");
  }
}

void add_scaled(ModelParams& result, const ModelParams& delta, double factor) {
  require_same_names(result, delta, "add_scaled");
  for (std::size_t i = 0; i < result.entries().size(); ++i) {
    Tensor& r = result.entries()[i].value;
    const Tensor& d = delta.entries()[i].value;
    for (std::size_t j = 0; j < r.size(); ++j) {
      r[j] += factor * d[j];
    }
  }
}

ModelParams params_diff(const ModelParams& a, const ModelParams& b) {
  require_same_names(a, b, "params_diff");
  ModelParams out = a;
  for (std::size_t i = 0; i < out.entries().size(); ++i) {
    Tensor& r = out.entries()[i].value;
    const Tensor& bv = b.entries()[i].value;
    for (std::size_t j = 0; j < r.size(); ++j) {
      r[j] -= bv[j];
    }
  }
  return out;
}

double params_l2_norm(const ModelParams& p) {
  double sq = 0.0;
  for (const auto& e : p.entries()) {
    for (std::size_t j = 0; j < e.value.size(); ++j) {
      sq += e.value[j] * e.value[j];
    }
  }
  return std::sqrt(sq);
}

void params_scale(ModelParams& p, double factor) {
  for (auto& e : p.entries()) {
    for (std::size_t j = 0; j < e.value.size(); ++j) {
      e.value[j] *= factor;
    }
  }
}

bool params_bitwise_equal(const ModelParams& a, const ModelParams& b) {
  if (!a.same_names(b)) return false;
  for (std::size_t i = 0; i < a.entries().size(); ++i) {
    const Tensor& av = a.entries()[i].value;
    const Tensor& bv = b.entries()[i].value;
    if (av.size() != bv.size()) return false;
    if (std::memcmp(av.data(), bv.data(), av.size() * sizeof(double)) != 0) {
      return false;
    }
  }
  return true;
}

double params_max_abs_diff(const ModelParams& a, const ModelParams& b) {
  require_same_names(a, b, "params_max_abs_diff");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.entries().size(); ++i) {
    const Tensor& av = a.entries()[i].value;
    const Tensor& bv = b.entries()[i].value;
    for (std::size_t j = 0; j < av.size(); ++j) {
      worst = std::max(worst, std::abs(av[j] - bv[j]));
    }
  }
  return worst;
}

}  // namespace fedscan
