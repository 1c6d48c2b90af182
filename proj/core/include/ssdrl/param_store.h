#pragma once

#include <map>
#include <string>
#include <vector>

#include "ssdrl/rng.h"
#include "ssdrl/tensor.h"

namespace ssdrl {

template <typename T>
struct ParamEntry {
  Tensor<T> value;
  Tensor<T> grad;
  Tensor<T> moment1;
  Tensor<T> moment2;
};

// Named learnable tensors with gradient and Adam moment slots of equal shape.
// Iteration order is lexicographic by name, which keeps serialization and
// reductions deterministic.
template <typename T>
class ParamStore {
 public:
  using Map = std::map<std::string, ParamEntry<T>>;

  void add(const std::string& name, Tensor<T> value) {
    if (entries_.count(name)) {
      throw ConfigError("parameter '" + name + "' registered twice");
    }
    Shape shape = value.shape();
    entries_.emplace(name, ParamEntry<T>{std::move(value), Tensor<T>(shape),
                                         Tensor<T>(shape), Tensor<T>(shape)});
  }

  bool contains(const std::string& name) const { return entries_.count(name) > 0; }

  ParamEntry<T>& entry(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ConfigError("unknown parameter '" + name + "'");
    return it->second;
  }
  const ParamEntry<T>& entry(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ConfigError("unknown parameter '" + name + "'");
    return it->second;
  }

  const Tensor<T>& value(const std::string& name) const { return entry(name).value; }
  Tensor<T>& value(const std::string& name) { return entry(name).value; }
  const Tensor<T>& grad(const std::string& name) const { return entry(name).grad; }

  Map& entries() { return entries_; }
  const Map& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& [name, _] : entries_) out.push_back(name);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [_, e] : entries_) n += e.value.size();
    return n;
  }

  void zero_grad() {
    for (auto& [_, e] : entries_) e.grad.fill(T(0));
  }

  double grad_norm() const {
    double sq = 0.0;
    for (const auto& [_, e] : entries_) {
      for (T g : e.grad.data()) sq += double(g) * double(g);
    }
    return std::sqrt(sq);
  }

  // Scales gradients so the global L2 norm is at most max_norm. Returns the
  // norm before clipping.
  double clip_grad_norm(double max_norm) {
    const double norm = grad_norm();
    if (norm > max_norm && norm > 0.0) {
      const T scale = T(max_norm / norm);
      for (auto& [_, e] : entries_) {
        for (T& g : e.grad.data()) g *= scale;
      }
    }
    return norm;
  }

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& [name, e] : entries_) {
      out.add(name, e.value.template cast<U>());
      auto& dst = out.entry(name);
      dst.moment1 = e.moment1.template cast<U>();
      dst.moment2 = e.moment2.template cast<U>();
    }
    return out;
  }

 private:
  Map entries_;
};

// Uniform(-bound, bound) initializer.
template <typename T>
Tensor<T> uniform_tensor(Shape shape, double bound, Rng& rng) {
  Tensor<T> t(std::move(shape));
  for (T& v : t.data()) v = T(rng.uniform(-bound, bound));
  return t;
}

}  // namespace ssdrl
