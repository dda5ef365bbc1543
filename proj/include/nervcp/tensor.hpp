#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "nervcp/errors.hpp"

namespace nervcp {

/// Named dense f32 tensor, row-major.
struct Tensor {
  std::string name;
  std::vector<int> shape;
  std::vector<float> data;

  Tensor() = default;
  Tensor(std::string n, std::vector<int> s, float fill = 0.0f)
      : name(std::move(n)), shape(std::move(s)), data(element_count(shape), fill) {}

  static std::size_t element_count(const std::vector<int>& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1},
                           [](std::size_t a, int d) { return a * static_cast<std::size_t>(d); });
  }
  std::size_t size() const { return data.size(); }
  bool operator==(const Tensor&) const = default;
};

/// Ordered collection of named tensors. Gradient buffers and optimizer
/// moments use the same layout as the parameters they shadow.
struct ParameterSet {
  std::vector<Tensor> tensors;

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& t : tensors) n += t.size();
    return n;
  }

  Tensor& add(std::string name, std::vector<int> shape) {
    tensors.emplace_back(std::move(name), std::move(shape));
    return tensors.back();
  }

  const Tensor* find(const std::string& name) const {
    for (const auto& t : tensors) {
      if (t.name == name) return &t;
    }
    return nullptr;
  }
  Tensor* find(const std::string& name) {
    for (auto& t : tensors) {
      if (t.name == name) return &t;
    }
    return nullptr;
  }
  const Tensor& get(const std::string& name) const {
    if (const auto* t = find(name)) return *t;
    throw ShapeMismatch("missing tensor " + name);
  }
  Tensor& get(const std::string& name) {
    if (auto* t = find(name)) return *t;
    throw ShapeMismatch("missing tensor " + name);
  }

  ParameterSet zeros_like() const {
    ParameterSet out;
    out.tensors.reserve(tensors.size());
    for (const auto& t : tensors) out.tensors.emplace_back(t.name, t.shape);
    return out;
  }

  void fill(float v) {
    for (auto& t : tensors) std::fill(t.data.begin(), t.data.end(), v);
  }

  void for_each_value(const std::function<void(float)>& fn) const {
    for (const auto& t : tensors) {
      for (float v : t.data) fn(v);
    }
  }

  bool all_finite() const {
    for (const auto& t : tensors) {
      for (float v : t.data) {
        if (!std::isfinite(v)) return false;
      }
    }
    return true;
  }

  bool same_layout(const ParameterSet& other) const {
    if (tensors.size() != other.tensors.size()) return false;
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      if (tensors[i].name != other.tensors[i].name ||
          tensors[i].shape != other.tensors[i].shape) {
        return false;
      }
    }
    return true;
  }

  bool operator==(const ParameterSet&) const = default;
};

}  // namespace nervcp
