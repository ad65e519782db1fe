// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "cardioclip/errors.hpp"
#include "cardioclip/rng.hpp"

namespace cardioclip {

/// Optimizer groups. Projection covers projection and classification heads,
/// which train with their own (higher) learning rate.
enum class ParamGroup { Encoder, Projection };

enum class Init { Zeros, Ones, TruncNormal };

template <typename T>
struct Parameter {
  std::string name;
  std::vector<std::size_t> shape;
  ParamGroup group = ParamGroup::Encoder;
  bool decay = true;
  std::vector<T> value;
  std::vector<T> grad;

  std::size_t numel() const { return value.size(); }
};

/// Named tensors with stable addresses. Insertion order is the canonical
/// order for checkpoints and optimizer state.
template <typename T>
class ParamStore {
 public:
  static constexpr double kInitStd = 0.02;

  Parameter<T>& add(std::string name, std::vector<std::size_t> shape, ParamGroup group, Init init,
                    Rng& rng, bool decay = true) {
    if (index_.contains(name)) throw std::invalid_argument("duplicate parameter " + name);
    std::size_t n = 1;
    for (std::size_t s : shape) n *= s;
    Parameter<T> p{std::move(name), std::move(shape), group, decay, std::vector<T>(n), std::vector<T>(n)};
    for (T& v : p.value) {
      switch (init) {
        case Init::Zeros: v = T{0}; break;
        case Init::Ones: v = T{1}; break;
        case Init::TruncNormal: v = static_cast<T>(rng.truncated_normal(kInitStd)); break;
      }
    }
    index_.emplace(p.name, params_.size());
    params_.push_back(std::move(p));
    return params_.back();
  }

  /// Adds a fully formed parameter (used when loading checkpoints).
  Parameter<T>& insert(Parameter<T> p) {
    if (index_.contains(p.name)) throw std::invalid_argument("duplicate parameter " + p.name);
    p.grad.assign(p.value.size(), T{0});
    index_.emplace(p.name, params_.size());
    params_.push_back(std::move(p));
    return params_.back();
  }

  bool contains(std::string_view name) const { return index_.find(name) != index_.end(); }

  Parameter<T>& at(std::string_view name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw StateError("missing parameter " + std::string(name));
    return params_[it->second];
  }
  const Parameter<T>& at(std::string_view name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw StateError("missing parameter " + std::string(name));
    return params_[it->second];
  }

  void zero_grad() {
    for (auto& p : params_) std::fill(p.grad.begin(), p.grad.end(), T{0});
  }

  std::size_t total_size() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.numel();
    return n;
  }

  std::deque<Parameter<T>>& items() { return params_; }
  const std::deque<Parameter<T>>& items() const { return params_; }
  std::size_t size() const { return params_.size(); }

  /// Copy of every parameter whose name starts with `prefix`.
  ParamStore subset(std::string_view prefix) const {
    ParamStore out;
    for (const auto& p : params_)
      if (std::string_view(p.name).starts_with(prefix)) out.insert(p);
    return out;
  }

  /// Inserts or overwrites every parameter of `other`.
  void merge(const ParamStore& other) {
    for (const auto& p : other.items()) {
      if (contains(p.name)) {
        auto& dst = at(p.name);
        if (dst.shape != p.shape) throw ShapeError("shape mismatch merging " + p.name);
        dst.value = p.value;
      } else {
        insert(p);
      }
    }
  }

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& p : params_) {
      Parameter<U> q{p.name, p.shape, p.group, p.decay, std::vector<U>(p.value.begin(), p.value.end()), {}};
      out.insert(std::move(q));
    }
    return out;
  }

  bool all_finite() const {
    for (const auto& p : params_)
      for (T v : p.value)
        if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

 private:
  std::deque<Parameter<T>> params_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

}  // namespace cardioclip
