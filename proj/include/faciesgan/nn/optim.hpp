#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "faciesgan/nn/layers.hpp"

namespace faciesgan::nn {

// Adam over a fixed parameter registry. First/second moment buffers are part
// of checkpoints (named "adam.<param>.m" / ".v").
template <typename T>
class Adam {
 public:
  Adam() = default;
  Adam(ParamRefs<T>& refs, T lr, T beta1, T beta2, T eps = static_cast<T>(1e-8))
      : refs_(&refs), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    m_.reserve(refs.params.size());
    v_.reserve(refs.params.size());
    for (auto* p : refs.params) {
      m_.emplace_back(p->value.shape());
      v_.emplace_back(p->value.shape());
    }
  }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(static_cast<double>(beta1_), t_);
    const double bc2 = 1.0 - std::pow(static_cast<double>(beta2_), t_);
    for (size_t i = 0; i < refs_->params.size(); ++i) {
      Param<T>& p = *refs_->params[i];
      Tensor<T>& m = m_[i];
      Tensor<T>& v = v_[i];
      for (long j = 0; j < p.value.numel(); ++j) {
        const T g = p.grad[j];
        m[j] = beta1_ * m[j] + (T(1) - beta1_) * g;
        v[j] = beta2_ * v[j] + (T(1) - beta2_) * g * g;
        const double mh = m[j] / bc1;
        const double vh = v[j] / bc2;
        p.value[j] -= static_cast<T>(lr_ * mh / (std::sqrt(vh) + eps_));
      }
    }
  }

  void collect(const std::string& prefix, ParamRefs<T>& out) {
    for (size_t i = 0; i < refs_->params.size(); ++i) {
      out.add_buffer(prefix, refs_->params[i]->tag + ".m", m_[i]);
      out.add_buffer(prefix, refs_->params[i]->tag + ".v", v_[i]);
    }
  }

  long step_count() const { return t_; }
  void set_step_count(long t) { t_ = t; }

 private:
  ParamRefs<T>* refs_ = nullptr;
  T lr_ = 0, beta1_ = 0, beta2_ = 0, eps_ = 0;
  long t_ = 0;
  std::vector<Tensor<T>> m_, v_;
};

// Exponential moving average of a parameter set:
//   shadow <- decay * shadow + (1 - decay) * current
template <typename T>
class EmaState {
 public:
  EmaState() = default;
  EmaState(const ParamRefs<T>& refs, T decay) : refs_(&refs), decay_(decay) {
    if (decay < T(0) || decay > T(1))
      throw std::invalid_argument("EmaState: decay must lie in [0,1]");
    shadow_.reserve(refs.params.size());
    for (const auto* p : refs.params) shadow_.push_back(p->value);  // start at current
  }

  void update() {
    for (size_t i = 0; i < shadow_.size(); ++i) {
      const Tensor<T>& cur = refs_->params[i]->value;
      Tensor<T>& sh = shadow_[i];
      if (!sh.same_shape(cur)) throw std::invalid_argument("EmaState: shape mismatch");
      for (long j = 0; j < sh.numel(); ++j)
        sh[j] = decay_ * sh[j] + (T(1) - decay_) * cur[j];
    }
  }

  // Copies shadows into another registry with identical layout.
  void load_into(ParamRefs<T>& target) const {
    if (target.params.size() != shadow_.size())
      throw std::invalid_argument("EmaState: registry size mismatch");
    for (size_t i = 0; i < shadow_.size(); ++i) {
      if (!target.params[i]->value.same_shape(shadow_[i]))
        throw std::invalid_argument("EmaState: shape mismatch");
      target.params[i]->value = shadow_[i];
    }
  }

  void collect(const std::string& prefix, ParamRefs<T>& out) {
    for (size_t i = 0; i < shadow_.size(); ++i)
      out.add_buffer(prefix, refs_->params[i]->tag, shadow_[i]);
  }

  T decay() const { return decay_; }
  const std::vector<Tensor<T>>& shadow() const { return shadow_; }
  std::vector<Tensor<T>>& shadow() { return shadow_; }

 private:
  const ParamRefs<T>* refs_ = nullptr;
  T decay_ = static_cast<T>(0.999);
  std::vector<Tensor<T>> shadow_;
};

}  // namespace faciesgan::nn
