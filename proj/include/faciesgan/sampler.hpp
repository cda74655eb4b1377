#pragma once

#include <algorithm>
#include <stdexcept>
#include <string>
#include <vector>

#include "faciesgan/rng.hpp"

namespace faciesgan {

enum class ConditionSampling { kDiscrete, kContinuous };

inline ConditionSampling parse_condition_sampling(const std::string& s) {
  if (s == "discrete") return ConditionSampling::kDiscrete;
  if (s == "continuous") return ConditionSampling::kContinuous;
  throw std::invalid_argument("condition_sampling must be 'discrete' or 'continuous'");
}

inline const char* to_string(ConditionSampling mode) {
  return mode == ConditionSampling::kDiscrete ? "discrete" : "continuous";
}

// Fake-condition source for training. Discrete mode draws uniformly from the
// represented set; continuous mode draws uniformly from the closed interval
// it spans, so unrepresented conditions are visited during training.
class ConditionSampler {
 public:
  ConditionSampler(ConditionSampling mode, std::vector<double> represented)
      : mode_(mode), represented_(std::move(represented)) {
    if (represented_.empty())
      throw std::invalid_argument("ConditionSampler: represented set must be non-empty");
    std::sort(represented_.begin(), represented_.end());
  }

  ConditionSampling mode() const { return mode_; }
  const std::vector<double>& represented() const { return represented_; }
  double interval_lo() const { return represented_.front(); }
  double interval_hi() const { return represented_.back(); }

  double sample_one(Rng& rng) const {
    if (mode_ == ConditionSampling::kDiscrete)
      return represented_[rng.integer(represented_.size())];
    return rng.uniform(interval_lo(), interval_hi());
  }

  std::vector<double> sample(long m, Rng& rng) const {
    if (m < 1) throw std::invalid_argument("ConditionSampler: m must be >= 1");
    std::vector<double> ys(static_cast<size_t>(m));
    for (auto& y : ys) y = sample_one(rng);
    return ys;
  }

 private:
  ConditionSampling mode_;
  std::vector<double> represented_;
};

}  // namespace faciesgan
