#pragma once

#include <limits>
#include <stdexcept>
#include <vector>

#include "faciesgan/rng.hpp"

namespace faciesgan {

inline constexpr int kLatentDim = 128;

// Componentwise truncation of the latent prior: values beyond the threshold
// are re-drawn.
struct TruncationSpec {
  double threshold = std::numeric_limits<double>::infinity();

  bool bounded() const { return std::isfinite(threshold); }
  void validate() const {
    if (bounded() && !(threshold > 0.0))
      throw std::invalid_argument("TruncationSpec: threshold must be positive");
  }
};

// Standard normal latent vector; any component with |value| > threshold is
// re-drawn until it falls within the threshold.
inline std::vector<double> sample_latent(const TruncationSpec& trunc, Rng& rng,
                                         int dim = kLatentDim) {
  trunc.validate();
  std::vector<double> z(static_cast<size_t>(dim));
  for (auto& v : z) {
    v = rng.normal();
    if (!trunc.bounded()) continue;
    int draws = 1;
    while (std::abs(v) > trunc.threshold) {
      if (++draws > 1000)
        throw std::runtime_error("sample_latent: rejection cap hit; threshold too small");
      v = rng.normal();
    }
  }
  return z;
}

}  // namespace faciesgan
