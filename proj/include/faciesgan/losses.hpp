#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

namespace faciesgan {

// log(1 + exp(x)) without overflow.
template <typename T>
T softplus(T x) {
  return std::max<T>(x, T(0)) + std::log1p(std::exp(-std::abs(x)));
}

template <typename T>
T logistic(T x) {
  return x >= 0 ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
}

// Non-saturating discriminator loss (negated maximization objective):
//   -(1/m) sum[log sigmoid(real) + log(1 - sigmoid(fake))]
template <typename T>
T discriminator_loss(const std::vector<T>& real_logits, const std::vector<T>& fake_logits) {
  if (real_logits.size() != fake_logits.size() || real_logits.empty())
    throw std::invalid_argument("discriminator_loss: logit batches must be equal-length");
  T acc = 0;
  for (size_t i = 0; i < real_logits.size(); ++i)
    acc += softplus(-real_logits[i]) + softplus(fake_logits[i]);
  return acc / static_cast<T>(real_logits.size());
}

// d loss / d logits for both batches.
template <typename T>
void discriminator_loss_grad(const std::vector<T>& real_logits, const std::vector<T>& fake_logits,
                             std::vector<T>& d_real, std::vector<T>& d_fake) {
  const T inv_m = T(1) / static_cast<T>(real_logits.size());
  d_real.resize(real_logits.size());
  d_fake.resize(fake_logits.size());
  for (size_t i = 0; i < real_logits.size(); ++i) {
    d_real[i] = -logistic(-real_logits[i]) * inv_m;
    d_fake[i] = logistic(fake_logits[i]) * inv_m;
  }
}

// Generator loss: -(1/m) sum log sigmoid(fake).
template <typename T>
T generator_loss(const std::vector<T>& fake_logits) {
  if (fake_logits.empty()) throw std::invalid_argument("generator_loss: empty logit batch");
  T acc = 0;
  for (T f : fake_logits) acc += softplus(-f);
  return acc / static_cast<T>(fake_logits.size());
}

template <typename T>
void generator_loss_grad(const std::vector<T>& fake_logits, std::vector<T>& d_fake) {
  const T inv_m = T(1) / static_cast<T>(fake_logits.size());
  d_fake.resize(fake_logits.size());
  for (size_t i = 0; i < fake_logits.size(); ++i) d_fake[i] = -logistic(-fake_logits[i]) * inv_m;
}

}  // namespace faciesgan
