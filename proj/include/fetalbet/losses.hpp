#pragma once

// Segmentation losses over softmax outputs u and one-hot targets v, both
// shaped (N, 2, H, W). Channel 1 is the foreground (brain).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>

#include "fetalbet/error.hpp"
#include "fetalbet/nn/tensor.hpp"

namespace fetalbet {

inline constexpr double kProbabilityClamp = 1e-7;
inline constexpr double kDiceSmoothing = 1e-5;
inline constexpr std::size_t kForeground = 1;

struct LossWeights {
  double ce = 0.4;
  double dice = 0.6;

  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

template <typename T>
struct LossResult {
  double value = 0.0;
  nn::Tensor<T> grad;  // dLoss/du, same shape as u
};

namespace detail {

template <typename T>
void check_loss_shapes(const nn::Tensor<T>& u, const nn::Tensor<T>& v) {
  require(u.shape() == v.shape(),
          "loss: prediction " + u.shape().str() + " and target " + v.shape().str() + " differ");
  require(u.c() == 2, "loss: expected 2 classes, got " + std::to_string(u.c()));
  require(u.n() >= 1, "loss: empty batch");
}

}  // namespace detail

// Binary cross-entropy on the foreground channel, mean over every pixel of
// the batch. u is clamped to [eps, 1 - eps].
template <typename T>
LossResult<T> cross_entropy_with_grad(const nn::Tensor<T>& u, const nn::Tensor<T>& v) {
  detail::check_loss_shapes(u, v);
  LossResult<T> out{0.0, nn::Tensor<T>(u.shape())};
  const double count = static_cast<double>(u.n() * u.shape().plane());
  double sum = 0.0;
  for (std::size_t n = 0; n < u.n(); ++n) {
    auto up = u.plane(n, kForeground);
    auto vp = v.plane(n, kForeground);
    auto gp = out.grad.plane(n, kForeground);
    for (std::size_t i = 0; i < up.size(); ++i) {
      const double raw = static_cast<double>(up[i]);
      const double p = std::clamp(raw, kProbabilityClamp, 1.0 - kProbabilityClamp);
      const double t = static_cast<double>(vp[i]);
      sum -= t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
      const bool inside = raw > kProbabilityClamp && raw < 1.0 - kProbabilityClamp;
      gp[i] = inside ? static_cast<T>(-(t / p - (1.0 - t) / (1.0 - p)) / count) : T(0);
    }
  }
  out.value = sum / count;
  return out;
}

template <typename T>
double cross_entropy(const nn::Tensor<T>& u, const nn::Tensor<T>& v) {
  return cross_entropy_with_grad(u, v).value;
}

// Foreground Dice over the whole batch treated as one pseudo-volume:
//   -(2 * sum(u v) + delta) / (sum(u) + sum(v) + delta), range [-1, 0].
template <typename T>
LossResult<T> batched_dice_loss_with_grad(const nn::Tensor<T>& u, const nn::Tensor<T>& v) {
  detail::check_loss_shapes(u, v);
  double inter = 0.0, su = 0.0, sv = 0.0;
  for (std::size_t n = 0; n < u.n(); ++n) {
    auto up = u.plane(n, kForeground);
    auto vp = v.plane(n, kForeground);
    for (std::size_t i = 0; i < up.size(); ++i) {
      inter += static_cast<double>(up[i]) * static_cast<double>(vp[i]);
      su += static_cast<double>(up[i]);
      sv += static_cast<double>(vp[i]);
    }
  }
  const double num = 2.0 * inter + kDiceSmoothing;
  const double den = su + sv + kDiceSmoothing;
  LossResult<T> out{-num / den, nn::Tensor<T>(u.shape())};
  for (std::size_t n = 0; n < u.n(); ++n) {
    auto vp = v.plane(n, kForeground);
    auto gp = out.grad.plane(n, kForeground);
    for (std::size_t i = 0; i < vp.size(); ++i)
      gp[i] = static_cast<T>(-(2.0 * static_cast<double>(vp[i]) * den - num) / (den * den));
  }
  return out;
}

template <typename T>
double batched_dice_loss(const nn::Tensor<T>& u, const nn::Tensor<T>& v) {
  return batched_dice_loss_with_grad(u, v).value;
}

template <typename T>
LossResult<T> total_loss_with_grad(const nn::Tensor<T>& u, const nn::Tensor<T>& v,
                                   const LossWeights& w = {}) {
  auto ce = cross_entropy_with_grad(u, v);
  auto dice = batched_dice_loss_with_grad(u, v);
  LossResult<T> out{w.ce * ce.value + w.dice * dice.value, nn::Tensor<T>(u.shape())};
  for (std::size_t i = 0; i < out.grad.size(); ++i)
    out.grad[i] = static_cast<T>(w.ce * static_cast<double>(ce.grad[i]) +
                                 w.dice * static_cast<double>(dice.grad[i]));
  return out;
}

template <typename T>
double total_loss(const nn::Tensor<T>& u, const nn::Tensor<T>& v, const LossWeights& w = {}) {
  return total_loss_with_grad(u, v, w).value;
}

}  // namespace fetalbet
