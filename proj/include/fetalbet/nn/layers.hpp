#pragma once

// Minimal layer set for 2D encoder-decoder segmentation networks. Every layer
// exposes a const evaluation forward, a caching training forward, and an
// analytic backward that accumulates parameter gradients and returns the
// input gradient.

#include <cmath>
#include <cstddef>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "fetalbet/error.hpp"
#include "fetalbet/nn/tensor.hpp"

namespace fetalbet::nn {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

template <typename T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool trainable = true;  // false for running statistics

  Param() = default;
  Param(std::string n, Shape shape, bool is_trainable = true)
      : name(std::move(n)), value(shape), grad(shape), trainable(is_trainable) {}
};

template <typename T>
using ParamList = std::vector<Param<T>*>;

using InitRng = std::mt19937_64;

template <typename T>
void he_normal(Tensor<T>& w, std::size_t fan_in, InitRng& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  for (auto& v : w.values()) v = static_cast<T>(dist(rng));
}

// ---------------------------------------------------------------------------
// Conv2d: square kernel, zero padding k/2, optional stride.

template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(const std::string& name, std::size_t in, std::size_t out, std::size_t kernel,
         std::size_t stride = 1)
      : in_(in), out_(out), k_(kernel), stride_(stride), pad_(kernel / 2),
        weight_(name + ".weight", Shape{out, in, kernel, kernel}),
        bias_(name + ".bias", Shape{1, out, 1, 1}) {}

  std::size_t in_channels() const noexcept { return in_; }
  std::size_t out_channels() const noexcept { return out_; }
  std::size_t kernel() const noexcept { return k_; }
  std::size_t stride() const noexcept { return stride_; }

  Param<T>& weight() noexcept { return weight_; }
  Param<T>& bias() noexcept { return bias_; }
  const Param<T>& weight() const noexcept { return weight_; }
  const Param<T>& bias() const noexcept { return bias_; }

  void init(InitRng& rng) {
    he_normal(weight_.value, in_ * k_ * k_, rng);
    bias_.value.zero();
  }

  void params(ParamList<T>& out) {
    out.push_back(&weight_);
    out.push_back(&bias_);
  }

  std::size_t out_size(std::size_t in) const noexcept {
    return (in + 2 * pad_ - k_) / stride_ + 1;
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    detail::require<ShapeError>(x.c() == in_, weight_.name + ": expected " +
                                                  std::to_string(in_) + " input channels, got " +
                                                  std::to_string(x.c()));
    const std::size_t ho = out_size(x.h()), wo = out_size(x.w());
    Tensor<T> y(x.n(), out_, ho, wo);
    ConstMatrixMap<T> wmat(weight_.value.data(), out_, in_ * k_ * k_);
    const bool pointwise = k_ == 1 && stride_ == 1;
    RowMatrix<T> col;
    for (std::size_t n = 0; n < x.n(); ++n) {
      MatrixMap<T> ymat(y.sample(n).data(), out_, ho * wo);
      if (pointwise) {
        ConstMatrixMap<T> xmat(x.sample(n).data(), in_, ho * wo);
        ymat.noalias() = wmat * xmat;
      } else {
        im2col(x, n, ho, wo, col);
        ymat.noalias() = wmat * col;
      }
      for (std::size_t o = 0; o < out_; ++o) ymat.row(o).array() += bias_.value[o];
    }
    return y;
  }

  Tensor<T> forward_train(const Tensor<T>& x) {
    input_ = x;
    return forward(x);
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    const Tensor<T>& x = input_;
    const std::size_t ho = dy.h(), wo = dy.w();
    Tensor<T> dx(x.shape());
    MatrixMap<T> dw(weight_.grad.data(), out_, in_ * k_ * k_);
    ConstMatrixMap<T> wmat(weight_.value.data(), out_, in_ * k_ * k_);
    const bool pointwise = k_ == 1 && stride_ == 1;
    RowMatrix<T> col, dcol;
    for (std::size_t n = 0; n < x.n(); ++n) {
      ConstMatrixMap<T> dymat(dy.sample(n).data(), out_, ho * wo);
      for (std::size_t o = 0; o < out_; ++o) bias_.grad[o] += dymat.row(o).sum();
      if (pointwise) {
        ConstMatrixMap<T> xmat(x.sample(n).data(), in_, ho * wo);
        dw.noalias() += dymat * xmat.transpose();
        MatrixMap<T> dxmat(dx.sample(n).data(), in_, ho * wo);
        dxmat.noalias() = wmat.transpose() * dymat;
      } else {
        im2col(x, n, ho, wo, col);
        dw.noalias() += dymat * col.transpose();
        dcol.noalias() = wmat.transpose() * dymat;
        col2im(dcol, n, ho, wo, dx);
      }
    }
    return dx;
  }

 private:
  void im2col(const Tensor<T>& x, std::size_t n, std::size_t ho, std::size_t wo,
              RowMatrix<T>& col) const {
    const std::size_t h = x.h(), w = x.w();
    col.resize(static_cast<Eigen::Index>(in_ * k_ * k_), static_cast<Eigen::Index>(ho * wo));
    for (std::size_t c = 0; c < in_; ++c) {
      const T* src = x.plane(n, c).data();
      for (std::size_t ky = 0; ky < k_; ++ky) {
        for (std::size_t kx = 0; kx < k_; ++kx) {
          T* dst = col.data() + ((c * k_ + ky) * k_ + kx) * ho * wo;
          for (std::size_t oy = 0; oy < ho; ++oy) {
            const auto iy = static_cast<std::ptrdiff_t>(oy * stride_ + ky) -
                            static_cast<std::ptrdiff_t>(pad_);
            T* row = dst + oy * wo;
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) {
              std::fill(row, row + wo, T{});
              continue;
            }
            const T* srow = src + static_cast<std::size_t>(iy) * w;
            for (std::size_t ox = 0; ox < wo; ++ox) {
              const auto ix = static_cast<std::ptrdiff_t>(ox * stride_ + kx) -
                              static_cast<std::ptrdiff_t>(pad_);
              row[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w))
                            ? T{}
                            : srow[static_cast<std::size_t>(ix)];
            }
          }
        }
      }
    }
  }

  void col2im(const RowMatrix<T>& col, std::size_t n, std::size_t ho, std::size_t wo,
              Tensor<T>& dx) const {
    const std::size_t h = dx.h(), w = dx.w();
    for (std::size_t c = 0; c < in_; ++c) {
      T* dst = dx.plane(n, c).data();
      for (std::size_t ky = 0; ky < k_; ++ky) {
        for (std::size_t kx = 0; kx < k_; ++kx) {
          const T* src = col.data() + ((c * k_ + ky) * k_ + kx) * ho * wo;
          for (std::size_t oy = 0; oy < ho; ++oy) {
            const auto iy = static_cast<std::ptrdiff_t>(oy * stride_ + ky) -
                            static_cast<std::ptrdiff_t>(pad_);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
            T* drow = dst + static_cast<std::size_t>(iy) * w;
            const T* srow = src + oy * wo;
            for (std::size_t ox = 0; ox < wo; ++ox) {
              const auto ix = static_cast<std::ptrdiff_t>(ox * stride_ + kx) -
                              static_cast<std::ptrdiff_t>(pad_);
              if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(w))
                drow[static_cast<std::size_t>(ix)] += srow[ox];
            }
          }
        }
      }
    }
  }

  std::size_t in_ = 0, out_ = 0, k_ = 1, stride_ = 1, pad_ = 0;
  Param<T> weight_;
  Param<T> bias_;
  Tensor<T> input_;
};

// ---------------------------------------------------------------------------
// Transposed convolution with kernel 2, stride 2 (exact 2x upsampling).

template <typename T>
class UpConv2x {
 public:
  UpConv2x() = default;
  UpConv2x(const std::string& name, std::size_t in, std::size_t out)
      : in_(in), out_(out),
        weight_(name + ".weight", Shape{in, out, 2, 2}),
        bias_(name + ".bias", Shape{1, out, 1, 1}) {}

  std::size_t out_channels() const noexcept { return out_; }

  void init(InitRng& rng) {
    he_normal(weight_.value, in_, rng);
    bias_.value.zero();
  }

  void params(ParamList<T>& out) {
    out.push_back(&weight_);
    out.push_back(&bias_);
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    detail::require<ShapeError>(x.c() == in_, weight_.name + ": channel mismatch");
    const std::size_t h = x.h(), w = x.w();
    Tensor<T> y(x.n(), out_, 2 * h, 2 * w);
    ConstMatrixMap<T> wmat(weight_.value.data(), in_, out_ * 4);
    RowMatrix<T> z;
    for (std::size_t n = 0; n < x.n(); ++n) {
      ConstMatrixMap<T> xmat(x.sample(n).data(), in_, h * w);
      z.noalias() = wmat.transpose() * xmat;
      for (std::size_t o = 0; o < out_; ++o) {
        T* dst = y.plane(n, o).data();
        const T b = bias_.value[o];
        for (std::size_t a = 0; a < 2; ++a)
          for (std::size_t bb = 0; bb < 2; ++bb) {
            const T* src = z.data() + (o * 4 + a * 2 + bb) * h * w;
            for (std::size_t i = 0; i < h; ++i)
              for (std::size_t j = 0; j < w; ++j)
                dst[(2 * i + a) * 2 * w + 2 * j + bb] = src[i * w + j] + b;
          }
      }
    }
    return y;
  }

  Tensor<T> forward_train(const Tensor<T>& x) {
    input_ = x;
    return forward(x);
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    const Tensor<T>& x = input_;
    const std::size_t h = x.h(), w = x.w();
    Tensor<T> dx(x.shape());
    ConstMatrixMap<T> wmat(weight_.value.data(), in_, out_ * 4);
    MatrixMap<T> dw(weight_.grad.data(), in_, out_ * 4);
    RowMatrix<T> dz(static_cast<Eigen::Index>(out_ * 4), static_cast<Eigen::Index>(h * w));
    for (std::size_t n = 0; n < x.n(); ++n) {
      for (std::size_t o = 0; o < out_; ++o) {
        const T* src = dy.plane(n, o).data();
        T bsum{};
        for (std::size_t a = 0; a < 2; ++a)
          for (std::size_t bb = 0; bb < 2; ++bb) {
            T* dst = dz.data() + (o * 4 + a * 2 + bb) * h * w;
            for (std::size_t i = 0; i < h; ++i)
              for (std::size_t j = 0; j < w; ++j) {
                const T g = src[(2 * i + a) * 2 * w + 2 * j + bb];
                dst[i * w + j] = g;
                bsum += g;
              }
          }
        bias_.grad[o] += bsum;
      }
      ConstMatrixMap<T> xmat(x.sample(n).data(), in_, h * w);
      dw.noalias() += xmat * dz.transpose();
      MatrixMap<T> dxmat(dx.sample(n).data(), in_, h * w);
      dxmat.noalias() = wmat * dz;
    }
    return dx;
  }

 private:
  std::size_t in_ = 0, out_ = 0;
  Param<T> weight_;
  Param<T> bias_;
  Tensor<T> input_;
};

// ---------------------------------------------------------------------------
// 2x2 max pooling, stride 2. Input extent must be even.

template <typename T>
class MaxPool2x {
 public:
  Tensor<T> forward(const Tensor<T>& x) const { return pool(x, nullptr); }

  Tensor<T> forward_train(const Tensor<T>& x) {
    in_shape_ = x.shape();
    return pool(x, &argmax_);
  }

  Tensor<T> backward(const Tensor<T>& dy) const {
    Tensor<T> dx(in_shape_);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[argmax_[i]] += dy[i];
    return dx;
  }

 private:
  Tensor<T> pool(const Tensor<T>& x, std::vector<std::size_t>* argmax) const {
    detail::require<ShapeError>(x.h() % 2 == 0 && x.w() % 2 == 0,
                                "max pool: odd spatial extent " + x.shape().str());
    const std::size_t ho = x.h() / 2, wo = x.w() / 2;
    Tensor<T> y(x.n(), x.c(), ho, wo);
    if (argmax) argmax->assign(y.size(), 0);
    std::size_t out = 0;
    for (std::size_t n = 0; n < x.n(); ++n)
      for (std::size_t c = 0; c < x.c(); ++c)
        for (std::size_t i = 0; i < ho; ++i)
          for (std::size_t j = 0; j < wo; ++j, ++out) {
            std::size_t best = x.index(n, c, 2 * i, 2 * j);
            for (std::size_t a = 0; a < 2; ++a)
              for (std::size_t b = 0; b < 2; ++b) {
                const std::size_t idx = x.index(n, c, 2 * i + a, 2 * j + b);
                if (x[idx] > x[best]) best = idx;
              }
            y[out] = x[best];
            if (argmax) (*argmax)[out] = best;
          }
    return y;
  }

  Shape in_shape_{};
  std::vector<std::size_t> argmax_;
};

// ---------------------------------------------------------------------------
// Normalization: batch statistics (running averages for evaluation), per
// instance statistics, or identity.

enum class NormKind { batch, instance, none };

template <typename T>
class Norm2d {
 public:
  static constexpr double kEps = 1e-5;
  static constexpr double kMomentum = 0.1;

  Norm2d() = default;
  Norm2d(const std::string& name, std::size_t channels, NormKind kind)
      : kind_(kind), channels_(channels),
        gamma_(name + ".gamma", Shape{1, channels, 1, 1}),
        beta_(name + ".beta", Shape{1, channels, 1, 1}),
        running_mean_(name + ".running_mean", Shape{1, channels, 1, 1}, false),
        running_var_(name + ".running_var", Shape{1, channels, 1, 1}, false) {
    gamma_.value.fill(T(1));
    running_var_.value.fill(T(1));
  }

  NormKind kind() const noexcept { return kind_; }

  void params(ParamList<T>& out) {
    if (kind_ == NormKind::none) return;
    out.push_back(&gamma_);
    out.push_back(&beta_);
    if (kind_ == NormKind::batch) {
      out.push_back(&running_mean_);
      out.push_back(&running_var_);
    }
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    if (kind_ == NormKind::none) return x;
    if (kind_ == NormKind::instance) {
      Tensor<T> y(x.shape());
      for (std::size_t n = 0; n < x.n(); ++n)
        for (std::size_t c = 0; c < x.c(); ++c) {
          auto [mean, var] = plane_stats(x, n, c);
          apply(x, y, n, c, mean, 1.0 / std::sqrt(var + kEps));
        }
      return y;
    }
    Tensor<T> y(x.shape());
    for (std::size_t c = 0; c < x.c(); ++c) {
      const double inv = 1.0 / std::sqrt(static_cast<double>(running_var_.value[c]) + kEps);
      for (std::size_t n = 0; n < x.n(); ++n)
        apply(x, y, n, c, static_cast<double>(running_mean_.value[c]), inv);
    }
    return y;
  }

  Tensor<T> forward_train(const Tensor<T>& x) {
    if (kind_ == NormKind::none) return x;
    Tensor<T> y(x.shape());
    xhat_ = Tensor<T>(x.shape());
    if (kind_ == NormKind::instance) {
      inv_std_.assign(x.n() * x.c(), 0.0);
      for (std::size_t n = 0; n < x.n(); ++n)
        for (std::size_t c = 0; c < x.c(); ++c) {
          auto [mean, var] = plane_stats(x, n, c);
          const double inv = 1.0 / std::sqrt(var + kEps);
          inv_std_[n * x.c() + c] = inv;
          normalize_into(x, n, c, mean, inv);
        }
    } else {
      inv_std_.assign(x.c(), 0.0);
      const double count = static_cast<double>(x.n() * x.h() * x.w());
      for (std::size_t c = 0; c < x.c(); ++c) {
        double sum = 0.0;
        for (std::size_t n = 0; n < x.n(); ++n)
          for (T v : x.plane(n, c)) sum += static_cast<double>(v);
        const double mean = sum / count;
        double sq = 0.0;
        for (std::size_t n = 0; n < x.n(); ++n)
          for (T v : x.plane(n, c)) {
            const double d = static_cast<double>(v) - mean;
            sq += d * d;
          }
        const double var = sq / count;
        const double inv = 1.0 / std::sqrt(var + kEps);
        inv_std_[c] = inv;
        for (std::size_t n = 0; n < x.n(); ++n) normalize_into(x, n, c, mean, inv);
        const double unbiased = count > 1 ? var * count / (count - 1) : var;
        running_mean_.value[c] = static_cast<T>((1 - kMomentum) * running_mean_.value[c] +
                                                kMomentum * mean);
        running_var_.value[c] = static_cast<T>((1 - kMomentum) * running_var_.value[c] +
                                               kMomentum * unbiased);
      }
    }
    for (std::size_t i = 0; i < y.size(); ++i) {
      const std::size_t c = (i / x.shape().plane()) % x.c();
      y[i] = gamma_.value[c] * xhat_[i] + beta_.value[c];
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    if (kind_ == NormKind::none) return dy;
    const Shape& s = dy.shape();
    Tensor<T> dx(s);
    const std::size_t plane = s.plane();
    for (std::size_t c = 0; c < s.c; ++c) {
      double dg = 0.0, db = 0.0;
      for (std::size_t n = 0; n < s.n; ++n) {
        auto g = dy.plane(n, c);
        auto xh = xhat_.plane(n, c);
        for (std::size_t i = 0; i < plane; ++i) {
          dg += static_cast<double>(g[i]) * static_cast<double>(xh[i]);
          db += static_cast<double>(g[i]);
        }
      }
      gamma_.grad[c] += static_cast<T>(dg);
      beta_.grad[c] += static_cast<T>(db);
    }
    auto group_backward = [&](std::size_t c, std::size_t n_begin, std::size_t n_end,
                              double inv) {
      const double gamma = static_cast<double>(gamma_.value[c]);
      const double m = static_cast<double>((n_end - n_begin) * plane);
      double sum_d = 0.0, sum_dx = 0.0;
      for (std::size_t n = n_begin; n < n_end; ++n) {
        auto g = dy.plane(n, c);
        auto xh = xhat_.plane(n, c);
        for (std::size_t i = 0; i < plane; ++i) {
          const double d = static_cast<double>(g[i]) * gamma;
          sum_d += d;
          sum_dx += d * static_cast<double>(xh[i]);
        }
      }
      for (std::size_t n = n_begin; n < n_end; ++n) {
        auto g = dy.plane(n, c);
        auto xh = xhat_.plane(n, c);
        auto out = dx.plane(n, c);
        for (std::size_t i = 0; i < plane; ++i) {
          const double d = static_cast<double>(g[i]) * gamma;
          out[i] = static_cast<T>(inv / m *
                                  (m * d - sum_d - static_cast<double>(xh[i]) * sum_dx));
        }
      }
    };
    if (kind_ == NormKind::batch) {
      for (std::size_t c = 0; c < s.c; ++c) group_backward(c, 0, s.n, inv_std_[c]);
    } else {
      for (std::size_t n = 0; n < s.n; ++n)
        for (std::size_t c = 0; c < s.c; ++c)
          group_backward(c, n, n + 1, inv_std_[n * s.c + c]);
    }
    return dx;
  }

 private:
  static std::pair<double, double> plane_stats(const Tensor<T>& x, std::size_t n,
                                               std::size_t c) {
    auto p = x.plane(n, c);
    double sum = 0.0;
    for (T v : p) sum += static_cast<double>(v);
    const double mean = sum / static_cast<double>(p.size());
    double sq = 0.0;
    for (T v : p) {
      const double d = static_cast<double>(v) - mean;
      sq += d * d;
    }
    return {mean, sq / static_cast<double>(p.size())};
  }

  void apply(const Tensor<T>& x, Tensor<T>& y, std::size_t n, std::size_t c, double mean,
             double inv) const {
    auto src = x.plane(n, c);
    auto dst = y.plane(n, c);
    const double g = static_cast<double>(gamma_.value[c]);
    const double b = static_cast<double>(beta_.value[c]);
    for (std::size_t i = 0; i < src.size(); ++i)
      dst[i] = static_cast<T>(g * (static_cast<double>(src[i]) - mean) * inv + b);
  }

  void normalize_into(const Tensor<T>& x, std::size_t n, std::size_t c, double mean,
                      double inv) {
    auto src = x.plane(n, c);
    auto dst = xhat_.plane(n, c);
    for (std::size_t i = 0; i < src.size(); ++i)
      dst[i] = static_cast<T>((static_cast<double>(src[i]) - mean) * inv);
  }

  NormKind kind_ = NormKind::none;
  std::size_t channels_ = 0;
  Param<T> gamma_, beta_, running_mean_, running_var_;
  Tensor<T> xhat_;
  std::vector<double> inv_std_;
};

// ---------------------------------------------------------------------------
// Pointwise activations.

enum class ActivationKind { relu, leaky_relu };

template <typename T>
class Activation {
 public:
  static constexpr double kLeakySlope = 0.01;

  Activation() = default;
  explicit Activation(ActivationKind kind) : kind_(kind) {}

  Tensor<T> forward(const Tensor<T>& x) const {
    Tensor<T> y(x.shape());
    const T slope = kind_ == ActivationKind::relu ? T(0) : static_cast<T>(kLeakySlope);
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T(0) ? x[i] : slope * x[i];
    return y;
  }

  Tensor<T> forward_train(const Tensor<T>& x) {
    input_ = x;
    return forward(x);
  }

  Tensor<T> backward(const Tensor<T>& dy) const {
    Tensor<T> dx(dy.shape());
    const T slope = kind_ == ActivationKind::relu ? T(0) : static_cast<T>(kLeakySlope);
    for (std::size_t i = 0; i < dy.size(); ++i)
      dx[i] = input_[i] > T(0) ? dy[i] : slope * dy[i];
    return dx;
  }

 private:
  ActivationKind kind_ = ActivationKind::relu;
  Tensor<T> input_;
};

template <typename T>
inline T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

// Softmax across channels for every pixel.
template <typename T>
Tensor<T> softmax_channels(const Tensor<T>& z) {
  Tensor<T> p(z.shape());
  const std::size_t plane = z.shape().plane();
  const std::size_t channels = z.c();
  for (std::size_t n = 0; n < z.n(); ++n) {
    const T* src = z.sample(n).data();
    T* dst = p.sample(n).data();
    for (std::size_t i = 0; i < plane; ++i) {
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t c = 0; c < channels; ++c) mx = std::max(mx, src[c * plane + i]);
      T sum{};
      for (std::size_t c = 0; c < channels; ++c) {
        const T e = std::exp(src[c * plane + i] - mx);
        dst[c * plane + i] = e;
        sum += e;
      }
      for (std::size_t c = 0; c < channels; ++c) dst[c * plane + i] /= sum;
    }
  }
  return p;
}

// dL/dz given dL/dp and p = softmax(z).
template <typename T>
Tensor<T> softmax_backward(const Tensor<T>& p, const Tensor<T>& dp) {
  Tensor<T> dz(p.shape());
  const std::size_t plane = p.shape().plane();
  const std::size_t channels = p.c();
  for (std::size_t n = 0; n < p.n(); ++n) {
    const T* pp = p.sample(n).data();
    const T* gp = dp.sample(n).data();
    T* out = dz.sample(n).data();
    for (std::size_t i = 0; i < plane; ++i) {
      T dot{};
      for (std::size_t c = 0; c < channels; ++c) dot += pp[c * plane + i] * gp[c * plane + i];
      for (std::size_t c = 0; c < channels; ++c)
        out[c * plane + i] = pp[c * plane + i] * (gp[c * plane + i] - dot);
    }
  }
  return dz;
}

}  // namespace fetalbet::nn
