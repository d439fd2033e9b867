#pragma once

// U-Net family: plain U-Net, Attention U-Net and a self-configuring
// ("dynamic") U-Net whose depth and widths are planned from the patch shape.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "fetalbet/error.hpp"
#include "fetalbet/nn/layers.hpp"
#include "fetalbet/nn/tensor.hpp"

namespace fetalbet {

enum class ModelFamily { unet, attention_unet, dynamic_unet };

inline std::string_view to_string(ModelFamily f) {
  switch (f) {
    case ModelFamily::unet: return "unet";
    case ModelFamily::attention_unet: return "attention_unet";
    case ModelFamily::dynamic_unet: return "dynamic_unet";
  }
  return "unet";
}

inline ModelFamily parse_family(std::string_view s) {
  if (s == "unet") return ModelFamily::unet;
  if (s == "attention_unet") return ModelFamily::attention_unet;
  if (s == "dynamic_unet") return ModelFamily::dynamic_unet;
  throw ValidationError("unknown model family '" + std::string(s) + "'");
}

inline std::string_view to_string(nn::NormKind k) {
  switch (k) {
    case nn::NormKind::batch: return "batch";
    case nn::NormKind::instance: return "instance";
    case nn::NormKind::none: return "none";
  }
  return "batch";
}

inline nn::NormKind parse_norm(std::string_view s) {
  if (s == "batch") return nn::NormKind::batch;
  if (s == "instance") return nn::NormKind::instance;
  if (s == "none") return nn::NormKind::none;
  throw ValidationError("unknown norm '" + std::string(s) + "'");
}

inline std::string_view to_string(nn::ActivationKind k) {
  return k == nn::ActivationKind::relu ? "relu" : "leaky_relu";
}

inline nn::ActivationKind parse_activation(std::string_view s) {
  if (s == "relu") return nn::ActivationKind::relu;
  if (s == "leaky_relu") return nn::ActivationKind::leaky_relu;
  throw ValidationError("unknown activation '" + std::string(s) + "'");
}

struct ModelSpec {
  ModelFamily family = ModelFamily::unet;
  int levels = 5;
  int base_channels = 32;
  int channel_cap = 512;
  int in_channels = 1;
  int out_classes = 2;
  nn::NormKind norm = nn::NormKind::batch;
  nn::ActivationKind activation = nn::ActivationKind::relu;
  // Training patch edge; also the sliding-window size at inference.
  int patch_size = 256;

  void validate() const {
    if (levels < 2) throw ValidationError("model.levels must be >= 2");
    if (base_channels < 1) throw ValidationError("model.base_channels must be >= 1");
    if (channel_cap < base_channels)
      throw ValidationError("model.channel_cap must be >= base_channels");
    if (in_channels < 1) throw ValidationError("model.in_channels must be >= 1");
    if (out_classes != 2)
      throw ValidationError("model.out_classes must be 2 (brain vs background)");
    if (patch_size < 1) throw ValidationError("model.patch_size must be >= 1");
  }

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

struct LevelPlan {
  int kernel = 3;
  int stride = 1;  // stride of the first convolution entering this level
  int channels = 0;
  int extent_rows = 0;
  int extent_cols = 0;
};

struct ArchitecturePlan {
  int downsamplings = 0;
  std::vector<LevelPlan> levels;
};

inline int level_channels(int base, int cap, int level) {
  long long ch = static_cast<long long>(base) << level;
  return static_cast<int>(std::min<long long>(ch, cap));
}

// Depth rule: min(5, floor(log2(min_dim / 8))) stride-2 downsamplings, 3x3
// kernels, channels base * 2^level capped at channel_cap.
inline ArchitecturePlan plan_dynamic_unet(std::size_t rows, std::size_t cols,
                                          double row_spacing = 1.0, double col_spacing = 1.0,
                                          int base_channels = 32, int channel_cap = 512) {
  if (rows < 32 || cols < 32)
    throw PlanningError("dynamic U-Net planning needs >= 32 pixels per axis, got " +
                        std::to_string(rows) + "x" + std::to_string(cols));
  if (!(row_spacing > 0) || !(col_spacing > 0))
    throw PlanningError("dynamic U-Net planning needs positive spacing");
  const double min_dim = static_cast<double>(std::min(rows, cols));
  const int down = std::min(5, static_cast<int>(std::floor(std::log2(min_dim / 8.0))));
  ArchitecturePlan plan;
  plan.downsamplings = down;
  for (int l = 0; l <= down; ++l) {
    LevelPlan lp;
    lp.kernel = 3;
    lp.stride = l == 0 ? 1 : 2;
    lp.channels = level_channels(base_channels, channel_cap, l);
    lp.extent_rows = static_cast<int>((rows + (std::size_t{1} << l) - 1) >> l);
    lp.extent_cols = static_cast<int>((cols + (std::size_t{1} << l) - 1) >> l);
    plan.levels.push_back(lp);
  }
  return plan;
}

namespace nn {

// conv -> norm -> act, twice.
template <typename T>
class ConvBlock {
 public:
  ConvBlock() = default;
  ConvBlock(const std::string& name, std::size_t in, std::size_t out, std::size_t first_stride,
            NormKind norm, ActivationKind act)
      : conv1_(name + ".conv1", in, out, 3, first_stride), norm1_(name + ".norm1", out, norm),
        act1_(act), conv2_(name + ".conv2", out, out, 3, 1), norm2_(name + ".norm2", out, norm),
        act2_(act) {}

  void init(InitRng& rng) {
    conv1_.init(rng);
    conv2_.init(rng);
  }
  void params(ParamList<T>& out) {
    conv1_.params(out);
    norm1_.params(out);
    conv2_.params(out);
    norm2_.params(out);
  }
  Tensor<T> forward(const Tensor<T>& x) const {
    return act2_.forward(norm2_.forward(conv2_.forward(act1_.forward(norm1_.forward(conv1_.forward(x))))));
  }
  Tensor<T> forward_train(const Tensor<T>& x) {
    auto y = act1_.forward_train(norm1_.forward_train(conv1_.forward_train(x)));
    return act2_.forward_train(norm2_.forward_train(conv2_.forward_train(y)));
  }
  Tensor<T> backward(const Tensor<T>& dy) {
    auto g = conv2_.backward(norm2_.backward(act2_.backward(dy)));
    return conv1_.backward(norm1_.backward(act1_.backward(g)));
  }

 private:
  Conv2d<T> conv1_;
  Norm2d<T> norm1_;
  Activation<T> act1_;
  Conv2d<T> conv2_;
  Norm2d<T> norm2_;
  Activation<T> act2_;
};

// Additive attention gate on a skip connection:
//   alpha = sigmoid(psi(relu(W_s * skip + W_g * gate))),  out = skip * alpha.
// `gate` is the coarser decoder output already brought to the skip's grid.
template <typename T>
class AttentionGate {
 public:
  AttentionGate() = default;
  AttentionGate(const std::string& name, std::size_t skip_channels, std::size_t gate_channels)
      : inter_(std::max<std::size_t>(1, skip_channels / 2)),
        w_skip_(name + ".skip", skip_channels, inter_, 1),
        w_gate_(name + ".gate", gate_channels, inter_, 1),
        psi_(name + ".psi", inter_, 1, 1) {}

  std::size_t inter_channels() const noexcept { return inter_; }
  Conv2d<T>& psi() noexcept { return psi_; }
  Conv2d<T>& skip_projection() noexcept { return w_skip_; }
  Conv2d<T>& gate_projection() noexcept { return w_gate_; }

  void init(InitRng& rng) {
    w_skip_.init(rng);
    w_gate_.init(rng);
    psi_.init(rng);
  }
  void params(ParamList<T>& out) {
    w_skip_.params(out);
    w_gate_.params(out);
    psi_.params(out);
  }

  // Returns the gated skip; writes the coefficient map when `alpha_out` is set.
  Tensor<T> forward(const Tensor<T>& skip, const Tensor<T>& gate,
                    Tensor<T>* alpha_out = nullptr) const {
    check(skip, gate);
    auto s = w_skip_.forward(skip);
    auto g = w_gate_.forward(gate);
    s += g;
    relu_inplace(s);
    auto alpha = psi_.forward(s);
    for (auto& v : alpha.values()) v = sigmoid(v);
    auto out = multiply(skip, alpha);
    if (alpha_out) *alpha_out = std::move(alpha);
    return out;
  }

  Tensor<T> forward_train(const Tensor<T>& skip, const Tensor<T>& gate) {
    check(skip, gate);
    skip_ = skip;
    auto s = w_skip_.forward_train(skip);
    auto g = w_gate_.forward_train(gate);
    s += g;
    pre_relu_ = s;
    relu_inplace(s);
    alpha_ = psi_.forward_train(s);
    for (auto& v : alpha_.values()) v = sigmoid(v);
    return multiply(skip, alpha_);
  }

  // Returns (d skip, d gate).
  std::pair<Tensor<T>, Tensor<T>> backward(const Tensor<T>& dy) {
    const Shape& sh = skip_.shape();
    Tensor<T> dskip = multiply(dy, alpha_);
    Tensor<T> dq(alpha_.shape());
    const std::size_t plane = sh.plane();
    for (std::size_t n = 0; n < sh.n; ++n) {
      auto a = alpha_.plane(n, 0);
      auto out = dq.plane(n, 0);
      for (std::size_t c = 0; c < sh.c; ++c) {
        auto g = dy.plane(n, c);
        auto x = skip_.plane(n, c);
        for (std::size_t i = 0; i < plane; ++i) out[i] += g[i] * x[i];
      }
      for (std::size_t i = 0; i < plane; ++i) out[i] *= a[i] * (T(1) - a[i]);
    }
    auto dr = psi_.backward(dq);
    for (std::size_t i = 0; i < dr.size(); ++i)
      if (!(pre_relu_[i] > T(0))) dr[i] = T(0);
    dskip += w_skip_.backward(dr);
    auto dgate = w_gate_.backward(dr);
    return {std::move(dskip), std::move(dgate)};
  }

 private:
  static void check(const Tensor<T>& skip, const Tensor<T>& gate) {
    detail::require<ShapeError>(skip.n() == gate.n() && skip.h() == gate.h() &&
                                    skip.w() == gate.w(),
                                "attention gate: skip " + skip.shape().str() +
                                    " and gate " + gate.shape().str() +
                                    " differ spatially after projection");
  }
  static void relu_inplace(Tensor<T>& t) {
    for (auto& v : t.values()) v = v > T(0) ? v : T(0);
  }
  // x (N,C,H,W) times a (N,1,H,W) broadcast over channels.
  static Tensor<T> multiply(const Tensor<T>& x, const Tensor<T>& a) {
    Tensor<T> y(x.shape());
    for (std::size_t n = 0; n < x.n(); ++n) {
      auto ap = a.plane(n, 0);
      for (std::size_t c = 0; c < x.c(); ++c) {
        auto xp = x.plane(n, c);
        auto yp = y.plane(n, c);
        for (std::size_t i = 0; i < xp.size(); ++i) yp[i] = xp[i] * ap[i];
      }
    }
    return y;
  }

  std::size_t inter_ = 1;
  Conv2d<T> w_skip_, w_gate_, psi_;
  Tensor<T> skip_, pre_relu_, alpha_;
};

}  // namespace nn

// Attention coefficient maps captured during an evaluation forward pass,
// ordered from the deepest gate to the finest.
template <typename T>
struct AttentionProbe {
  std::vector<nn::Tensor<T>> alphas;
};

template <typename T = float>
class SegmentationNet {
 public:
  using Tensor = nn::Tensor<T>;

  SegmentationNet() = default;

  SegmentationNet(const ModelSpec& spec, std::uint64_t seed) : spec_(spec) {
    spec_.validate();
    const bool dynamic = spec_.family == ModelFamily::dynamic_unet;
    if (dynamic) {
      const auto p = static_cast<std::size_t>(spec_.patch_size);
      plan_ = plan_dynamic_unet(p, p, 1.0, 1.0, spec_.base_channels, spec_.channel_cap);
      spec_.levels = plan_.downsamplings + 1;
    } else {
      plan_.downsamplings = spec_.levels - 1;
      for (int l = 0; l < spec_.levels; ++l) {
        LevelPlan lp;
        lp.stride = 1;
        lp.channels = level_channels(spec_.base_channels, spec_.channel_cap, l);
        lp.extent_rows = lp.extent_cols = spec_.patch_size >> l;
        plan_.levels.push_back(lp);
      }
    }
    const auto L = static_cast<std::size_t>(spec_.levels);
    std::size_t in = static_cast<std::size_t>(spec_.in_channels);
    for (std::size_t l = 0; l < L; ++l) {
      const auto ch = static_cast<std::size_t>(plan_.levels[l].channels);
      const std::size_t stride = dynamic && l > 0 ? 2 : 1;
      encoders_.emplace_back("enc" + std::to_string(l), in, ch, stride, spec_.norm,
                             spec_.activation);
      in = ch;
    }
    pools_.resize(dynamic ? 0 : L - 1);
    for (std::size_t l = 0; l + 1 < L; ++l) {
      const auto ch = static_cast<std::size_t>(plan_.levels[l].channels);
      const auto below = static_cast<std::size_t>(plan_.levels[l + 1].channels);
      ups_.emplace_back("up" + std::to_string(l), below, ch);
      decoders_.emplace_back("dec" + std::to_string(l), 2 * ch, ch, 1, spec_.norm,
                             spec_.activation);
      if (spec_.family == ModelFamily::attention_unet)
        gates_.emplace_back("gate" + std::to_string(l), ch, ch);
    }
    head_ = nn::Conv2d<T>("head", static_cast<std::size_t>(plan_.levels[0].channels),
                          static_cast<std::size_t>(spec_.out_classes), 1);
    nn::InitRng rng(seed);
    for (auto& e : encoders_) e.init(rng);
    for (std::size_t l = 0; l < ups_.size(); ++l) {
      ups_[l].init(rng);
      decoders_[l].init(rng);
      if (!gates_.empty()) gates_[l].init(rng);
    }
    head_.init(rng);
  }

  const ModelSpec& spec() const noexcept { return spec_; }
  const ArchitecturePlan& plan() const noexcept { return plan_; }
  bool has_attention() const noexcept { return !gates_.empty(); }
  std::size_t gate_count() const noexcept { return gates_.size(); }
  nn::AttentionGate<T>& gate(std::size_t level) { return gates_.at(level); }

  // All parameters and buffers, in a stable order.
  nn::ParamList<T> params() {
    nn::ParamList<T> out;
    for (auto& e : encoders_) e.params(out);
    for (std::size_t l = 0; l < ups_.size(); ++l) {
      ups_[l].params(out);
      if (!gates_.empty()) gates_[l].params(out);
      decoders_[l].params(out);
    }
    head_.params(out);
    return out;
  }

  std::size_t parameter_count() {
    std::size_t total = 0;
    for (auto* p : params())
      if (p->trainable) total += p->value.size();
    return total;
  }

  void zero_grad() {
    for (auto* p : params()) p->grad.zero();
  }

  // Sets every attention gate's output bias; +large opens all gates (alpha = 1),
  // -large closes them (alpha = 0).
  void set_gate_bias(T value) {
    for (auto& g : gates_) g.psi().bias().value.fill(value);
  }

  // Throws ShapeError naming the first level whose extent cannot be halved.
  void check_input(const Tensor& x) const {
    detail::require<ShapeError>(x.c() == static_cast<std::size_t>(spec_.in_channels),
                                "model expects " + std::to_string(spec_.in_channels) +
                                    " input channel(s), got " + std::to_string(x.c()));
    std::size_t h = x.h(), w = x.w();
    for (int l = 1; l < spec_.levels; ++l) {
      if (h % 2 != 0 || w % 2 != 0)
        throw ShapeError("input " + std::to_string(x.h()) + "x" + std::to_string(x.w()) +
                         " not divisible by " + std::to_string(1 << (spec_.levels - 1)) +
                         ": extent " + std::to_string(h) + "x" + std::to_string(w) +
                         " at level " + std::to_string(l - 1) + " cannot be halved for level " +
                         std::to_string(l));
      h /= 2;
      w /= 2;
    }
  }

  // Evaluation-mode forward: class probabilities (N, 2, H, W). Read-only.
  Tensor predict(const Tensor& x, AttentionProbe<T>* probe = nullptr) const {
    return nn::softmax_channels(logits(x, probe));
  }

  Tensor logits(const Tensor& x, AttentionProbe<T>* probe = nullptr) const {
    check_input(x);
    if (probe) probe->alphas.clear();
    const std::size_t L = encoders_.size();
    std::vector<Tensor> skips(L);
    Tensor cur = x;
    for (std::size_t l = 0; l < L; ++l) {
      if (l > 0 && !pools_.empty()) cur = pools_[l - 1].forward(cur);
      cur = encoders_[l].forward(cur);
      skips[l] = cur;
    }
    for (std::size_t l = L - 1; l-- > 0;) {
      Tensor up = ups_[l].forward(cur);
      Tensor skip = skips[l];
      if (!gates_.empty()) {
        Tensor alpha;
        skip = gates_[l].forward(skip, up, probe ? &alpha : nullptr);
        if (probe) probe->alphas.push_back(std::move(alpha));
      }
      cur = decoders_[l].forward(nn::concat_channels(skip, up));
    }
    return head_.forward(cur);
  }

  // Training-mode forward; caches activations for backward().
  Tensor forward_train(const Tensor& x) {
    check_input(x);
    const std::size_t L = encoders_.size();
    std::vector<Tensor> skips(L);
    Tensor cur = x;
    for (std::size_t l = 0; l < L; ++l) {
      if (l > 0 && !pools_.empty()) cur = pools_[l - 1].forward_train(cur);
      cur = encoders_[l].forward_train(cur);
      skips[l] = cur;
    }
    skip_channels_.assign(L, 0);
    for (std::size_t l = L - 1; l-- > 0;) {
      Tensor up = ups_[l].forward_train(cur);
      Tensor skip = gates_.empty() ? skips[l] : gates_[l].forward_train(skips[l], up);
      skip_channels_[l] = skip.c();
      cur = decoders_[l].forward_train(nn::concat_channels(skip, up));
    }
    probs_ = nn::softmax_channels(head_.forward_train(cur));
    return probs_;
  }

  // Backpropagates dLoss/dProbabilities; accumulates into parameter grads.
  void backward(const Tensor& dprobs) {
    detail::require<ShapeError>(dprobs.shape() == probs_.shape(),
                                "backward: gradient shape mismatch");
    Tensor g = head_.backward(nn::softmax_backward(probs_, dprobs));
    const std::size_t L = encoders_.size();
    std::vector<Tensor> dskips(L);
    for (std::size_t l = 0; l + 1 < L; ++l) {
      Tensor dcat = decoders_[l].backward(g);
      Tensor dskip, dup;
      nn::split_channels(dcat, skip_channels_[l], dskip, dup);
      if (!gates_.empty()) {
        auto [ds, dgate] = gates_[l].backward(dskip);
        dskip = std::move(ds);
        dup += dgate;
      }
      dskips[l] = std::move(dskip);
      g = ups_[l].backward(dup);
    }
    for (std::size_t l = L; l-- > 0;) {
      if (l + 1 < L) g += dskips[l];
      g = encoders_[l].backward(g);
      if (l > 0 && !pools_.empty()) g = pools_[l - 1].backward(g);
    }
  }

 private:
  ModelSpec spec_{};
  ArchitecturePlan plan_{};
  std::vector<nn::ConvBlock<T>> encoders_;
  std::vector<nn::MaxPool2x<T>> pools_;
  std::vector<nn::UpConv2x<T>> ups_;
  std::vector<nn::ConvBlock<T>> decoders_;
  std::vector<nn::AttentionGate<T>> gates_;
  nn::Conv2d<T> head_;
  Tensor probs_;
  std::vector<std::size_t> skip_channels_;
};

template <typename T = float>
SegmentationNet<T> build_unet(const ModelSpec& spec, std::uint64_t seed = 0) {
  detail::require(spec.family == ModelFamily::unet, "build_unet: family must be unet");
  return SegmentationNet<T>(spec, seed);
}

template <typename T = float>
SegmentationNet<T> build_attention_unet(const ModelSpec& spec, std::uint64_t seed = 0) {
  detail::require(spec.family == ModelFamily::attention_unet,
                  "build_attention_unet: family must be attention_unet");
  return SegmentationNet<T>(spec, seed);
}

template <typename T = float>
SegmentationNet<T> build_dynamic_unet(const ModelSpec& spec, std::uint64_t seed = 0) {
  detail::require(spec.family == ModelFamily::dynamic_unet,
                  "build_dynamic_unet: family must be dynamic_unet");
  return SegmentationNet<T>(spec, seed);
}

template <typename T = float>
SegmentationNet<T> build_model(const ModelSpec& spec, std::uint64_t seed = 0) {
  return SegmentationNet<T>(spec, seed);
}

// Copies every parameter of `from` whose name also exists in `to`.
// Returns the number of tensors copied.
template <typename T>
std::size_t copy_shared_weights(SegmentationNet<T>& from, SegmentationNet<T>& to) {
  std::unordered_map<std::string, nn::Param<T>*> index;
  for (auto* p : from.params()) index.emplace(p->name, p);
  std::size_t copied = 0;
  for (auto* p : to.params()) {
    auto it = index.find(p->name);
    if (it != index.end() && it->second->value.shape() == p->value.shape()) {
      p->value = it->second->value;
      ++copied;
    }
  }
  return copied;
}

}  // namespace fetalbet
