#pragma once

// Training-time augmentation. Spatial transforms act on image and mask with
// identical geometry (bilinear for the image, nearest for the mask, zero
// outside the field of view); intensity transforms touch the image only.
//
// Pipeline order: flip_h, flip_v, rotate, zoom, affine, then bias_field,
// gaussian_smooth, gaussian_noise. Every transform consumes one Bernoulli
// draw whether or not it is enabled, so toggling one transform does not
// shift the random stream seen by the others.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "fetalbet/error.hpp"
#include "fetalbet/image.hpp"
#include "fetalbet/preprocess.hpp"

namespace fetalbet {

class RandomSource {
 public:
  RandomSource() = default;
  explicit RandomSource(std::uint64_t seed) : engine_(seed) {}

  // Independent stream for (seed, stream id), e.g. one per data worker or
  // per (epoch, sample) pair.
  static RandomSource for_stream(std::uint64_t seed, std::uint64_t stream) {
    return RandomSource(splitmix64(splitmix64(seed) ^ (stream + 0x9E3779B97F4A7C15ULL)));
  }

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
  double normal(double mean, double sd) { return std::normal_distribution<double>(mean, sd)(engine_); }
  bool bernoulli(double p) { return uniform(0.0, 1.0) < p; }
  std::uint64_t next() { return engine_(); }
  std::mt19937_64& engine() { return engine_; }

  static std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
  }

 private:
  std::mt19937_64 engine_{0};
};

struct Range {
  double lo = 0.0;
  double hi = 0.0;
  friend bool operator==(const Range&, const Range&) = default;
};

struct TransformToggle {
  bool enabled = true;
  double p = 0.5;
  friend bool operator==(const TransformToggle&, const TransformToggle&) = default;
};

struct AugmentConfig {
  TransformToggle flip_h{true, 0.5};
  TransformToggle flip_v{true, 0.5};
  TransformToggle rotate{true, 0.5};
  double rotate_max_degrees = 180.0;
  TransformToggle zoom{true, 0.6};
  Range zoom_range{0.8, 1.25};
  TransformToggle affine{true, 0.6};
  double affine_max_rotation_degrees = 15.0;
  double affine_max_shear_degrees = 10.0;
  double affine_max_translation = 0.1;  // fraction of the image extent
  Range affine_scale_range{0.8, 1.25};
  TransformToggle noise{true, 0.5};
  double noise_std = 0.4;
  TransformToggle bias{true, 0.6};
  int bias_degree = 4;
  Range bias_coeff_range{0.05, 0.1};
  TransformToggle smooth{true, 0.4};
  Range smooth_sigma_range{0.5, 1.0};
  std::uint64_t rng_seed = 0;

  static AugmentConfig disabled() {
    AugmentConfig c;
    for (auto* t : {&c.flip_h, &c.flip_v, &c.rotate, &c.zoom, &c.affine, &c.noise, &c.bias, &c.smooth})
      t->enabled = false;
    return c;
  }

  void validate() const {
    auto prob = [](const TransformToggle& t, const char* name) {
      if (!(t.p >= 0.0 && t.p <= 1.0))
        throw ValidationError(std::string("augment.") + name + " probability must lie in [0, 1]");
    };
    auto range = [](const Range& r, const char* name) {
      if (!(r.lo <= r.hi)) throw ValidationError(std::string("augment.") + name + " range must satisfy lo <= hi");
    };
    prob(flip_h, "flip_h");
    prob(flip_v, "flip_v");
    prob(rotate, "rotate");
    prob(zoom, "zoom");
    prob(affine, "affine");
    prob(noise, "noise");
    prob(bias, "bias");
    prob(smooth, "smooth");
    range(zoom_range, "zoom_range");
    range(affine_scale_range, "affine_scale_range");
    range(bias_coeff_range, "bias_coeff_range");
    range(smooth_sigma_range, "smooth_sigma_range");
    if (!(zoom_range.lo > 0) || !(affine_scale_range.lo > 0))
      throw ValidationError("augment: zoom and scale factors must be positive");
    if (rotate_max_degrees < 0 || affine_max_rotation_degrees < 0 || affine_max_shear_degrees < 0 ||
        affine_max_translation < 0 || noise_std < 0)
      throw ValidationError("augment: magnitudes must be non-negative");
    if (bias_degree < 0) throw ValidationError("augment.bias_degree must be >= 0");
    if (!(smooth_sigma_range.lo > 0)) throw ValidationError("augment.smooth_sigma_range must be positive");
  }

  friend bool operator==(const AugmentConfig&, const AugmentConfig&) = default;
};

// ---------------------------------------------------------------------------
// Geometry

// dst = m * (src - centre) + centre + offset, in (row, col) pixel coordinates.
struct Affine2D {
  std::array<std::array<double, 2>, 2> m{{{1.0, 0.0}, {0.0, 1.0}}};
  std::array<double, 2> offset{0.0, 0.0};

  static Affine2D identity() { return {}; }
  static Affine2D rotation(double degrees) {
    const double a = degrees * std::numbers::pi / 180.0;
    Affine2D t;
    t.m = {{{std::cos(a), -std::sin(a)}, {std::sin(a), std::cos(a)}}};
    return t;
  }
  static Affine2D scaling(double row_factor, double col_factor) {
    Affine2D t;
    t.m = {{{row_factor, 0.0}, {0.0, col_factor}}};
    return t;
  }
  static Affine2D translation(double rows, double cols) {
    Affine2D t;
    t.offset = {rows, cols};
    return t;
  }
  static Affine2D shear(double degrees) {
    Affine2D t;
    t.m = {{{1.0, std::tan(degrees * std::numbers::pi / 180.0)}, {0.0, 1.0}}};
    return t;
  }

  // this after other.
  Affine2D then_after(const Affine2D& other) const { return compose(*this, other); }

  static Affine2D compose(const Affine2D& outer, const Affine2D& inner) {
    Affine2D r;
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j)
        r.m[i][j] = outer.m[i][0] * inner.m[0][j] + outer.m[i][1] * inner.m[1][j];
    for (int i = 0; i < 2; ++i)
      r.offset[i] = outer.m[i][0] * inner.offset[0] + outer.m[i][1] * inner.offset[1] + outer.offset[i];
    return r;
  }

  Affine2D inverse() const {
    const double det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    detail::require(std::abs(det) > 1e-12, "Affine2D: singular transform");
    Affine2D r;
    r.m = {{{m[1][1] / det, -m[0][1] / det}, {-m[1][0] / det, m[0][0] / det}}};
    r.offset = {-(r.m[0][0] * offset[0] + r.m[0][1] * offset[1]),
                -(r.m[1][0] * offset[0] + r.m[1][1] * offset[1])};
    return r;
  }
};

struct AffineParams {
  double rotation_degrees = 0.0;
  double shear_degrees = 0.0;
  double scale_row = 1.0;
  double scale_col = 1.0;
  double translate_row = 0.0;  // pixels
  double translate_col = 0.0;

  Affine2D transform() const {
    return Affine2D::compose(
        Affine2D::translation(translate_row, translate_col),
        Affine2D::compose(Affine2D::rotation(rotation_degrees),
                          Affine2D::compose(Affine2D::shear(shear_degrees),
                                            Affine2D::scaling(scale_row, scale_col))));
  }
};

namespace detail {

inline double zero_padded_bilinear(const Image& img, double y, double x) {
  const double fy0 = std::floor(y), fx0 = std::floor(x);
  const auto y0 = static_cast<long long>(fy0), x0 = static_cast<long long>(fx0);
  const double wy = y - fy0, wx = x - fx0;
  const auto rows = static_cast<long long>(img.rows()), cols = static_cast<long long>(img.cols());
  auto px = [&](long long r, long long c) -> double {
    if (r < 0 || c < 0 || r >= rows || c >= cols) return 0.0;
    return img(static_cast<std::size_t>(r), static_cast<std::size_t>(c));
  };
  return (1 - wy) * ((1 - wx) * px(y0, x0) + wx * px(y0, x0 + 1)) +
         wy * ((1 - wx) * px(y0 + 1, x0) + wx * px(y0 + 1, x0 + 1));
}

}  // namespace detail

// Resamples `img` so that output(dst) = img(T^-1(dst)).
inline Image warp_image(const Image& img, const Affine2D& t) {
  const Affine2D inv = t.inverse();
  const double cy = (static_cast<double>(img.rows()) - 1) / 2, cx = (static_cast<double>(img.cols()) - 1) / 2;
  Image out(img.rows(), img.cols());
  for (std::size_t r = 0; r < img.rows(); ++r)
    for (std::size_t c = 0; c < img.cols(); ++c) {
      const double dy = static_cast<double>(r) - cy, dx = static_cast<double>(c) - cx;
      const double sy = inv.m[0][0] * dy + inv.m[0][1] * dx + inv.offset[0] + cy;
      const double sx = inv.m[1][0] * dy + inv.m[1][1] * dx + inv.offset[1] + cx;
      out(r, c) = static_cast<float>(detail::zero_padded_bilinear(img, sy, sx));
    }
  return out;
}

inline Mask warp_mask(const Mask& mask, const Affine2D& t) {
  const Affine2D inv = t.inverse();
  const double cy = (static_cast<double>(mask.rows()) - 1) / 2, cx = (static_cast<double>(mask.cols()) - 1) / 2;
  const auto rows = static_cast<long long>(mask.rows()), cols = static_cast<long long>(mask.cols());
  Mask out(mask.rows(), mask.cols());
  for (std::size_t r = 0; r < mask.rows(); ++r)
    for (std::size_t c = 0; c < mask.cols(); ++c) {
      const double dy = static_cast<double>(r) - cy, dx = static_cast<double>(c) - cx;
      const auto sy = std::llround(inv.m[0][0] * dy + inv.m[0][1] * dx + inv.offset[0] + cy);
      const auto sx = std::llround(inv.m[1][0] * dy + inv.m[1][1] * dx + inv.offset[1] + cx);
      out(r, c) = (sy < 0 || sx < 0 || sy >= rows || sx >= cols)
                      ? 0
                      : mask(static_cast<std::size_t>(sy), static_cast<std::size_t>(sx));
    }
  return out;
}

inline Sample warp(const Sample& s, const Affine2D& t) {
  Sample out = s;
  out.image.pixels = warp_image(s.image.pixels, t);
  out.mask = warp_mask(s.mask, t);
  return out;
}

enum class FlipAxis { horizontal, vertical };

// Exact index reversal: horizontal reverses column order, vertical row order.
template <typename T>
Image2D<T> flip(const Image2D<T>& img, FlipAxis axis) {
  Image2D<T> out(img.rows(), img.cols());
  for (std::size_t r = 0; r < img.rows(); ++r)
    for (std::size_t c = 0; c < img.cols(); ++c)
      out(r, c) = axis == FlipAxis::horizontal ? img(r, img.cols() - 1 - c) : img(img.rows() - 1 - r, c);
  return out;
}

inline Sample flip(const Sample& s, FlipAxis axis) {
  Sample out = s;
  out.image.pixels = flip(s.image.pixels, axis);
  out.mask = flip(s.mask, axis);
  return out;
}

// ---------------------------------------------------------------------------
// Random spatial transforms

inline Sample random_flip(const Sample& s, double p, RandomSource& rng, FlipAxis axis) {
  return rng.bernoulli(p) ? flip(s, axis) : s;
}

// Both axes, each independently with probability p.
inline Sample random_flip(const Sample& s, double p, RandomSource& rng) {
  Sample out = random_flip(s, p, rng, FlipAxis::horizontal);
  return random_flip(out, p, rng, FlipAxis::vertical);
}

inline Sample rotate(const Sample& s, double degrees) {
  if (degrees == 0.0) return s;
  return warp(s, Affine2D::rotation(degrees));
}

inline Sample random_rotate(const Sample& s, double p, double max_degrees, RandomSource& rng) {
  if (!rng.bernoulli(p)) return s;
  return rotate(s, rng.uniform(-max_degrees, max_degrees));
}

inline Sample zoom(const Sample& s, double factor) {
  detail::require(factor > 0, "zoom factor must be positive");
  if (factor == 1.0) return s;
  return warp(s, Affine2D::scaling(factor, factor));
}

inline Sample random_zoom(const Sample& s, double p, Range range, RandomSource& rng) {
  detail::require(range.lo > 0 && range.lo <= range.hi, "random_zoom: need 0 < lo <= hi");
  if (!rng.bernoulli(p)) return s;
  return zoom(s, rng.uniform(range.lo, range.hi));
}

struct AffineLimits {
  double max_rotation_degrees = 15.0;
  double max_shear_degrees = 10.0;
  double max_translation = 0.1;
  Range scale{0.8, 1.25};
};

inline AffineParams draw_affine(const AffineLimits& lim, std::size_t rows, std::size_t cols,
                                RandomSource& rng) {
  AffineParams a;
  a.rotation_degrees = rng.uniform(-lim.max_rotation_degrees, lim.max_rotation_degrees);
  a.shear_degrees = rng.uniform(-lim.max_shear_degrees, lim.max_shear_degrees);
  a.scale_row = rng.uniform(lim.scale.lo, lim.scale.hi);
  a.scale_col = rng.uniform(lim.scale.lo, lim.scale.hi);
  a.translate_row = rng.uniform(-lim.max_translation, lim.max_translation) * static_cast<double>(rows);
  a.translate_col = rng.uniform(-lim.max_translation, lim.max_translation) * static_cast<double>(cols);
  return a;
}

inline Sample affine(const Sample& s, const AffineParams& params) { return warp(s, params.transform()); }

inline Sample random_affine(const Sample& s, double p, const AffineLimits& lim, RandomSource& rng) {
  if (!rng.bernoulli(p)) return s;
  return affine(s, draw_affine(lim, s.mask.rows(), s.mask.cols(), rng));
}

// ---------------------------------------------------------------------------
// Intensity transforms

inline Image add_gaussian_noise(const Image& img, double sd, RandomSource& rng) {
  Image out = img;
  for (auto& v : out) v = static_cast<float>(static_cast<double>(v) + rng.normal(0.0, sd));
  return out;
}

inline Image gaussian_noise(const Image& img, double p, double sd, RandomSource& rng) {
  return rng.bernoulli(p) ? add_gaussian_noise(img, sd, rng) : img;
}

// Monomials x^i y^j with i + j <= degree, ordered by total degree then i.
inline std::vector<std::pair<int, int>> bias_terms(int degree) {
  std::vector<std::pair<int, int>> terms;
  for (int d = 0; d <= degree; ++d)
    for (int i = d; i >= 0; --i) terms.emplace_back(i, d - i);
  return terms;
}

// Log-field B(x, y) = sum c_k x^i y^j over normalized coordinates in [-1, 1].
inline Image bias_log_field(std::size_t rows, std::size_t cols, int degree, const std::vector<double>& coeffs) {
  const auto terms = bias_terms(degree);
  detail::require(coeffs.size() == terms.size(), "bias field: expected " + std::to_string(terms.size()) +
                                                     " coefficients, got " + std::to_string(coeffs.size()));
  auto norm = [](std::size_t i, std::size_t n) {
    return n > 1 ? 2.0 * static_cast<double>(i) / static_cast<double>(n - 1) - 1.0 : 0.0;
  };
  Image field(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const double y = norm(r, rows);
    for (std::size_t c = 0; c < cols; ++c) {
      const double x = norm(c, cols);
      double b = 0.0;
      for (std::size_t k = 0; k < terms.size(); ++k)
        b += coeffs[k] * std::pow(x, terms[k].first) * std::pow(y, terms[k].second);
      field(r, c) = static_cast<float>(b);
    }
  }
  return field;
}

inline Image apply_bias_field(const Image& img, int degree, const std::vector<double>& coeffs) {
  const Image log_field = bias_log_field(img.rows(), img.cols(), degree, coeffs);
  Image out(img.rows(), img.cols());
  for (std::size_t i = 0; i < img.size(); ++i)
    out.values()[i] = static_cast<float>(static_cast<double>(img.values()[i]) *
                                         std::exp(static_cast<double>(log_field.values()[i])));
  return out;
}

// Magnitudes uniform in [lo, hi] with a random sign.
inline std::vector<double> draw_bias_coefficients(int degree, Range magnitude, RandomSource& rng) {
  std::vector<double> coeffs(bias_terms(degree).size());
  for (auto& c : coeffs) {
    const double mag = rng.uniform(magnitude.lo, magnitude.hi);
    c = rng.bernoulli(0.5) ? mag : -mag;
  }
  return coeffs;
}

inline Image bias_field(const Image& img, double p, int degree, Range coeff_range, RandomSource& rng,
                        std::vector<double>* coeffs_out = nullptr) {
  if (!rng.bernoulli(p)) return img;
  auto coeffs = draw_bias_coefficients(degree, coeff_range, rng);
  Image out = apply_bias_field(img, degree, coeffs);
  if (coeffs_out) *coeffs_out = std::move(coeffs);
  return out;
}

// Normalized 1D kernel with radius ceil(4 sigma).
inline std::vector<double> gaussian_kernel(double sigma) {
  detail::require(sigma > 0, "gaussian kernel: sigma must be positive");
  const int radius = std::max(1, static_cast<int>(std::ceil(4.0 * sigma)));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double v = std::exp(-0.5 * (i * i) / (sigma * sigma));
    k[static_cast<std::size_t>(i + radius)] = v;
    sum += v;
  }
  for (auto& v : k) v /= sum;
  return k;
}

namespace detail {

// Symmetric reflection (edge sample repeated), valid for any offset.
inline std::size_t reflect(long long i, long long n) {
  if (n == 1) return 0;
  const long long period = 2 * n;
  i %= period;
  if (i < 0) i += period;
  return static_cast<std::size_t>(i < n ? i : period - 1 - i);
}

}  // namespace detail

// Separable isotropic Gaussian with symmetric boundary handling.
inline Image gaussian_blur(const Image& img, double sigma) {
  const auto k = gaussian_kernel(sigma);
  const auto radius = static_cast<long long>(k.size() / 2);
  const auto rows = static_cast<long long>(img.rows()), cols = static_cast<long long>(img.cols());
  std::vector<double> tmp(img.size());
  for (long long r = 0; r < rows; ++r)
    for (long long c = 0; c < cols; ++c) {
      double acc = 0.0;
      for (long long j = -radius; j <= radius; ++j)
        acc += k[static_cast<std::size_t>(j + radius)] *
               img(static_cast<std::size_t>(r), detail::reflect(c + j, cols));
      tmp[static_cast<std::size_t>(r * cols + c)] = acc;
    }
  Image out(img.rows(), img.cols());
  for (long long r = 0; r < rows; ++r)
    for (long long c = 0; c < cols; ++c) {
      double acc = 0.0;
      for (long long j = -radius; j <= radius; ++j)
        acc += k[static_cast<std::size_t>(j + radius)] *
               tmp[detail::reflect(r + j, rows) * static_cast<std::size_t>(cols) + static_cast<std::size_t>(c)];
      out(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) = static_cast<float>(acc);
    }
  return out;
}

inline Image gaussian_smooth(const Image& img, double p, Range sigma_range, RandomSource& rng) {
  if (!rng.bernoulli(p)) return img;
  return gaussian_blur(img, rng.uniform(sigma_range.lo, sigma_range.hi));
}

// ---------------------------------------------------------------------------
// Pipeline

enum class AugmentStep : std::size_t {
  flip_h,
  flip_v,
  rotate,
  zoom,
  affine,
  bias,
  smooth,
  noise,
  count
};

inline constexpr std::size_t kAugmentStepCount = static_cast<std::size_t>(AugmentStep::count);

inline const char* step_name(AugmentStep s) {
  static constexpr const char* names[] = {"flip_h", "flip_v", "rotate", "zoom", "affine", "bias", "smooth", "noise"};
  return names[static_cast<std::size_t>(s)];
}

struct AugmentTrace {
  std::array<bool, kAugmentStepCount> fired{};
  bool did(AugmentStep s) const { return fired[static_cast<std::size_t>(s)]; }
};

inline Sample augment_pipeline(const Sample& input, const AugmentConfig& cfg, RandomSource& rng,
                               AugmentTrace* trace = nullptr) {
  detail::require(input.image.pixels.same_shape(input.mask), "augment: image/mask shape mismatch");
  AugmentTrace local;
  auto roll = [&](const TransformToggle& t, AugmentStep step) {
    const bool hit = rng.bernoulli(t.p) && t.enabled;
    local.fired[static_cast<std::size_t>(step)] = hit;
    return hit;
  };
  Sample s = input;
  if (roll(cfg.flip_h, AugmentStep::flip_h)) s = flip(s, FlipAxis::horizontal);
  if (roll(cfg.flip_v, AugmentStep::flip_v)) s = flip(s, FlipAxis::vertical);
  if (roll(cfg.rotate, AugmentStep::rotate))
    s = rotate(s, rng.uniform(-cfg.rotate_max_degrees, cfg.rotate_max_degrees));
  if (roll(cfg.zoom, AugmentStep::zoom)) s = zoom(s, rng.uniform(cfg.zoom_range.lo, cfg.zoom_range.hi));
  if (roll(cfg.affine, AugmentStep::affine)) {
    AffineLimits lim{cfg.affine_max_rotation_degrees, cfg.affine_max_shear_degrees, cfg.affine_max_translation,
                     cfg.affine_scale_range};
    s = affine(s, draw_affine(lim, s.mask.rows(), s.mask.cols(), rng));
  }
  if (roll(cfg.bias, AugmentStep::bias))
    s.image.pixels = apply_bias_field(s.image.pixels, cfg.bias_degree,
                                      draw_bias_coefficients(cfg.bias_degree, cfg.bias_coeff_range, rng));
  if (roll(cfg.smooth, AugmentStep::smooth))
    s.image.pixels = gaussian_blur(s.image.pixels, rng.uniform(cfg.smooth_sigma_range.lo, cfg.smooth_sigma_range.hi));
  if (roll(cfg.noise, AugmentStep::noise)) s.image.pixels = add_gaussian_noise(s.image.pixels, cfg.noise_std, rng);
  if (trace) *trace = local;
  return s;
}

}  // namespace fetalbet
