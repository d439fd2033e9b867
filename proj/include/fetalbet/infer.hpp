#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <deque>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "fetalbet/checkpoint.hpp"
#include "fetalbet/error.hpp"
#include "fetalbet/image.hpp"
#include "fetalbet/models.hpp"
#include "fetalbet/preprocess.hpp"
#include "fetalbet/volume_io.hpp"

namespace fetalbet {

using ProbabilitySlice = Image2D<float>;

struct WindowGrid {
  std::vector<std::pair<std::size_t, std::size_t>> origins;  // (row, col)
  std::size_t window = 256;
  std::size_t stride = 128;
  std::size_t padded_rows = 0;
  std::size_t padded_cols = 0;
};

namespace detail {

inline std::vector<std::size_t> axis_origins(std::size_t n, std::size_t window, std::size_t stride) {
  if (n <= window) return {0};
  std::vector<std::size_t> out;
  for (std::size_t o = 0; o + window < n; o += stride) out.push_back(o);
  if (out.back() != n - window) out.push_back(n - window);
  return out;
}

}  // namespace detail

// Half-window stride; inputs smaller than the window are treated as padded
// up to it. The last origin on each axis is clamped so it abuts the edge.
inline WindowGrid tile_windows(std::size_t rows, std::size_t cols, std::size_t window = 256) {
  if (rows == 0 || cols == 0) throw ContractError("tile_windows: empty image");
  if (window == 0) throw ContractError("tile_windows: window must be positive");
  WindowGrid g;
  g.window = window;
  g.stride = std::max<std::size_t>(1, window / 2);
  g.padded_rows = std::max(rows, window);
  g.padded_cols = std::max(cols, window);
  for (auto r : detail::axis_origins(g.padded_rows, window, g.stride))
    for (auto c : detail::axis_origins(g.padded_cols, window, g.stride)) g.origins.emplace_back(r, c);
  return g;
}

// Number of windows covering each pixel of the padded image.
inline Image2D<int> coverage_counts(const WindowGrid& g) {
  Image2D<int> cov(g.padded_rows, g.padded_cols);
  for (auto [r0, c0] : g.origins)
    for (std::size_t r = r0; r < r0 + g.window; ++r)
      for (std::size_t c = c0; c < c0 + g.window; ++c) ++cov(r, c);
  return cov;
}

// Windows per forward call.
inline constexpr std::size_t kWindowBatch = 4;

// `model.predict(x)` must map (N, 1, w, w) to probabilities (N, 2, w, w).
template <typename Model>
ProbabilitySlice sliding_window_predict(const Model& model, const Image& slice, std::size_t window = 256) {
  using Tensor = std::decay_t<decltype(model.predict(std::declval<const nn::Tensor<float>&>()))>;
  using T = typename Tensor::value_type;
  const auto grid = tile_windows(slice.rows(), slice.cols(), window);
  Image2D<T> padded(grid.padded_rows, grid.padded_cols);
  for (std::size_t r = 0; r < slice.rows(); ++r)
    for (std::size_t c = 0; c < slice.cols(); ++c) padded(r, c) = static_cast<T>(slice(r, c));

  Image2D<T> acc(grid.padded_rows, grid.padded_cols);
  const auto cov = coverage_counts(grid);
  for (std::size_t start = 0; start < grid.origins.size(); start += kWindowBatch) {
    const std::size_t end = std::min(grid.origins.size(), start + kWindowBatch);
    nn::Tensor<T> x(end - start, 1, window, window);
    for (std::size_t k = start; k < end; ++k) {
      const auto [r0, c0] = grid.origins[k];
      auto plane = x.plane(k - start, 0);
      for (std::size_t r = 0; r < window; ++r)
        for (std::size_t c = 0; c < window; ++c) plane[r * window + c] = padded(r0 + r, c0 + c);
    }
    nn::Tensor<T> probs;
    try {
      probs = model.predict(x);
    } catch (const ShapeError& e) {
      throw ContractError("window " + std::to_string(window) + " is incompatible with the model: " + e.what());
    }
    if (probs.c() != 2 || probs.h() != window || probs.w() != window || probs.n() != end - start)
      throw ContractError("model output shape " + probs.shape().str() + " does not match window " +
                          std::to_string(window));
    for (std::size_t k = start; k < end; ++k) {
      const auto [r0, c0] = grid.origins[k];
      auto fg = probs.plane(k - start, 1);
      for (std::size_t r = 0; r < window; ++r)
        for (std::size_t c = 0; c < window; ++c) acc(r0 + r, c0 + c) += fg[r * window + c];
    }
  }
  ProbabilitySlice out(slice.rows(), slice.cols());
  for (std::size_t r = 0; r < slice.rows(); ++r)
    for (std::size_t c = 0; c < slice.cols(); ++c) {
      const T p = acc(r, c) / static_cast<T>(cov(r, c));
      out(r, c) = static_cast<float>(std::clamp(p, T(0), T(1)));
    }
  return out;
}

inline Mask binarize(const ProbabilitySlice& prob, double threshold = 0.5) {
  Mask m(prob.rows(), prob.cols());
  for (std::size_t i = 0; i < prob.size(); ++i)
    m.values()[i] = static_cast<double>(prob.values()[i]) > threshold ? 1 : 0;
  return m;
}

// 4-connected largest component; empty masks are returned unchanged.
inline Mask largest_component(const Mask& mask) {
  const std::size_t H = mask.rows(), W = mask.cols();
  std::vector<int> label(mask.size(), 0);
  int next = 0, best = 0;
  std::size_t best_size = 0;
  std::deque<std::size_t> queue;
  for (std::size_t start = 0; start < mask.size(); ++start) {
    if (!mask.values()[start] || label[start]) continue;
    label[start] = ++next;
    queue.push_back(start);
    std::size_t size = 0;
    while (!queue.empty()) {
      const std::size_t i = queue.front();
      queue.pop_front();
      ++size;
      const std::size_t r = i / W, c = i % W;
      auto visit = [&](std::size_t j) {
        if (mask.values()[j] && !label[j]) {
          label[j] = next;
          queue.push_back(j);
        }
      };
      if (r > 0) visit(i - W);
      if (r + 1 < H) visit(i + W);
      if (c > 0) visit(i - 1);
      if (c + 1 < W) visit(i + 1);
    }
    if (size > best_size) {
      best_size = size;
      best = next;
    }
  }
  Mask out(H, W);
  for (std::size_t i = 0; i < mask.size(); ++i) out.values()[i] = label[i] == best && best ? 1 : 0;
  return out;
}

struct ExtractOptions {
  double threshold = 0.5;
  std::optional<std::size_t> window;  // defaults to the model's patch size
  double target_mm = 1.0;
  bool largest_component = false;
  bool keep_probability = false;
  std::size_t num_threads = 1;
};

struct ExtractResult {
  MaskVolume mask;
  std::vector<float> probability;  // native grid, filled when keep_probability
  std::size_t slices = 0;
  double seconds = 0.0;
};

// Per-slice pipeline: resample, normalize, sliding window, binarize, then
// back to the native in-plane grid.
template <typename Model>
ExtractResult extract_brain(const Volume& volume, const Model& model, const ExtractOptions& opt = {}) {
  if (!(opt.threshold >= 0.0 && opt.threshold <= 1.0))
    throw ValidationError("threshold must lie in [0, 1]");
  const auto t0 = std::chrono::steady_clock::now();
  std::size_t window = 256;
  if (opt.window) {
    window = *opt.window;
  } else if constexpr (requires { model.spec(); }) {
    window = static_cast<std::size_t>(model.spec().patch_size);
  }
  const auto slices = iterate_slices(volume);
  std::vector<Mask> masks(slices.size());
  std::vector<Image> probs(opt.keep_probability ? slices.size() : 0);
  std::vector<std::string> failures(slices.size());

  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t s = begin; s < end; ++s) {
      try {
        const Slice2D& native = slices[s];
        const Slice2D prepared = normalize_variance(resample_inplane(native, opt.target_mm));
        const auto prob = sliding_window_predict(model, prepared.pixels, window);
        Mask m = binarize(prob, opt.threshold);
        if (opt.largest_component) m = largest_component(m);
        masks[s] = resize_mask(m, native.pixels.rows(), native.pixels.cols());
        if (opt.keep_probability) {
          const double rs = static_cast<double>(prob.rows()) / static_cast<double>(native.pixels.rows());
          const double cs = static_cast<double>(prob.cols()) / static_cast<double>(native.pixels.cols());
          probs[s] = resample_bilinear(prob, native.pixels.rows(), native.pixels.cols(), rs, cs);
        }
      } catch (const std::exception& e) {
        failures[s] = e.what();
        return;
      }
    }
  };
  const std::size_t threads = std::max<std::size_t>(1, std::min(opt.num_threads, slices.size()));
  if (threads == 1) {
    work(0, slices.size());
  } else {
    std::vector<std::jthread> pool;
    const std::size_t chunk = (slices.size() + threads - 1) / threads;
    for (std::size_t t = 0; t < threads; ++t) {
      const std::size_t b = t * chunk, e = std::min(slices.size(), b + chunk);
      if (b < e) pool.emplace_back(work, b, e);
    }
  }
  for (std::size_t s = 0; s < failures.size(); ++s)
    if (!failures[s].empty()) throw ContractError("slice " + std::to_string(s) + ": " + failures[s]);

  ExtractResult out;
  out.mask = MaskVolume{stack_slices(masks, volume.dims, volume.slice_axis), volume.dims, volume.spacing};
  if (opt.keep_probability) out.probability = stack_slices(probs, volume.dims, volume.slice_axis);
  out.slices = slices.size();
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

inline ExtractResult extract_brain(const Volume& volume, const std::string& checkpoint,
                                   const ExtractOptions& opt = {}) {
  const auto loaded = load_checkpoint<float>(checkpoint);
  return extract_brain(volume, loaded.model, opt);
}

}  // namespace fetalbet
