#pragma once

// Deterministic slice preprocessing: in-plane resampling, fixed-size
// resizing (training only) and per-slice variance normalization.

#include <algorithm>
#include <cmath>
#include <cstddef>

#include "fetalbet/error.hpp"
#include "fetalbet/image.hpp"
#include "fetalbet/volume_io.hpp"

namespace fetalbet {

inline constexpr double kVarianceEpsilon = 1e-8;

struct Sample {
  Slice2D image;
  Mask mask;
};

namespace interp {

// Bilinear lookup with edge replication.
template <typename T>
double bilinear_clamped(const Image2D<T>& img, double y, double x) {
  const double maxy = static_cast<double>(img.rows() - 1);
  const double maxx = static_cast<double>(img.cols() - 1);
  y = std::clamp(y, 0.0, maxy);
  x = std::clamp(x, 0.0, maxx);
  const auto y0 = static_cast<std::size_t>(std::floor(y));
  const auto x0 = static_cast<std::size_t>(std::floor(x));
  const std::size_t y1 = std::min(y0 + 1, img.rows() - 1);
  const std::size_t x1 = std::min(x0 + 1, img.cols() - 1);
  const double fy = y - static_cast<double>(y0);
  const double fx = x - static_cast<double>(x0);
  const double top = (1 - fx) * img(y0, x0) + fx * img(y0, x1);
  const double bottom = (1 - fx) * img(y1, x0) + fx * img(y1, x1);
  return (1 - fy) * top + fy * bottom;
}

// Pixel-centre aligned mapping from an output index to input coordinates.
inline double source_coord(std::size_t dst, double scale) {
  return (static_cast<double>(dst) + 0.5) * scale - 0.5;
}

inline std::size_t nearest_index(std::size_t dst, double scale, std::size_t extent) {
  const double src = std::floor((static_cast<double>(dst) + 0.5) * scale);
  return static_cast<std::size_t>(std::clamp(src, 0.0, static_cast<double>(extent - 1)));
}

}  // namespace interp

template <typename T>
Image2D<T> resample_bilinear(const Image2D<T>& img, std::size_t rows, std::size_t cols,
                             double row_scale, double col_scale) {
  Image2D<T> out(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const double y = interp::source_coord(r, row_scale);
    for (std::size_t c = 0; c < cols; ++c)
      out(r, c) = static_cast<T>(interp::bilinear_clamped(img, y, interp::source_coord(c, col_scale)));
  }
  return out;
}

inline Mask resample_nearest(const Mask& mask, std::size_t rows, std::size_t cols, double row_scale,
                             double col_scale) {
  Mask out(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t sr = interp::nearest_index(r, row_scale, mask.rows());
    for (std::size_t c = 0; c < cols; ++c)
      out(r, c) = mask(sr, interp::nearest_index(c, col_scale, mask.cols()));
  }
  return out;
}

// Nearest-neighbour resize of a mask to an explicit grid (e.g. back to the
// native in-plane grid after prediction).
inline Mask resize_mask(const Mask& mask, std::size_t rows, std::size_t cols) {
  return resample_nearest(mask, rows, cols,
                          static_cast<double>(mask.rows()) / static_cast<double>(rows),
                          static_cast<double>(mask.cols()) / static_cast<double>(cols));
}

inline std::size_t resampled_extent(std::size_t dim, double spacing, double target_mm) {
  const double v = std::round(static_cast<double>(dim) * spacing / target_mm);
  return static_cast<std::size_t>(std::max(1.0, v));
}

inline Slice2D resample_inplane(const Slice2D& slice, double target_mm = 1.0) {
  if (!(target_mm > 0)) throw ContractError("resample_inplane: target spacing must be positive");
  detail::require(slice.row_mm > 0 && slice.col_mm > 0, "resample_inplane: slice spacing must be positive");
  const std::size_t rows = resampled_extent(slice.pixels.rows(), slice.row_mm, target_mm);
  const std::size_t cols = resampled_extent(slice.pixels.cols(), slice.col_mm, target_mm);
  Slice2D out;
  out.provenance = slice.provenance;
  out.row_mm = target_mm;
  out.col_mm = target_mm;
  if (rows == slice.pixels.rows() && cols == slice.pixels.cols() && slice.row_mm == target_mm &&
      slice.col_mm == target_mm) {
    out.pixels = slice.pixels;
    return out;
  }
  out.pixels = resample_bilinear(slice.pixels, rows, cols, target_mm / slice.row_mm,
                                 target_mm / slice.col_mm);
  return out;
}

// Image bilinear, mask nearest, on the same output grid.
inline Sample resample_inplane(const Sample& sample, double target_mm = 1.0) {
  detail::require(sample.image.pixels.same_shape(sample.mask), "sample image/mask shape mismatch");
  Sample out;
  out.image = resample_inplane(sample.image, target_mm);
  out.mask = resample_nearest(sample.mask, out.image.pixels.rows(), out.image.pixels.cols(),
                              target_mm / sample.image.row_mm, target_mm / sample.image.col_mm);
  return out;
}

// Direct (aspect-distorting) resize of image and mask to size x size.
inline Sample resize_to(const Sample& sample, std::size_t size = 256) {
  if (size == 0) throw ContractError("resize_to: size must be positive");
  detail::require(sample.image.pixels.same_shape(sample.mask), "sample image/mask shape mismatch");
  const auto& img = sample.image.pixels;
  if (img.rows() == size && img.cols() == size) return sample;
  const double rs = static_cast<double>(img.rows()) / static_cast<double>(size);
  const double cs = static_cast<double>(img.cols()) / static_cast<double>(size);
  Sample out;
  out.image.provenance = sample.image.provenance;
  out.image.row_mm = sample.image.row_mm * rs;
  out.image.col_mm = sample.image.col_mm * cs;
  out.image.pixels = resample_bilinear(img, size, size, rs, cs);
  out.mask = resample_nearest(sample.mask, size, size, rs, cs);
  return out;
}

// Divides by the population standard deviation; constant slices become zero.
template <typename T>
Image2D<T> normalize_variance(const Image2D<T>& img) {
  if (img.size() < 2) throw ContractError("normalize_variance: slice needs at least 2 pixels");
  double sum = 0.0;
  for (T v : img) sum += static_cast<double>(v);
  const double mean = sum / static_cast<double>(img.size());
  double sq = 0.0;
  for (T v : img) {
    const double d = static_cast<double>(v) - mean;
    sq += d * d;
  }
  const double sd = std::sqrt(sq / static_cast<double>(img.size()));
  Image2D<T> out(img.rows(), img.cols());
  if (sd <= kVarianceEpsilon) return out;
  for (std::size_t i = 0; i < img.size(); ++i)
    out.values()[i] = static_cast<T>(static_cast<double>(img.values()[i]) / sd);
  return out;
}

inline Slice2D normalize_variance(const Slice2D& slice) {
  Slice2D out = slice;
  out.pixels = normalize_variance(slice.pixels);
  return out;
}

}  // namespace fetalbet
