#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>

#include "fetalbet/error.hpp"
#include "fetalbet/image.hpp"

namespace fetalbet {

struct ConfusionCounts {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;

  std::size_t total() const noexcept { return tp + fp + fn + tn; }
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

// P = predicted, R = reference. Any nonzero value counts as foreground.
inline ConfusionCounts confusion(std::span<const std::uint8_t> pred,
                                 std::span<const std::uint8_t> ref) {
  detail::require(pred.size() == ref.size(),
                  "confusion: mask sizes differ (" + std::to_string(pred.size()) + " vs " +
                      std::to_string(ref.size()) + ")");
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] != 0, r = ref[i] != 0;
    if (p && r) ++c.tp;
    else if (p) ++c.fp;
    else if (r) ++c.fn;
    else ++c.tn;
  }
  return c;
}

inline ConfusionCounts confusion(const Mask& pred, const Mask& ref) {
  detail::require(pred.same_shape(ref), "mask shapes differ: " + shape_string(pred) + " vs " +
                                            shape_string(ref));
  return confusion(std::span<const std::uint8_t>(pred.values()),
                   std::span<const std::uint8_t>(ref.values()));
}

// 2TP / (2TP + FP + FN); 1 when both masks are empty.
inline double dsc(const ConfusionCounts& c) {
  const std::size_t denom = 2 * c.tp + c.fp + c.fn;
  return denom == 0 ? 1.0 : 2.0 * static_cast<double>(c.tp) / static_cast<double>(denom);
}

// TP / (TP + FP + FN); 1 when both masks are empty.
inline double iou(const ConfusionCounts& c) {
  const std::size_t denom = c.tp + c.fp + c.fn;
  return denom == 0 ? 1.0 : static_cast<double>(c.tp) / static_cast<double>(denom);
}

inline double dsc(const Mask& pred, const Mask& ref) { return dsc(confusion(pred, ref)); }
inline double iou(const Mask& pred, const Mask& ref) { return iou(confusion(pred, ref)); }

inline double dsc(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> ref) {
  return dsc(confusion(pred, ref));
}
inline double iou(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> ref) {
  return iou(confusion(pred, ref));
}

}  // namespace fetalbet
