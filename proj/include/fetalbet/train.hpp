#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "fetalbet/augment.hpp"
#include "fetalbet/checkpoint.hpp"
#include "fetalbet/config.hpp"
#include "fetalbet/error.hpp"
#include "fetalbet/losses.hpp"
#include "fetalbet/manifest.hpp"
#include "fetalbet/metrics.hpp"
#include "fetalbet/models.hpp"
#include "fetalbet/preprocess.hpp"
#include "fetalbet/volume_io.hpp"

namespace fetalbet {

struct TrainSample {
  Sample sample;
  Sequence sequence = Sequence::T2W;
};

using SampleSet = std::vector<TrainSample>;

struct DatasetSplits {
  SampleSet train, val, test;
  std::vector<std::string> warnings;
};

struct SplitOptions {
  std::size_t patch_size = 256;
  double target_mm = 1.0;
  std::optional<Sequence> sequence;  // keep only this sequence when set
  std::optional<int> slice_axis;
};

// Preprocessing shared by training and validation: resample to target_mm,
// resize to patch_size, normalize by the slice standard deviation.
inline Sample prepare_training_sample(const Sample& raw, std::size_t patch_size, double target_mm = 1.0) {
  Sample s = resize_to(resample_inplane(raw, target_mm), patch_size);
  s.image = normalize_variance(s.image);
  return s;
}

namespace detail {

inline std::vector<MaskVolume> load_mask_frames(const std::string& path) {
  std::vector<MaskVolume> out;
  for (auto& v : load_volumes(path)) {
    MaskVolume m{std::vector<std::uint8_t>(v.size()), v.dims, v.spacing};
    for (std::size_t i = 0; i < v.size(); ++i) {
      const float value = v.voxels[i];
      if (value != 0.0f && value != 1.0f) throw ValidationError("'" + path + "' is not a binary mask");
      m.labels[i] = value != 0.0f ? 1 : 0;
    }
    out.push_back(std::move(m));
  }
  return out;
}

}  // namespace detail

// Turns the manifest into slice-level sample sets, honouring its split
// column. Subjects may not span splits.
inline DatasetSplits split_subjects(const DatasetManifest& manifest, const SplitOptions& opt = {}) {
  check_subject_disjointness(manifest);
  DatasetSplits out;
  for (const auto& row : manifest.rows) {
    if (opt.sequence && row.sequence != *opt.sequence) continue;
    if (!row.mask_path) {
      if (row.split != Split::test)
        throw ValidationError("subject '" + row.subject_id + "': " + std::string(to_string(row.split)) +
                              " row for '" + row.stack_path + "' has no mask_path");
      out.warnings.push_back("test row '" + row.stack_path + "' has no mask; skipped");
      continue;
    }
    const auto stack_path = manifest.resolve(row.stack_path);
    const auto mask_path = manifest.resolve(*row.mask_path);
    auto frames = load_volumes(stack_path, opt.slice_axis);
    auto masks = detail::load_mask_frames(mask_path);
    if (masks.size() != 1 && masks.size() != frames.size())
      throw ValidationError("mask '" + mask_path + "' has " + std::to_string(masks.size()) +
                            " frames but stack has " + std::to_string(frames.size()));
    SampleSet& dst = row.split == Split::train ? out.train : row.split == Split::val ? out.val : out.test;
    for (std::size_t f = 0; f < frames.size(); ++f) {
      const Volume& vol = frames[f];
      const MaskVolume& mask = masks.size() == 1 ? masks.front() : masks[f];
      if (mask.dims != vol.dims)
        throw ValidationError("mask '" + mask_path + "' does not match the shape of '" + stack_path + "'");
      auto slices = iterate_slices(vol);
      auto mslices = iterate_mask_slices(mask, vol.slice_axis);
      for (std::size_t s = 0; s < slices.size(); ++s) {
        Sample raw{std::move(slices[s]), std::move(mslices[s])};
        raw.image.provenance.subject_id = row.subject_id;
        raw.image.provenance.stack_id =
            frames.size() > 1 ? row.stack_path + "#" + std::to_string(f) : row.stack_path;
        dst.push_back({prepare_training_sample(raw, opt.patch_size, opt.target_mm), row.sequence});
      }
    }
  }
  if (out.val.empty()) out.warnings.push_back("validation split is empty; validation will be skipped");
  return out;
}

// ---------------------------------------------------------------------------
// Optimizer

template <typename T>
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  double learning_rate() const noexcept { return lr_; }
  std::uint64_t steps() const noexcept { return t_; }

  void step(const nn::ParamList<T>& params) {
    if (m_.empty()) {
      for (auto* p : params) {
        m_.emplace_back(p->value.size(), 0.0);
        v_.emplace_back(p->value.size(), 0.0);
      }
    }
    detail::require(m_.size() == params.size(), "Adam: parameter list changed between steps");
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto* p = params[k];
      if (!p->trainable) continue;
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < p->value.size(); ++i) {
        const double g = static_cast<double>(p->grad[i]);
        m[i] = beta1_ * m[i] + (1 - beta1_) * g;
        v[i] = beta2_ * v[i] + (1 - beta2_) * g * g;
        const double update = lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
        p->value[i] = static_cast<T>(static_cast<double>(p->value[i]) - update);
      }
    }
  }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::uint64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// ---------------------------------------------------------------------------
// Batching

template <typename T>
nn::Tensor<T> image_batch(std::span<const Sample* const> batch) {
  detail::require(!batch.empty(), "empty batch");
  const auto& first = batch.front()->image.pixels;
  nn::Tensor<T> x(batch.size(), 1, first.rows(), first.cols());
  for (std::size_t n = 0; n < batch.size(); ++n) {
    const auto& img = batch[n]->image.pixels;
    if (!img.same_shape(first))
      throw ContractError("batch samples differ in shape (" + shape_string(img) + " vs " + shape_string(first) + ")");
    std::transform(img.begin(), img.end(), x.plane(n, 0).begin(), [](float v) { return static_cast<T>(v); });
  }
  return x;
}

// One-hot (N, 2, H, W): channel 0 background, channel 1 brain.
template <typename T>
nn::Tensor<T> one_hot_batch(std::span<const Sample* const> batch) {
  const auto& first = batch.front()->mask;
  nn::Tensor<T> v(batch.size(), 2, first.rows(), first.cols());
  for (std::size_t n = 0; n < batch.size(); ++n) {
    const auto& m = batch[n]->mask;
    detail::require(m.same_shape(first), "batch masks differ in shape");
    auto bg = v.plane(n, 0);
    auto fg = v.plane(n, 1);
    for (std::size_t i = 0; i < m.size(); ++i) {
      fg[i] = m.values()[i] ? T(1) : T(0);
      bg[i] = T(1) - fg[i];
    }
  }
  return v;
}

// Foreground wins only when strictly above background (ties -> background).
template <typename T>
Mask argmax_mask(const nn::Tensor<T>& probs, std::size_t n) {
  Mask m(probs.h(), probs.w());
  auto bg = probs.plane(n, 0);
  auto fg = probs.plane(n, 1);
  for (std::size_t i = 0; i < m.size(); ++i) m.values()[i] = fg[i] > bg[i] ? 1 : 0;
  return m;
}

// ---------------------------------------------------------------------------
// Validation

struct ValidationResult {
  double mean_dsc = 0.0;
  double mean_iou = 0.0;
  double mean_loss = 0.0;
  std::vector<double> slice_dsc;
  std::vector<double> slice_iou;
};

// `predict(batch)` maps a span of samples to probabilities (N, 2, H, W).
template <typename Predictor>
ValidationResult validate_with(Predictor&& predict, const SampleSet& val_set, const LossWeights& weights = {},
                               std::size_t batch_size = 8) {
  if (val_set.empty()) throw ContractError("validate: validation set is empty");
  ValidationResult r;
  double loss_sum = 0.0;
  for (std::size_t start = 0; start < val_set.size(); start += batch_size) {
    const std::size_t end = std::min(val_set.size(), start + batch_size);
    std::vector<const Sample*> batch;
    for (std::size_t i = start; i < end; ++i) batch.push_back(&val_set[i].sample);
    auto probs = predict(std::span<const Sample* const>(batch));
    using T = typename std::decay_t<decltype(probs)>::value_type;
    auto target = one_hot_batch<T>(batch);
    for (std::size_t n = 0; n < batch.size(); ++n) {
      const Mask pred = argmax_mask(probs, n);
      const auto c = confusion(pred, batch[n]->mask);
      r.slice_dsc.push_back(dsc(c));
      r.slice_iou.push_back(iou(c));
      nn::Tensor<T> u1(1, 2, probs.h(), probs.w()), v1(1, 2, probs.h(), probs.w());
      std::copy(probs.sample(n).begin(), probs.sample(n).end(), u1.sample(0).begin());
      std::copy(target.sample(n).begin(), target.sample(n).end(), v1.sample(0).begin());
      loss_sum += total_loss(u1, v1, weights);
    }
  }
  const double count = static_cast<double>(val_set.size());
  r.mean_dsc = std::accumulate(r.slice_dsc.begin(), r.slice_dsc.end(), 0.0) / count;
  r.mean_iou = std::accumulate(r.slice_iou.begin(), r.slice_iou.end(), 0.0) / count;
  r.mean_loss = loss_sum / count;
  return r;
}

template <typename T>
ValidationResult validate(const SegmentationNet<T>& model, const SampleSet& val_set, const LossWeights& weights = {},
                          std::size_t batch_size = 8) {
  return validate_with([&](std::span<const Sample* const> batch) { return model.predict(image_batch<T>(batch)); },
                       val_set, weights, batch_size);
}

// ---------------------------------------------------------------------------
// Training loop

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = std::numeric_limits<double>::quiet_NaN();
  double val_dsc = std::numeric_limits<double>::quiet_NaN();
  double val_iou = std::numeric_limits<double>::quiet_NaN();
  double wall_time = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::vector<double> step_losses;  // one per optimizer step
  std::uint64_t optimizer_steps = 0;
};

inline constexpr std::string_view kHistoryHeader = "epoch,train_loss,val_loss,val_dsc,val_iou,wall_time";

inline void write_history_csv(const TrainHistory& h, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write history '" + path + "'");
  out << kHistoryHeader << '\n' << std::setprecision(10);
  for (const auto& e : h.epochs)
    out << e.epoch << ',' << e.train_loss << ',' << e.val_loss << ',' << e.val_dsc << ',' << e.val_iou << ','
        << e.wall_time << '\n';
  if (!out) throw IoError("failed writing history '" + path + "'");
}

struct TrainOptions {
  // Stop after this many optimizer steps (0 = run all epochs).
  std::uint64_t max_steps = 0;
  std::size_t num_workers = 1;
  std::size_t val_batch_size = 8;
  const std::atomic<bool>* cancel = nullptr;
  std::function<void(const EpochRecord&)> on_epoch;
  std::function<void(std::uint64_t step, double loss)> on_step;
};

struct TrainResult {
  std::string best_checkpoint;
  std::string last_checkpoint;
  std::string history_csv;
  TrainHistory history;
  SegmentationNet<float> model;  // final (last-epoch) weights
};

namespace detail {

// Augments batch samples in parallel; each sample draws from its own
// stream so results do not depend on the worker count.
inline std::vector<Sample> augment_batch(const SampleSet& data, std::span<const std::size_t> indices,
                                         const AugmentConfig& cfg, std::uint64_t stream_seed,
                                         std::uint64_t epoch, std::size_t workers) {
  std::vector<Sample> out(indices.size());
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t k = begin; k < end; ++k) {
      auto rng = RandomSource::for_stream(stream_seed, (epoch << 32) ^ indices[k]);
      out[k] = augment_pipeline(data[indices[k]].sample, cfg, rng);
    }
  };
  workers = std::max<std::size_t>(1, std::min(workers, indices.size()));
  if (workers == 1) {
    work(0, indices.size());
    return out;
  }
  std::vector<std::jthread> pool;
  const std::size_t chunk = (indices.size() + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t b = w * chunk, e = std::min(indices.size(), b + chunk);
    if (b < e) pool.emplace_back(work, b, e);
  }
  return (pool.clear(), out);
}

}  // namespace detail

inline TrainResult train(const TrainConfig& config, const SampleSet& train_set, const SampleSet& val_set,
                         const TrainOptions& options = {}) {
  config.validate();
  if (train_set.empty()) throw ContractError("train: training set is empty");
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(config.checkpoint_dir, ec);
  if (ec) throw IoError("cannot create checkpoint_dir '" + config.checkpoint_dir + "': " + ec.message());

  TrainResult result{(fs::path(config.checkpoint_dir) / "best.ckpt").string(),
                     (fs::path(config.checkpoint_dir) / "last.ckpt").string(),
                     (fs::path(config.checkpoint_dir) / "history.csv").string(),
                     {},
                     build_model<float>(config.model, config.seed)};
  auto& model = result.model;
  auto& history = result.history;
  Adam<float> adam(config.learning_rate);
  const auto augment_seed = RandomSource::for_stream(config.seed, config.augment.rng_seed).next();
  const auto batch = static_cast<std::size_t>(config.batch_size);
  std::vector<std::size_t> order(train_set.size());
  double best_dsc = -1.0;
  bool stop = false;

  for (int epoch = 1; epoch <= config.epochs && !stop; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto shuffle_rng = RandomSource::for_stream(config.seed, 0xE90C0000ULL + static_cast<std::uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng.engine());

    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      if (options.cancel && options.cancel->load()) {
        stop = true;
        break;
      }
      const std::size_t end = std::min(order.size(), start + batch);
      auto idx = std::span<const std::size_t>(order).subspan(start, end - start);
      auto samples = detail::augment_batch(train_set, idx, config.augment, augment_seed,
                                           static_cast<std::uint64_t>(epoch), options.num_workers);
      std::vector<const Sample*> ptrs;
      for (const auto& s : samples) ptrs.push_back(&s);
      const auto x = image_batch<float>(ptrs);
      const auto v = one_hot_batch<float>(ptrs);

      model.zero_grad();
      const auto u = model.forward_train(x);
      auto loss = total_loss_with_grad(u, v, config.loss_weights);
      if (!std::isfinite(loss.value)) {
        std::ostringstream msg;
        msg << "non-finite loss at epoch " << epoch << ", batch " << batches + 1 << " (learning rate "
            << config.learning_rate << ")";
        throw TrainingError(msg.str());
      }
      model.backward(loss.grad);
      adam.step(model.params());
      ++history.optimizer_steps;
      history.step_losses.push_back(loss.value);
      if (options.on_step) options.on_step(history.optimizer_steps, loss.value);
      loss_sum += loss.value;
      ++batches;
      if (options.max_steps && history.optimizer_steps >= options.max_steps) {
        stop = true;
        break;
      }
    }
    if (batches == 0) break;

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(batches);
    CheckpointMeta meta{epoch, history.optimizer_steps, 0.0, "last"};
    if (!val_set.empty()) {
      const auto vr = validate(model, val_set, config.loss_weights, options.val_batch_size);
      rec.val_loss = vr.mean_loss;
      rec.val_dsc = vr.mean_dsc;
      rec.val_iou = vr.mean_iou;
      meta.val_dsc = vr.mean_dsc;
      if (vr.mean_dsc > best_dsc) {
        best_dsc = vr.mean_dsc;
        save_checkpoint(model, CheckpointMeta{epoch, history.optimizer_steps, vr.mean_dsc, "best"},
                        result.best_checkpoint);
      }
    }
    save_checkpoint(model, meta, result.last_checkpoint);
    if (val_set.empty()) {
      meta.tag = "best";
      save_checkpoint(model, meta, result.best_checkpoint);
    }
    rec.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    history.epochs.push_back(rec);
    write_history_csv(history, result.history_csv);
    if (options.on_epoch) options.on_epoch(rec);
  }
  if (options.cancel && options.cancel->load())
    throw TrainingError("training interrupted after " + std::to_string(history.optimizer_steps) +
                        " steps; last checkpoint kept at '" + result.last_checkpoint + "'");
  return result;
}

}  // namespace fetalbet
