#pragma once

// JSON (de)serialization of ModelSpec, AugmentConfig and TrainConfig.
// Unknown keys are rejected so typos surface instead of silently falling
// back to defaults.

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include <json.hpp>

#include "fetalbet/augment.hpp"
#include "fetalbet/error.hpp"
#include "fetalbet/losses.hpp"
#include "fetalbet/models.hpp"

namespace fetalbet {

using json = nlohmann::json;

struct TrainConfig {
  double learning_rate = 1e-4;
  int batch_size = 8;
  int epochs = 300;
  LossWeights loss_weights{};
  AugmentConfig augment{};
  std::uint64_t seed = 0;
  std::string checkpoint_dir = "checkpoints";
  ModelSpec model{ModelFamily::attention_unet};

  void validate() const {
    if (!(learning_rate > 0) || !std::isfinite(learning_rate))
      throw ValidationError("learning_rate must be > 0");
    if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
    if (epochs < 1) throw ValidationError("epochs must be >= 1");
    const double wc = loss_weights.ce, wd = loss_weights.dice;
    if (!(wc >= 0) || !(wd >= 0) || !std::isfinite(wc) || !std::isfinite(wd) || wc + wd <= 0 || wc + wd > 1e3)
      throw ValidationError("loss_weights must be finite, non-negative and not both zero");
    if (checkpoint_dir.empty()) throw ValidationError("checkpoint_dir must not be empty");
    augment.validate();
    model.validate();
  }
};

namespace detail {

inline void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ValidationError(where + " must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key()))
      throw ValidationError("unknown config key '" + (where.empty() ? "" : where + ".") + it.key() + "'");
}

template <typename V>
void read(const json& j, const char* key, V& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<V>();
  } catch (const json::exception&) {
    throw ValidationError("config key '" + (where.empty() ? "" : where + ".") + key + "' has the wrong type");
  }
}

inline json range_json(const Range& r) { return json::array({r.lo, r.hi}); }

inline void read_range(const json& j, const char* key, Range& r, const std::string& where) {
  if (!j.contains(key)) return;
  const auto& v = j.at(key);
  if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number())
    throw ValidationError("config key '" + where + "." + key + "' must be a [lo, hi] pair");
  r = {v[0].get<double>(), v[1].get<double>()};
}

inline json toggle_json(const TransformToggle& t) { return {{"enabled", t.enabled}, {"p", t.p}}; }

inline void read_toggle(const json& j, const char* key, TransformToggle& t, const std::string& where) {
  if (!j.contains(key)) return;
  const std::string sub = where + "." + key;
  reject_unknown(j.at(key), {"enabled", "p"}, sub);
  read(j.at(key), "enabled", t.enabled, sub);
  read(j.at(key), "p", t.p, sub);
}

}  // namespace detail

inline json to_json(const ModelSpec& s) {
  return {{"family", std::string(to_string(s.family))},
          {"levels", s.levels},
          {"base_channels", s.base_channels},
          {"channel_cap", s.channel_cap},
          {"in_channels", s.in_channels},
          {"out_classes", s.out_classes},
          {"norm", std::string(to_string(s.norm))},
          {"activation", std::string(to_string(s.activation))},
          {"patch_size", s.patch_size}};
}

inline ModelSpec model_spec_from_json(const json& j, const std::string& where = "model") {
  detail::reject_unknown(j, {"family", "levels", "base_channels", "channel_cap", "in_channels", "out_classes",
                             "norm", "activation", "patch_size"},
                         where);
  ModelSpec s;
  std::string family = std::string(to_string(s.family)), norm = std::string(to_string(s.norm)),
              act = std::string(to_string(s.activation));
  detail::read(j, "family", family, where);
  detail::read(j, "levels", s.levels, where);
  detail::read(j, "base_channels", s.base_channels, where);
  detail::read(j, "channel_cap", s.channel_cap, where);
  detail::read(j, "in_channels", s.in_channels, where);
  detail::read(j, "out_classes", s.out_classes, where);
  detail::read(j, "norm", norm, where);
  detail::read(j, "activation", act, where);
  detail::read(j, "patch_size", s.patch_size, where);
  s.family = parse_family(family);
  s.norm = parse_norm(norm);
  s.activation = parse_activation(act);
  return s;
}

inline json to_json(const AugmentConfig& c) {
  using detail::range_json;
  using detail::toggle_json;
  return {{"flip_h", toggle_json(c.flip_h)},
          {"flip_v", toggle_json(c.flip_v)},
          {"rotate", toggle_json(c.rotate)},
          {"rotate_max_degrees", c.rotate_max_degrees},
          {"zoom", toggle_json(c.zoom)},
          {"zoom_range", range_json(c.zoom_range)},
          {"affine", toggle_json(c.affine)},
          {"affine_max_rotation_degrees", c.affine_max_rotation_degrees},
          {"affine_max_shear_degrees", c.affine_max_shear_degrees},
          {"affine_max_translation", c.affine_max_translation},
          {"affine_scale_range", range_json(c.affine_scale_range)},
          {"noise", toggle_json(c.noise)},
          {"noise_std", c.noise_std},
          {"bias", toggle_json(c.bias)},
          {"bias_degree", c.bias_degree},
          {"bias_coeff_range", range_json(c.bias_coeff_range)},
          {"smooth", toggle_json(c.smooth)},
          {"smooth_sigma_range", range_json(c.smooth_sigma_range)},
          {"rng_seed", c.rng_seed}};
}

inline AugmentConfig augment_config_from_json(const json& j, const std::string& where = "augment") {
  detail::reject_unknown(j, {"flip_h", "flip_v", "rotate", "rotate_max_degrees", "zoom", "zoom_range", "affine",
                             "affine_max_rotation_degrees", "affine_max_shear_degrees", "affine_max_translation",
                             "affine_scale_range", "noise", "noise_std", "bias", "bias_degree", "bias_coeff_range",
                             "smooth", "smooth_sigma_range", "rng_seed"},
                         where);
  AugmentConfig c;
  detail::read_toggle(j, "flip_h", c.flip_h, where);
  detail::read_toggle(j, "flip_v", c.flip_v, where);
  detail::read_toggle(j, "rotate", c.rotate, where);
  detail::read(j, "rotate_max_degrees", c.rotate_max_degrees, where);
  detail::read_toggle(j, "zoom", c.zoom, where);
  detail::read_range(j, "zoom_range", c.zoom_range, where);
  detail::read_toggle(j, "affine", c.affine, where);
  detail::read(j, "affine_max_rotation_degrees", c.affine_max_rotation_degrees, where);
  detail::read(j, "affine_max_shear_degrees", c.affine_max_shear_degrees, where);
  detail::read(j, "affine_max_translation", c.affine_max_translation, where);
  detail::read_range(j, "affine_scale_range", c.affine_scale_range, where);
  detail::read_toggle(j, "noise", c.noise, where);
  detail::read(j, "noise_std", c.noise_std, where);
  detail::read_toggle(j, "bias", c.bias, where);
  detail::read(j, "bias_degree", c.bias_degree, where);
  detail::read_range(j, "bias_coeff_range", c.bias_coeff_range, where);
  detail::read_toggle(j, "smooth", c.smooth, where);
  detail::read_range(j, "smooth_sigma_range", c.smooth_sigma_range, where);
  detail::read(j, "rng_seed", c.rng_seed, where);
  return c;
}

inline json to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"loss_weights", {{"ce", c.loss_weights.ce}, {"dice", c.loss_weights.dice}}},
          {"augment", to_json(c.augment)},
          {"seed", c.seed},
          {"checkpoint_dir", c.checkpoint_dir},
          {"model", to_json(c.model)}};
}

inline TrainConfig train_config_from_json(const json& j) {
  detail::reject_unknown(j, {"learning_rate", "batch_size", "epochs", "loss_weights", "augment", "seed",
                             "checkpoint_dir", "model"},
                         "");
  TrainConfig c;
  detail::read(j, "learning_rate", c.learning_rate, "");
  detail::read(j, "batch_size", c.batch_size, "");
  detail::read(j, "epochs", c.epochs, "");
  if (j.contains("loss_weights")) {
    const auto& w = j.at("loss_weights");
    detail::reject_unknown(w, {"ce", "dice"}, "loss_weights");
    detail::read(w, "ce", c.loss_weights.ce, "loss_weights");
    detail::read(w, "dice", c.loss_weights.dice, "loss_weights");
  }
  if (j.contains("augment")) c.augment = augment_config_from_json(j.at("augment"));
  detail::read(j, "seed", c.seed, "");
  detail::read(j, "checkpoint_dir", c.checkpoint_dir, "");
  if (j.contains("model")) c.model = model_spec_from_json(j.at("model"));
  c.validate();
  return c;
}

inline TrainConfig load_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config '" + path + "'");
  json j;
  try {
    j = json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    throw ValidationError("config '" + path + "' is not valid JSON: " + e.what());
  }
  return train_config_from_json(j);
}

inline void save_train_config(const TrainConfig& c, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write config '" + path + "'");
  out << to_json(c).dump(2) << '\n';
}

}  // namespace fetalbet
