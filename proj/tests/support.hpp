#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>

#include "fetalbet/fetalbet.hpp"

namespace fbtest {

using namespace fetalbet;

inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("fetalbet_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

struct Disk {
  double cy, cx, radius;
};

inline Mask disk_mask(std::size_t rows, std::size_t cols, const Disk& d) {
  Mask m(rows, cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      const double dy = static_cast<double>(r) - d.cy, dx = static_cast<double>(c) - d.cx;
      m(r, c) = dy * dy + dx * dx <= d.radius * d.radius ? 1 : 0;
    }
  return m;
}

// Bright disk (intensity 3) on unit-variance background noise.
inline Sample disk_on_noise(std::size_t rows, std::size_t cols, const Disk& d, std::uint64_t seed,
                            double noise = 0.3) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, noise);
  Sample s;
  s.mask = disk_mask(rows, cols, d);
  s.image.pixels = Image(rows, cols);
  for (std::size_t i = 0; i < s.mask.size(); ++i)
    s.image.pixels.values()[i] = static_cast<float>((s.mask.values()[i] ? 3.0 : 0.5) + n(rng));
  return s;
}

inline Disk random_disk(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  const double lim = static_cast<double>(std::min(rows, cols));
  std::uniform_real_distribution<double> rad(0.15 * lim, 0.3 * lim);
  const double r = rad(rng);
  std::uniform_real_distribution<double> cy(r + 1, static_cast<double>(rows) - r - 2);
  std::uniform_real_distribution<double> cx(r + 1, static_cast<double>(cols) - r - 2);
  return {cy(rng), cx(rng), r};
}

// Normalized disk-on-noise training samples of a fixed size.
inline SampleSet disk_dataset(std::size_t count, std::size_t size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  SampleSet out;
  for (std::size_t i = 0; i < count; ++i) {
    Sample s = disk_on_noise(size, size, random_disk(size, size, rng), seed * 1000 + i);
    s.image.pixels = normalize_variance(s.image.pixels);
    s.image.provenance = {"sub" + std::to_string(i), "stack" + std::to_string(i), 0};
    out.push_back({std::move(s), Sequence::T2W});
  }
  return out;
}

// Volume of disk-on-noise slices along axis 2, plus its ground-truth mask.
struct SyntheticVolume {
  Volume volume;
  MaskVolume mask;
};

inline SyntheticVolume disk_volume(std::size_t nx, std::size_t ny, std::size_t nz, const Spacing3& spacing,
                                   std::uint64_t seed, double noise = 0.3) {
  SyntheticVolume sv{Volume::create({nx, ny, nz}, spacing, 2), {}};
  sv.mask = MaskVolume::like(sv.volume);
  std::mt19937_64 rng(seed);
  for (std::size_t z = 0; z < nz; ++z) {
    const Sample s = disk_on_noise(nx, ny, random_disk(nx, ny, rng), seed * 7919 + z, noise);
    for (std::size_t x = 0; x < nx; ++x)
      for (std::size_t y = 0; y < ny; ++y) {
        sv.volume.at(x, y, z) = s.image.pixels(x, y) * 100.0f;
        sv.mask.labels[sv.volume.index(x, y, z)] = s.mask(x, y);
      }
  }
  return sv;
}

inline Image random_image(std::size_t rows, std::size_t cols, std::uint64_t seed, double lo = 0.0,
                          double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Image img(rows, cols);
  for (auto& v : img) v = static_cast<float>(u(rng));
  return img;
}

inline Mask random_mask(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double p = 0.5) {
  std::bernoulli_distribution b(p);
  Mask m(rows, cols);
  for (auto& v : m) v = b(rng) ? 1 : 0;
  return m;
}

struct SubjectSpec {
  std::string subject;
  Sequence sequence;
  Split split;
};

// Writes one disk volume and mask per subject plus manifest.csv into dir.
inline std::string write_synthetic_dataset(const std::filesystem::path& dir, const std::vector<SubjectSpec>& subjects,
                                           std::size_t size = 48, std::size_t slices = 4) {
  DatasetManifest m;
  std::uint64_t seed = 100;
  for (const auto& s : subjects) {
    const auto sv = disk_volume(size, size, slices, {1.0, 1.0, 3.0}, seed++);
    const std::string stack = s.subject + "_" + std::string(to_string(s.sequence)) + ".nii.gz";
    const std::string mask = s.subject + "_" + std::string(to_string(s.sequence)) + "_mask.nii.gz";
    save_volume(sv.volume, (dir / stack).string());
    save_mask(sv.mask, sv.volume, (dir / mask).string());
    m.rows.push_back({s.subject, stack, mask, s.sequence, s.split});
  }
  const auto path = (dir / "manifest.csv").string();
  std::ofstream out(path);
  write_manifest(m, out);
  return path;
}

// Compact small configuration used where full-size training is too slow.
inline ModelSpec small_spec(ModelFamily family = ModelFamily::attention_unet, int patch = 64) {
  ModelSpec s{family};
  s.levels = 4;
  s.base_channels = 8;
  s.patch_size = patch;
  return s;
}

}  // namespace fbtest
