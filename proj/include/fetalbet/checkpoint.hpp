#pragma once

// Single-file checkpoints:
//   "FBETCKPT" | u32 version | u64 header length | JSON header | float32 data
// The JSON header embeds the ModelSpec, training metadata and the tensor
// table (name, shape) in storage order.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "fetalbet/config.hpp"
#include "fetalbet/error.hpp"
#include "fetalbet/models.hpp"

namespace fetalbet {

inline constexpr char kCheckpointMagic[8] = {'F', 'B', 'E', 'T', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
  int epoch = 0;
  std::uint64_t step = 0;
  double val_dsc = 0.0;
  std::string tag;  // "best" / "last"
};

template <typename T>
void save_checkpoint(SegmentationNet<T>& model, const CheckpointMeta& meta, const std::string& path) {
  json header;
  header["model"] = to_json(model.spec());
  header["epoch"] = meta.epoch;
  header["step"] = meta.step;
  header["val_dsc"] = meta.val_dsc;
  header["tag"] = meta.tag;
  json tensors = json::array();
  std::vector<float> data;
  for (auto* p : model.params()) {
    const auto& s = p->value.shape();
    tensors.push_back({{"name", p->name}, {"shape", {s.n, s.c, s.h, s.w}}});
    for (T v : p->value.values()) data.push_back(static_cast<float>(v));
  }
  header["tensors"] = tensors;
  const std::string text = header.dump();

  const auto tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint '" + path + "'");
    const std::uint32_t version = kCheckpointVersion;
    const std::uint64_t len = text.size();
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    out.write(reinterpret_cast<const char*>(&version), sizeof(version));
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(float)));
    out.flush();
    if (!out) throw IoError("failed writing checkpoint '" + path + "' (disk full?)");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at '" + path + "': " + ec.message());
}

template <typename T = float>
struct LoadedCheckpoint {
  SegmentationNet<T> model;
  CheckpointMeta meta;
};

template <typename T = float>
LoadedCheckpoint<T> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint '" + path + "'");
  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  in.read(magic, sizeof(magic));
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
    throw LoadError("'" + path + "' is not a checkpoint file");
  if (version != kCheckpointVersion)
    throw LoadError("'" + path + "': unsupported checkpoint version " + std::to_string(version));
  if (len > (std::uint64_t{1} << 30)) throw LoadError("'" + path + "': corrupt header length");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw LoadError("'" + path + "': truncated header");

  json header;
  ModelSpec spec;
  try {
    header = json::parse(text);
    spec = model_spec_from_json(header.at("model"));
    spec.validate();
  } catch (const json::exception& e) {
    throw LoadError("'" + path + "': malformed checkpoint header: " + e.what());
  } catch (const ValidationError& e) {
    throw LoadError("'" + path + "': embedded model spec is invalid: " + e.what());
  }

  LoadedCheckpoint<T> out{SegmentationNet<T>(spec, 0), {}};
  out.meta.epoch = header.value("epoch", 0);
  out.meta.step = header.value("step", std::uint64_t{0});
  out.meta.val_dsc = header.value("val_dsc", 0.0);
  out.meta.tag = header.value("tag", std::string{});

  std::unordered_map<std::string, nn::Param<T>*> by_name;
  for (auto* p : out.model.params()) by_name.emplace(p->name, p);
  const auto& tensors = header.at("tensors");
  if (tensors.size() != by_name.size())
    throw LoadError("'" + path + "': checkpoint holds " + std::to_string(tensors.size()) +
                    " tensors but the embedded model spec builds " + std::to_string(by_name.size()));
  std::vector<float> buf;
  for (const auto& t : tensors) {
    const auto name = t.at("name").get<std::string>();
    auto it = by_name.find(name);
    if (it == by_name.end()) throw LoadError("'" + path + "': tensor '" + name + "' does not match the model");
    const auto shape = t.at("shape").get<std::vector<std::size_t>>();
    const nn::Shape s{shape.at(0), shape.at(1), shape.at(2), shape.at(3)};
    if (!(s == it->second->value.shape()))
      throw LoadError("'" + path + "': tensor '" + name + "' has shape " + s.str() + ", model expects " +
                      it->second->value.shape().str());
    buf.resize(s.numel());
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!in) throw LoadError("'" + path + "': truncated tensor data");
    auto& values = it->second->value.values();
    for (std::size_t i = 0; i < buf.size(); ++i) values[i] = static_cast<T>(buf[i]);
  }
  return out;
}

}  // namespace fetalbet
