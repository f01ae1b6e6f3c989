#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"

#include "ddm/nn/modules.hpp"

namespace ddm {

// Checkpoints are a JSON manifest (<stem>.json) naming every tensor plus a
// flat little-endian float32 payload (<stem>.bin). Parameters and persistent
// buffers always round-trip; callers may append extra named tensors (e.g.
// optimizer moments).
struct CheckpointMeta {
  std::int64_t step = 0;
  std::int64_t epoch = 0;
  nlohmann::json extra;  // caller-owned section (model config etc.)
};

namespace detail {

template <typename S>
void append_f32(std::ofstream& out, const Tensor<S>& t) {
  if constexpr (std::is_same_v<S, float>) {
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(t.size() * sizeof(float)));
  } else {
    std::vector<float> tmp(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) tmp[i] = static_cast<float>(t.v[i]);
    out.write(reinterpret_cast<const char*>(tmp.data()),
              static_cast<std::streamsize>(tmp.size() * sizeof(float)));
  }
}

template <typename S>
void read_f32(std::ifstream& in, std::uint64_t offset, Tensor<S>& t) {
  in.seekg(static_cast<std::streamoff>(offset));
  std::vector<float> tmp(t.size());
  in.read(reinterpret_cast<char*>(tmp.data()),
          static_cast<std::streamsize>(tmp.size() * sizeof(float)));
  if (in.gcount() != static_cast<std::streamsize>(tmp.size() * sizeof(float)))
    throw std::runtime_error("checkpoint: truncated payload");
  for (std::size_t i = 0; i < t.size(); ++i) t.v[i] = static_cast<S>(tmp[i]);
}

}  // namespace detail

template <typename S>
void save_checkpoint(const std::string& stem, const ParamRegistry<S>& reg,
                     const CheckpointMeta& meta,
                     const std::vector<std::pair<std::string, const Tensor<S>*>>& extra_tensors =
                         {}) {
  const std::string bin_path = stem + ".bin";
  std::ofstream bin(bin_path, std::ios::binary);
  if (!bin) throw std::runtime_error("checkpoint: cannot write " + bin_path);

  nlohmann::json manifest;
  manifest["format"] = "ddm-checkpoint-v1";
  manifest["dtype"] = "float32";
  manifest["byte_order"] = "little";
  manifest["payload"] = std::filesystem::path(bin_path).filename().string();
  manifest["step"] = meta.step;
  manifest["epoch"] = meta.epoch;
  if (!meta.extra.is_null()) manifest["meta"] = meta.extra;

  std::uint64_t offset = 0;
  auto& tensors = manifest["tensors"] = nlohmann::json::array();
  auto emit = [&](const std::string& name, const Tensor<S>& t) {
    tensors.push_back({{"name", name},
                       {"shape", {t.n, t.c, t.h, t.w}},
                       {"offset", offset}});
    detail::append_f32(bin, t);
    offset += t.size() * sizeof(float);
  };
  for (const auto& p : reg.params()) emit(p->name, p->value);
  for (const auto& b : reg.buffers()) emit(b.name, *b.value);
  for (const auto& [name, t] : extra_tensors) emit(name, *t);
  if (!bin) throw std::runtime_error("checkpoint: payload write failed");
  bin.close();

  std::ofstream mf(stem + ".json");
  if (!mf) throw std::runtime_error("checkpoint: cannot write manifest");
  mf << manifest.dump(2) << '\n';
}

// Loads parameters and buffers by name; shapes must match. Extra tensors are
// filled when present in the manifest (missing ones are left untouched and
// reported as false in the returned flag).
template <typename S>
CheckpointMeta load_checkpoint(const std::string& stem, ParamRegistry<S>& reg,
                               const std::vector<std::pair<std::string, Tensor<S>*>>&
                                   extra_tensors = {},
                               bool* extras_found = nullptr) {
  std::ifstream mf(stem + ".json");
  if (!mf) throw std::runtime_error("checkpoint: cannot open manifest " + stem + ".json");
  nlohmann::json manifest;
  mf >> manifest;
  if (manifest.at("format").get<std::string>() != "ddm-checkpoint-v1")
    throw std::runtime_error("checkpoint: unknown format");

  const std::string bin_path =
      (std::filesystem::path(stem).parent_path() /
       manifest.at("payload").get<std::string>())
          .string();
  std::ifstream bin(bin_path, std::ios::binary);
  if (!bin) throw std::runtime_error("checkpoint: cannot open payload " + bin_path);

  struct Entry {
    std::array<int, 4> shape;
    std::uint64_t offset;
  };
  std::unordered_map<std::string, Entry> index;
  for (const auto& t : manifest.at("tensors")) {
    Entry e;
    const auto& sh = t.at("shape");
    e.shape = {sh.at(0).get<int>(), sh.at(1).get<int>(), sh.at(2).get<int>(),
               sh.at(3).get<int>()};
    e.offset = t.at("offset").get<std::uint64_t>();
    index.emplace(t.at("name").get<std::string>(), e);
  }

  auto fill = [&](const std::string& name, Tensor<S>& t, bool required) {
    auto it = index.find(name);
    if (it == index.end()) {
      if (required) throw std::runtime_error("checkpoint: missing tensor " + name);
      return false;
    }
    const auto& e = it->second;
    if (e.shape != std::array<int, 4>{t.n, t.c, t.h, t.w})
      throw std::runtime_error("checkpoint: shape mismatch for " + name);
    detail::read_f32(bin, e.offset, t);
    return true;
  };
  for (auto& p : reg.params()) fill(p->name, p->value, true);
  for (auto& b : reg.buffers()) fill(b.name, *b.value, true);
  bool all_extras = true;
  for (auto& [name, t] : extra_tensors) all_extras = fill(name, *t, false) && all_extras;
  if (extras_found) *extras_found = all_extras && !extra_tensors.empty();

  CheckpointMeta meta;
  meta.step = manifest.value("step", std::int64_t{0});
  meta.epoch = manifest.value("epoch", std::int64_t{0});
  if (manifest.contains("meta")) meta.extra = manifest["meta"];
  return meta;
}

}  // namespace ddm
