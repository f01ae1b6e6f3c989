#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "ddm/data/batch.hpp"
#include "ddm/io/png.hpp"
#include "ddm/model/network.hpp"

namespace ddm {

// Writes the ten per-level gate maps of one tile as 8-bit grayscale PNGs
// (value = round(255 * gate); white means the modality dominates). Returns
// the written paths.
template <typename S>
std::vector<std::string> export_gates(const DeepDualMapper<S>& model, const TileSample& tile,
                                      const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  const Batch<S> batch = make_batch<S>(std::span<const TileSample>{&tile, 1});
  Tape<S> tape(false);
  const auto fwd = model.forward(tape, tape.input(batch.image), tape.input(batch.traj), false);

  std::vector<std::string> paths;
  for (int level = 1; level <= 5; ++level) {
    const Tensor<S>& gates = tape.val(fwd.gates[level - 1]);
    for (int ch = 0; ch < 2; ++ch) {
      std::vector<std::uint8_t> pixels(static_cast<std::size_t>(gates.h) * gates.w);
      const S* g = gates.plane(0, ch);
      for (std::size_t i = 0; i < pixels.size(); ++i)
        pixels[i] = static_cast<std::uint8_t>(
            std::lround(255.0 * std::clamp(static_cast<double>(g[i]), 0.0, 1.0)));
      const std::string name = std::string("gate_") + (ch == 0 ? "image" : "traj") + "_level" +
                               std::to_string(level) + ".png";
      const std::string path = (fs::path(out_dir) / name).string();
      write_png_gray8(path, gates.h, gates.w, pixels);
      paths.push_back(path);
    }
  }
  return paths;
}

}  // namespace ddm
