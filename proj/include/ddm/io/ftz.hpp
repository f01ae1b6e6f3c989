#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>

#include "json.hpp"

#include "ddm/geo/types.hpp"

namespace ddm {

static_assert(std::endian::native == std::endian::little,
              "ftz payloads are little-endian; big-endian hosts need byte swaps");

// .ftz raster: one JSON header line {"shape":[h,w],"kind":...} followed by
// h*w little-endian float32 values.
inline void write_ftz(const std::string& path, const RasterGrid& grid) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("ftz: cannot open for writing: " + path);
  nlohmann::json header = {{"shape", {grid.height, grid.width}},
                           {"kind", raster_kind_name(grid.kind)}};
  out << header.dump() << '\n';
  out.write(reinterpret_cast<const char*>(grid.v.data()),
            static_cast<std::streamsize>(grid.v.size() * sizeof(float)));
  if (!out) throw std::runtime_error("ftz: write failed: " + path);
}

inline RasterGrid read_ftz(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("ftz: cannot open: " + path);
  std::string header_line;
  if (!std::getline(in, header_line)) throw std::runtime_error("ftz: missing header: " + path);
  const auto header = nlohmann::json::parse(header_line);
  const int h = header.at("shape").at(0).get<int>();
  const int w = header.at("shape").at(1).get<int>();
  RasterGrid grid(h, w, raster_kind_from_name(header.at("kind").get<std::string>()));
  in.read(reinterpret_cast<char*>(grid.v.data()),
          static_cast<std::streamsize>(grid.v.size() * sizeof(float)));
  if (in.gcount() != static_cast<std::streamsize>(grid.v.size() * sizeof(float)))
    throw std::runtime_error("ftz: truncated payload: " + path);
  return grid;
}

}  // namespace ddm
