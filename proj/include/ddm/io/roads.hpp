#pragma once

#include <cstdint>
#include <istream>
#include <string>
#include <vector>

#include "json.hpp"

#include "ddm/geo/types.hpp"

namespace ddm {

struct RoadsSummary {
  std::uint64_t rows_read = 0;
  std::uint64_t rows_skipped = 0;
};

// Newline-delimited JSON, one road per line:
//   {"id": ..., "vertices": [[lat, lon], ...]}
// Malformed lines are counted and skipped.
inline std::vector<RoadPolyline> read_roads_ndjson(std::istream& in, RoadsSummary& summary) {
  std::vector<RoadPolyline> roads;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    ++summary.rows_read;
    try {
      const auto j = nlohmann::json::parse(line);
      RoadPolyline road;
      const auto& id = j.at("id");
      road.road_id = id.is_string() ? id.get<std::string>() : id.dump();
      for (const auto& vtx : j.at("vertices")) {
        const double lat = vtx.at(0).get<double>();
        const double lon = vtx.at(1).get<double>();
        if (lat < -90 || lat > 90 || lon < -180 || lon > 180)
          throw std::invalid_argument("vertex out of range");
        road.vertices.emplace_back(lat, lon);
      }
      road.validate();
      roads.push_back(std::move(road));
    } catch (const std::exception&) {
      ++summary.rows_skipped;
    }
  }
  return roads;
}

inline std::string road_to_ndjson(const RoadPolyline& road) {
  nlohmann::json j;
  j["id"] = road.road_id;
  auto& verts = j["vertices"] = nlohmann::json::array();
  for (const auto& [lat, lon] : road.vertices) verts.push_back({lat, lon});
  return j.dump();
}

}  // namespace ddm
