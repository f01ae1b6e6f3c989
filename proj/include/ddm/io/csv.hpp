#pragma once

#include <charconv>
#include <cstdint>
#include <istream>
#include <string>
#include <string_view>
#include <vector>

#include "ddm/geo/types.hpp"

namespace ddm {

struct CsvSummary {
  std::uint64_t rows_read = 0;
  std::uint64_t rows_skipped = 0;
};

namespace detail {

inline bool parse_double(std::string_view s, double& out) {
  const char* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc{} && p == end;
}

}  // namespace detail

// Reads `traj_id,timestamp,lat,lon` rows. Malformed rows (wrong field count,
// non-numeric values, out-of-range coordinates) are counted and skipped, not
// fatal: real GPS feeds are noisy.
inline std::vector<TrajectoryPoint> read_trajectory_csv(std::istream& in, bool has_header,
                                                        CsvSummary& summary) {
  std::vector<TrajectoryPoint> points;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (first && has_header) {
      first = false;
      continue;
    }
    first = false;
    if (line.empty()) continue;
    ++summary.rows_read;

    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = line.find(',', start);
      fields.push_back(std::string_view(line).substr(start, comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    TrajectoryPoint p;
    bool ok = fields.size() == 4 && !fields[0].empty();
    ok = ok && detail::parse_double(fields[1], p.timestamp);
    ok = ok && detail::parse_double(fields[2], p.lat);
    ok = ok && detail::parse_double(fields[3], p.lon);
    if (!ok || !p.valid()) {
      ++summary.rows_skipped;
      continue;
    }
    p.traj_id = std::string(fields[0]);
    points.push_back(std::move(p));
  }
  return points;
}

}  // namespace ddm
