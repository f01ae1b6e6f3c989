#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "ddm/geo/types.hpp"

namespace ddm {

struct ConfusionCounts {
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;

  std::uint64_t total() const { return tp + fp + fn + tn; }

  ConfusionCounts& merge(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }
};

// Exact pixel tallies between two binary grids of equal shape.
inline ConfusionCounts confusion(const RasterGrid& pred, const RasterGrid& gt) {
  if (pred.height != gt.height || pred.width != gt.width)
    throw std::invalid_argument("confusion: shape mismatch");
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred.v.size(); ++i) {
    const bool p = pred.v[i] > 0.5f;
    const bool g = gt.v[i] > 0.5f;
    if (p && g)
      ++c.tp;
    else if (p && !g)
      ++c.fp;
    else if (!p && g)
      ++c.fn;
    else
      ++c.tn;
  }
  return c;
}

struct Metrics {
  double iou = 0, precision = 0, recall = 0, f1 = 0;
  std::vector<std::string> flags;  // names of denominators that were empty
};

inline Metrics compute_metrics(const ConfusionCounts& c) {
  Metrics m;
  auto ratio = [&m](std::uint64_t num, std::uint64_t den, const char* flag) {
    if (den == 0) {
      m.flags.push_back(flag);
      return 0.0;
    }
    return static_cast<double>(num) / static_cast<double>(den);
  };
  m.iou = ratio(c.tp, c.tp + c.fp + c.fn, "iou_degenerate");
  m.precision = ratio(c.tp, c.tp + c.fp, "precision_degenerate");
  m.recall = ratio(c.tp, c.tp + c.fn, "recall_degenerate");
  if (m.precision + m.recall > 0)
    m.f1 = 2 * m.precision * m.recall / (m.precision + m.recall);
  else
    m.flags.push_back("f1_degenerate");
  return m;
}

inline nlohmann::json metrics_report(const ConfusionCounts& c, const Metrics& m) {
  return {{"iou", m.iou},          {"f1", m.f1},
          {"precision", m.precision}, {"recall", m.recall},
          {"tp", c.tp},            {"fp", c.fp},
          {"fn", c.fn},            {"tn", c.tn},
          {"flags", m.flags}};
}

}  // namespace ddm
