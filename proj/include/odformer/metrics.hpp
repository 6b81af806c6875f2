/**
 * @file metrics.hpp
 * @brief Confusion counting, IoU / F-score / class accuracy, and report
 * tables.
 *
 * Acc is per-class recall tp/(tp+fn). Undefined metrics are NaN and print
 * as "n/a".
 */
#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <string>
#include <vector>

#include "odformer/netpbm.hpp"

namespace odf {

struct ClassCounts {
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
  std::uint64_t total() const { return tp + fp + fn + tn; }
  friend bool operator==(const ClassCounts&, const ClassCounts&) = default;
};

struct ConfusionCounts {
  std::vector<ClassCounts> per_class;

  explicit ConfusionCounts(std::size_t classes = 2) : per_class(classes) {}
  std::size_t classes() const { return per_class.size(); }
  const ClassCounts& operator[](std::size_t c) const { return per_class.at(c); }
  ClassCounts& operator[](std::size_t c) { return per_class.at(c); }

  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    if (o.classes() != classes()) throw ShapeError("confusion: class count mismatch");
    for (std::size_t c = 0; c < classes(); ++c) {
      per_class[c].tp += o[c].tp;
      per_class[c].fp += o[c].fp;
      per_class[c].fn += o[c].fn;
      per_class[c].tn += o[c].tn;
    }
    return *this;
  }
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

/// Adds one prediction/truth pair of equal length to `acc`.
inline void update_confusion(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& truth,
                             ConfusionCounts& acc) {
  if (pred.size() != truth.size())
    throw ShapeError("confusion: " + std::to_string(pred.size()) + " predictions vs " + std::to_string(truth.size()) +
                     " truth pixels");
  const std::size_t K = acc.classes();
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (pred[i] >= K || truth[i] >= K) throw ShapeError("confusion: class id out of range");
  for (std::size_t c = 0; c < K; ++c) {
    ClassCounts& cc = acc[c];
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const bool p = pred[i] == c, t = truth[i] == c;
      if (p && t) ++cc.tp;
      else if (p) ++cc.fp;
      else if (t) ++cc.fn;
      else ++cc.tn;
    }
  }
}

inline void update_confusion(const Mask& pred, const Mask& truth, ConfusionCounts& acc) {
  if (pred.height != truth.height || pred.width != truth.width)
    throw ShapeError("confusion: prediction " + std::to_string(pred.height) + "x" + std::to_string(pred.width) +
                     " vs truth " + std::to_string(truth.height) + "x" + std::to_string(truth.width));
  update_confusion(pred.ids, truth.ids, acc);
}

struct Metrics {
  double iou = std::numeric_limits<double>::quiet_NaN();
  double fsc = std::numeric_limits<double>::quiet_NaN();
  double acc = std::numeric_limits<double>::quiet_NaN();
};

inline Metrics metrics(const ClassCounts& c) {
  Metrics m;
  const double tp = static_cast<double>(c.tp), fp = static_cast<double>(c.fp), fn = static_cast<double>(c.fn);
  if (c.tp + c.fp + c.fn > 0) {
    m.iou = tp / (tp + fp + fn);
    m.fsc = 2.0 * tp / (2.0 * tp + fp + fn);
  }
  if (c.tp + c.fn > 0) m.acc = tp / (tp + fn);
  return m;
}

inline Metrics metrics(const ConfusionCounts& acc, std::size_t cls) { return metrics(acc[cls]); }

/// F-score implied by an IoU through the dice-Jaccard identity.
inline double fsc_from_iou(double iou) { return 2.0 * iou / (1.0 + iou); }

inline std::string format_percent(double v) {
  if (std::isnan(v)) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * v);
  return buf;
}

struct ReportRow {
  std::string label;
  Metrics m;
};

inline std::string markdown_table(const std::vector<ReportRow>& rows) {
  std::string out = "| Model | IoU (%) | Fsc (%) | Acc (%) |\n|---|---:|---:|---:|\n";
  for (const auto& r : rows)
    out += "| " + r.label + " | " + format_percent(r.m.iou) + " | " + format_percent(r.m.fsc) + " | " +
           format_percent(r.m.acc) + " |\n";
  return out;
}

inline std::string csv_table(const std::vector<ReportRow>& rows) {
  std::string out = "model,iou,fsc,acc\n";
  for (const auto& r : rows)
    out += r.label + "," + format_percent(r.m.iou) + "," + format_percent(r.m.fsc) + "," + format_percent(r.m.acc) + "\n";
  return out;
}

}  // namespace odf
