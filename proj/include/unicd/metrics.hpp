#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "unicd/image_io.hpp"
#include "unicd/tensor.hpp"

namespace unicd {

struct ConfusionCounts {
  int64_t tp = 0;
  int64_t tn = 0;
  int64_t fp = 0;
  int64_t fn = 0;

  int64_t total() const { return tp + tn + fp + fn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o);
  bool operator==(const ConfusionCounts&) const = default;
};

struct MetricsReport {
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  double iou = 0;
  double oa = 0;
};

// pred and truth: equal shapes, values in {0, 1}.
ConfusionCounts confusion(const Tensor& pred, const Tensor& truth);

// With no positives in either prediction or truth, precision, recall, F1 and
// IoU are 1. Otherwise a zero denominator yields 0.
MetricsReport metrics(const ConfusionCounts& c);

// TN black, TP white, FP red, FN blue. 8-bit RGB, or RGBA with opaque alpha.
RawImage render_error_map(const Tensor& pred, const Tensor& truth, bool with_alpha = false);

nlohmann::json to_json(const ConfusionCounts& c);
nlohmann::json to_json(const MetricsReport& m);

struct NamedReport {
  std::string name;
  ConfusionCounts counts;
};

// Aligned plain-text table, one row per entry plus a micro-averaged total.
std::string metrics_table(std::span<const NamedReport> rows);

}  // namespace unicd
