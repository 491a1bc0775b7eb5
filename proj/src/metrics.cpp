#include "unicd/metrics.hpp"

#include <fmt/format.h>

#include "unicd/error.hpp"

namespace unicd {

ConfusionCounts& ConfusionCounts::operator+=(const ConfusionCounts& o) {
  tp += o.tp;
  tn += o.tn;
  fp += o.fp;
  fn += o.fn;
  return *this;
}

namespace {

bool as_bit(double v, const char* what) {
  if (v == 0.0) return false;
  if (v == 1.0) return true;
  throw Error(ErrorCode::kRangeError, std::string(what) + " is not binary");
}

void check_shapes(const Tensor& pred, const Tensor& truth) {
  if (pred.shape() != truth.shape())
    throw Error(ErrorCode::kShapeMismatch, "pred " + shape_str(pred.shape()) + " vs truth " + shape_str(truth.shape()));
}

double ratio(int64_t num, int64_t den) { return den ? static_cast<double>(num) / static_cast<double>(den) : 0.0; }

}  // namespace

ConfusionCounts confusion(const Tensor& pred, const Tensor& truth) {
  check_shapes(pred, truth);
  ConfusionCounts c;
  for (int64_t i = 0; i < pred.numel(); ++i) {
    const bool p = as_bit(pred[i], "prediction");
    const bool t = as_bit(truth[i], "truth");
    if (p && t) ++c.tp;
    else if (!p && !t) ++c.tn;
    else if (p) ++c.fp;
    else ++c.fn;
  }
  return c;
}

MetricsReport metrics(const ConfusionCounts& c) {
  if (c.total() <= 0) throw Error(ErrorCode::kEmptyInput, "metrics over zero pixels");
  MetricsReport m;
  m.oa = ratio(c.tp + c.tn, c.total());
  if (c.tp + c.fp + c.fn == 0) {
    m.precision = m.recall = m.f1 = m.iou = 1.0;
    return m;
  }
  m.precision = ratio(c.tp, c.tp + c.fp);
  m.recall = ratio(c.tp, c.tp + c.fn);
  m.f1 = m.precision + m.recall > 0 ? 2 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
  m.iou = ratio(c.tp, c.tp + c.fp + c.fn);
  return m;
}

RawImage render_error_map(const Tensor& pred, const Tensor& truth, bool with_alpha) {
  check_shapes(pred, truth);
  if (pred.rank() != 2) throw Error(ErrorCode::kShapeMismatch, "render_error_map expects [H, W] maps");
  RawImage img;
  img.height = pred.dim(0);
  img.width = pred.dim(1);
  img.channels = with_alpha ? 4 : 3;
  img.pixels.reserve(static_cast<size_t>(pred.numel() * img.channels));
  for (int64_t i = 0; i < pred.numel(); ++i) {
    const bool p = as_bit(pred[i], "prediction");
    const bool t = as_bit(truth[i], "truth");
    uint8_t r = 0, g = 0, b = 0;
    if (p && t) r = g = b = 255;
    else if (p) r = 255;
    else if (t) b = 255;
    img.pixels.insert(img.pixels.end(), {r, g, b});
    if (with_alpha) img.pixels.push_back(255);
  }
  return img;
}

nlohmann::json to_json(const ConfusionCounts& c) {
  return {{"tp", c.tp}, {"tn", c.tn}, {"fp", c.fp}, {"fn", c.fn}};
}

nlohmann::json to_json(const MetricsReport& m) {
  return {{"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1}, {"iou", m.iou}, {"oa", m.oa}};
}

std::string metrics_table(std::span<const NamedReport> rows) {
  size_t width = 5;
  for (const auto& r : rows) width = std::max(width, r.name.size());
  std::string out = fmt::format("{:<{}}  {:>9} {:>9} {:>9} {:>9} {:>9}\n", "image", width, "precision", "recall",
                                "f1", "iou", "oa");
  ConfusionCounts total;
  auto line = [&](const std::string& name, const ConfusionCounts& c) {
    const MetricsReport m = metrics(c);
    out += fmt::format("{:<{}}  {:>9.4f} {:>9.4f} {:>9.4f} {:>9.4f} {:>9.4f}\n", name, width, m.precision, m.recall,
                       m.f1, m.iou, m.oa);
  };
  for (const auto& r : rows) {
    line(r.name, r.counts);
    total += r.counts;
  }
  if (!rows.empty()) line("total", total);
  return out;
}

}  // namespace unicd
