#include "unicd/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "unicd/error.hpp"

namespace unicd {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kStrideError: return "StrideError";
    case ErrorCode::kRangeError: return "RangeError";
    case ErrorCode::kBackendUnavailable: return "BackendUnavailable";
    case ErrorCode::kChannelMismatch: return "ChannelMismatch";
    case ErrorCode::kEmbeddingMissing: return "EmbeddingMissing";
    case ErrorCode::kLengthMismatch: return "LengthMismatch";
    case ErrorCode::kEmptyInput: return "EmptyInput";
    case ErrorCode::kMissingPair: return "MissingPair";
    case ErrorCode::kCorruptImage: return "CorruptImage";
    case ErrorCode::kLayoutError: return "LayoutError";
    case ErrorCode::kIoError: return "IOError";
    case ErrorCode::kModeLabelMismatch: return "ModeLabelMismatch";
    case ErrorCode::kNonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::kCheckpointVersionMismatch: return "CheckpointVersionMismatch";
    case ErrorCode::kInvalidConfig: return "InvalidConfig";
  }
  return "Unknown";
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) os << (i ? ", " : "") << s[i];
  os << ']';
  return os.str();
}

int64_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), int64_t{1}, std::multiplies<>());
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(static_cast<size_t>(shape_numel(shape_)), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (static_cast<int64_t>(data_.size()) != shape_numel(shape_))
    throw Error(ErrorCode::kShapeMismatch,
                "data size " + std::to_string(data_.size()) + " does not match " + shape_str(shape_));
}

Tensor Tensor::reshaped(Shape s) const {
  if (shape_numel(s) != numel())
    throw Error(ErrorCode::kShapeMismatch, "cannot reshape " + shape_str(shape_) + " to " + shape_str(s));
  return Tensor(std::move(s), data_);
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor& Tensor::operator+=(const Tensor& o) {
  if (o.shape_ != shape_)
    throw Error(ErrorCode::kShapeMismatch, shape_str(shape_) + " += " + shape_str(o.shape_));
  for (size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
  return *this;
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

double Tensor::min() const { return data_.empty() ? 0.0 : *std::min_element(data_.begin(), data_.end()); }
double Tensor::max() const { return data_.empty() ? 0.0 : *std::max_element(data_.begin(), data_.end()); }
double Tensor::sum() const { return std::accumulate(data_.begin(), data_.end(), 0.0); }
double Tensor::mean() const { return data_.empty() ? 0.0 : sum() / static_cast<double>(data_.size()); }

Tensor batch_item(const Tensor& t, int64_t n) {
  const int64_t per = t.numel() / t.dim(0);
  Shape s = t.shape();
  s[0] = 1;
  std::vector<double> d(t.data() + n * per, t.data() + (n + 1) * per);
  return Tensor(std::move(s), std::move(d));
}

Tensor stack_batch(std::span<const Tensor> items) {
  if (items.empty()) throw Error(ErrorCode::kEmptyInput, "stack_batch of nothing");
  Shape inner = items[0].shape();
  if (inner.size() == 4) inner.erase(inner.begin());
  Shape out{static_cast<int64_t>(items.size())};
  out.insert(out.end(), inner.begin(), inner.end());
  std::vector<double> d;
  d.reserve(static_cast<size_t>(shape_numel(out)));
  for (const auto& it : items) {
    if (it.numel() != shape_numel(inner))
      throw Error(ErrorCode::kShapeMismatch, "stack_batch: item " + shape_str(it.shape()));
    d.insert(d.end(), it.values().begin(), it.values().end());
  }
  return Tensor(std::move(out), std::move(d));
}

Tensor minmax_normalize(const Tensor& t) {
  const double lo = t.min(), hi = t.max();
  Tensor out(t.shape());
  if (!(hi > lo)) return out;
  for (int64_t i = 0; i < t.numel(); ++i) out[i] = (t[i] - lo) / (hi - lo);
  return out;
}

Tensor plane(const Tensor& t, int64_t n, int64_t c) {
  const int64_t h = t.dim(2), w = t.dim(3);
  const double* p = t.data() + (n * t.dim(1) + c) * h * w;
  return Tensor({h, w}, std::vector<double>(p, p + h * w));
}

}  // namespace unicd
