#pragma once

#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace unicd {

using Shape = std::vector<int64_t>;

std::string shape_str(const Shape& s);
int64_t shape_numel(const Shape& s);

// Dense row-major tensor of doubles. Value type; copies are deep.
//
// Most of the library works on 4-D [N, C, H, W] batches; 2-D [H, W] maps are
// used for labels, CAMs and pseudo-label products.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape_); }

  const Shape& shape() const noexcept { return shape_; }
  int64_t dim(size_t i) const { return shape_.at(i); }
  size_t rank() const noexcept { return shape_.size(); }
  int64_t numel() const noexcept { return static_cast<int64_t>(data_.size()); }
  bool empty() const noexcept { return data_.empty(); }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  std::vector<double>& storage() noexcept { return data_; }

  double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  // 4-D accessors.
  double& at(int64_t n, int64_t c, int64_t h, int64_t w) {
    return data_[static_cast<size_t>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
  }
  double at(int64_t n, int64_t c, int64_t h, int64_t w) const {
    return data_[static_cast<size_t>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
  }
  // 2-D accessors.
  double& at(int64_t h, int64_t w) { return data_[static_cast<size_t>(h * shape_[1] + w)]; }
  double at(int64_t h, int64_t w) const { return data_[static_cast<size_t>(h * shape_[1] + w)]; }

  Tensor reshaped(Shape s) const;
  void fill(double v);

  // In-place accumulate; shapes must match.
  Tensor& operator+=(const Tensor& o);

  bool all_finite() const;
  double min() const;
  double max() const;
  double sum() const;
  double mean() const;

  bool operator==(const Tensor& o) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

// Slice sample n out of a 4-D batch as a [1, C, H, W] tensor.
Tensor batch_item(const Tensor& t, int64_t n);
// Stack equally shaped [1, C, H, W] (or [C, H, W]) tensors along a new batch axis.
Tensor stack_batch(std::span<const Tensor> items);
// Min-max rescale to [0, 1]; a constant tensor maps to zeros.
Tensor minmax_normalize(const Tensor& t);

// Channel c of sample n as a 2-D [H, W] map.
Tensor plane(const Tensor& t, int64_t n, int64_t c);

}  // namespace unicd
