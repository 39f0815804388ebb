// Dense float32 tensor, NCHW row-major. Small by design: the toolkit needs
// deterministic arithmetic more than it needs speed, so storage is a plain
// vector and every kernel walks it in a fixed order.
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace spikeforge {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);                     // zero filled
  Tensor(Shape shape, std::vector<float> data);     // sizes must match

  static Tensor full(Shape shape, float value);
  static Tensor scalar(float value);

  const Shape& shape() const { return shape_; }
  int ndim() const { return int(shape_.size()); }
  int64_t dim(int i) const { return shape_[size_t(i)]; }
  int64_t numel() const { return int64_t(data_.size()); }
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  std::vector<float>& vec() { return data_; }
  const std::vector<float>& vec() const { return data_; }

  float& at(int64_t i) { return data_[size_t(i)]; }
  float at(int64_t i) const { return data_[size_t(i)]; }

  // NCHW accessors; only valid for 4-d tensors
  float& at4(int64_t n, int64_t c, int64_t h, int64_t w) {
    return data_[size_t(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
  }
  float at4(int64_t n, int64_t c, int64_t h, int64_t w) const {
    return data_[size_t(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
  }

  Tensor reshaped(Shape new_shape) const;  // numel must be preserved

  // throws if any entry is NaN or Inf; `what` names the boundary being checked
  void require_finite(const std::string& what) const;

  // optional same-shape gradient buffer
  bool has_grad() const { return grad_.has_value(); }
  std::vector<float>& grad();
  const std::vector<float>& grad() const;
  void ensure_grad();   // allocates zeros if absent
  void zero_grad();     // allocates if needed, fills with zeros
  void drop_grad() { grad_.reset(); }

 private:
  Shape shape_;
  std::vector<float> data_;
  std::optional<std::vector<float>> grad_;
};

// equality of shape and bit pattern
bool bitwise_equal(const Tensor& a, const Tensor& b);

float max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace spikeforge
