#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace cfp {

using Shape = std::vector<std::size_t>;

std::size_t shape_volume(const Shape& shape);
std::string shape_to_string(const Shape& shape);

/// Dense row-major array of doubles, channel-first (C, then optional T, H, W).
///
/// Every element is finite; constructors reject NaN and Inf. Extents are
/// positive. A rank-0 tensor is the empty tensor and is only produced by
/// default construction.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);  // zero-filled
  Tensor(Shape shape, std::vector<double> data);

  static Tensor filled(Shape shape, double value);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::size_t channels() const noexcept { return shape_.empty() ? 0 : shape_[0]; }
  /// Number of elements per channel (product of the non-channel extents).
  std::size_t channel_size() const noexcept;

  std::span<const double> data() const noexcept { return data_; }
  std::span<double> mutable_data() noexcept { return data_; }
  std::span<const double> channel(std::size_t c) const;
  std::span<double> mutable_channel(std::size_t c);

  double operator[](std::size_t i) const noexcept { return data_[i]; }
  double& operator[](std::size_t i) noexcept { return data_[i]; }

  /// Rank-4 accessors (C, T, H, W).
  double at(std::size_t c, std::size_t t, std::size_t h, std::size_t w) const;
  double& at(std::size_t c, std::size_t t, std::size_t h, std::size_t w);

  /// Same data, new shape of equal volume.
  Tensor reshaped(Shape shape) const;

  /// Throws InvalidInputError if any element is NaN or Inf.
  void check_finite(std::string_view what = "tensor") const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::size_t offset4(std::size_t c, std::size_t t, std::size_t h, std::size_t w) const;

  Shape shape_;
  std::vector<double> data_;
};

}  // namespace cfp
