#include "cfp/tensor.hpp"

#include <cmath>
#include <sstream>

#include "cfp/error.hpp"

namespace cfp {

std::size_t shape_volume(const Shape& shape) {
  if (shape.empty()) return 0;
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  return os.str();
}

namespace {

void check_extents(const Shape& shape) {
  if (shape.empty()) throw InvalidInputError("tensor shape must have at least one extent");
  for (auto e : shape) {
    if (e == 0) throw InvalidInputError("tensor extents must be positive, got " + shape_to_string(shape));
  }
}

}  // namespace

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  check_extents(shape_);
  data_.assign(shape_volume(shape_), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  check_extents(shape_);
  if (shape_volume(shape_) != data_.size()) {
    throw InvalidInputError("tensor of shape " + shape_to_string(shape_) + " needs " +
                            std::to_string(shape_volume(shape_)) + " elements, got " +
                            std::to_string(data_.size()));
  }
  check_finite();
}

Tensor Tensor::filled(Shape shape, double value) {
  Tensor t(std::move(shape));
  for (auto& x : t.data_) x = value;
  t.check_finite();
  return t;
}

std::size_t Tensor::channel_size() const noexcept {
  if (shape_.empty()) return 0;
  return data_.size() / shape_[0];
}

std::span<const double> Tensor::channel(std::size_t c) const {
  if (c >= channels()) throw InvalidInputError("channel index out of range");
  return std::span<const double>(data_).subspan(c * channel_size(), channel_size());
}

std::span<double> Tensor::mutable_channel(std::size_t c) {
  if (c >= channels()) throw InvalidInputError("channel index out of range");
  return std::span<double>(data_).subspan(c * channel_size(), channel_size());
}

std::size_t Tensor::offset4(std::size_t c, std::size_t t, std::size_t h, std::size_t w) const {
  return ((c * shape_[1] + t) * shape_[2] + h) * shape_[3] + w;
}

double Tensor::at(std::size_t c, std::size_t t, std::size_t h, std::size_t w) const {
  return data_[offset4(c, t, h, w)];
}

double& Tensor::at(std::size_t c, std::size_t t, std::size_t h, std::size_t w) {
  return data_[offset4(c, t, h, w)];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_volume(shape) != data_.size()) {
    throw InvalidInputError("cannot reshape " + shape_to_string(shape_) + " to " + shape_to_string(shape));
  }
  Tensor out;
  out.shape_ = std::move(shape);
  out.data_ = data_;
  check_extents(out.shape_);
  return out;
}

void Tensor::check_finite(std::string_view what) const {
  for (double x : data_) {
    if (!std::isfinite(x)) throw InvalidInputError(std::string(what) + " contains a non-finite value");
  }
}

}  // namespace cfp
