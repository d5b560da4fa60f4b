#include <algorithm>
#include <cmath>
#include <string>

#include "cfp/error.hpp"
#include "cfp/viz.hpp"

namespace cfp {

NaturalCubicSpline::NaturalCubicSpline(std::span<const double> knots) : y_(knots.begin(), knots.end()) {
  if (y_.empty()) throw InvalidInputError("spline needs at least one knot");
  const std::size_t n = y_.size();
  m_.assign(n, 0.0);
  if (n < 3) return;
  // Thomas algorithm on M[i-1] + 4 M[i] + M[i+1] = 6 (y[i+1] - 2 y[i] + y[i-1]),
  // with M[0] = M[n-1] = 0.
  const std::size_t k = n - 2;
  std::vector<double> c(k), d(k);
  for (std::size_t i = 0; i < k; ++i) {
    const double rhs = 6.0 * (y_[i + 2] - 2.0 * y_[i + 1] + y_[i]);
    const double denom = 4.0 - (i ? c[i - 1] : 0.0);
    c[i] = 1.0 / denom;
    d[i] = (rhs - (i ? d[i - 1] : 0.0)) / denom;
  }
  m_[k] = d[k - 1];
  for (std::size_t i = k - 1; i-- > 0;) m_[i + 1] = d[i] - c[i] * m_[i + 2];
}

double NaturalCubicSpline::operator()(double x) const {
  const std::size_t n = y_.size();
  if (n == 1) return y_[0];
  x = std::clamp(x, 0.0, static_cast<double>(n - 1));
  const double fl = std::floor(x);
  if (fl == x) return y_[static_cast<std::size_t>(fl)];
  const std::size_t i = std::min(static_cast<std::size_t>(fl), n - 2);
  const double t = x - static_cast<double>(i);
  const double b = (y_[i + 1] - y_[i]) - (2.0 * m_[i] + m_[i + 1]) / 6.0;
  const double c = m_[i] / 2.0;
  const double d = (m_[i + 1] - m_[i]) / 6.0;
  return y_[i] + t * (b + t * (c + t * d));
}

namespace {

// Position of output sample o in source coordinates, first and last
// samples aligned.
double source_position(std::size_t o, std::size_t src, std::size_t dst) {
  if (dst <= 1 || src <= 1) return 0.0;
  return static_cast<double>(o * (src - 1)) / static_cast<double>(dst - 1);
}

// Linear interpolation over n samples spaced `stride` apart.
double lerp_at(const double* v, std::size_t n, std::size_t stride, double x) {
  const double fl = std::floor(x);
  if (fl == x || n == 1) return v[static_cast<std::size_t>(fl) * stride];
  const std::size_t i = std::min(static_cast<std::size_t>(fl), n - 2);
  const double f = x - static_cast<double>(i);
  const double a = v[i * stride];
  return a + f * (v[(i + 1) * stride] - a);
}

double local_polynomial(std::span<const double> y, std::size_t degree, double x) {
  const std::size_t n = y.size();
  const double fl = std::floor(x);
  if (fl == x) return y[static_cast<std::size_t>(fl)];
  degree = std::min(degree, n - 1);
  const auto centre = static_cast<std::ptrdiff_t>(fl) - static_cast<std::ptrdiff_t>(degree / 2);
  const auto first = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(centre, 0, static_cast<std::ptrdiff_t>(n - 1 - degree)));
  double sum = 0.0;
  for (std::size_t k = first; k <= first + degree; ++k) {
    double basis = 1.0;
    for (std::size_t m = first; m <= first + degree; ++m) {
      if (m != k) basis *= (x - static_cast<double>(m)) / (static_cast<double>(k) - static_cast<double>(m));
    }
    sum += basis * y[k];
  }
  return sum;
}

}  // namespace

ActivationVolume spline_upsample(const ActivationVolume& v, std::size_t frames, std::size_t height, std::size_t width,
                                 TemporalInterpolation mode) {
  const std::size_t t = v.frames(), h = v.height(), w = v.width();
  if (frames < t || height < h || width < w) {
    throw InvalidInputError("target " + shape_to_string({frames, height, width}) + " is smaller than source " +
                            shape_to_string(v.values.shape()));
  }
  std::size_t degree = 3;
  if (mode == TemporalInterpolation::local_polynomial) {
    if (frames % t != 0 || frames / t > 4) {
      throw ConfigError("polynomial temporal interpolation needs an integer frame ratio of at most 4, got " +
                        std::to_string(frames) + "/" + std::to_string(t));
    }
    degree = frames / t;
  }

  // Time first: t x h x w -> frames x h x w.
  std::vector<double> temporal(frames * h * w);
  std::vector<double> series(t);
  const auto src = v.values.data();
  for (std::size_t p = 0; p < h * w; ++p) {
    for (std::size_t i = 0; i < t; ++i) series[i] = src[i * h * w + p];
    if (mode == TemporalInterpolation::natural_cubic) {
      const NaturalCubicSpline spline(series);
      for (std::size_t o = 0; o < frames; ++o) temporal[o * h * w + p] = spline(source_position(o, t, frames));
    } else {
      for (std::size_t o = 0; o < frames; ++o) {
        temporal[o * h * w + p] = local_polynomial(series, degree, source_position(o, t, frames));
      }
    }
  }

  // Then bilinear in space, rows before columns.
  std::vector<double> out(frames * height * width);
  std::vector<double> rows(height * w);
  for (std::size_t f = 0; f < frames; ++f) {
    const double* plane = temporal.data() + f * h * w;
    for (std::size_t y = 0; y < height; ++y) {
      const double sy = source_position(y, h, height);
      for (std::size_t x = 0; x < w; ++x) rows[y * w + x] = lerp_at(plane + x, h, w, sy);
    }
    for (std::size_t y = 0; y < height; ++y) {
      const double* row = rows.data() + y * w;
      for (std::size_t x = 0; x < width; ++x) {
        out[(f * height + y) * width + x] = std::clamp(lerp_at(row, w, 1, source_position(x, w, width)), 0.0, 1.0);
      }
    }
  }
  return {Tensor({frames, height, width}, std::move(out)), v.layer, v.tag};
}

}  // namespace cfp
