#include "cfp/tensor_ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>

#include "cfp/error.hpp"

namespace cfp {

namespace {

void require_finite(std::span<const double> v, const char* what) {
  for (double x : v) {
    if (!std::isfinite(x)) throw InvalidInputError(std::string(what) + " contains a non-finite value");
  }
}

void require_same_length(std::span<const double> a, std::span<const ChannelVector> ws) {
  if (ws.empty()) throw InvalidInputError("reduction needs at least one factor vector");
  for (const auto& w : ws) {
    if (w.size() != a.size()) {
      throw InvalidInputError("factor length " + std::to_string(w.size()) + " does not match activation length " +
                              std::to_string(a.size()));
    }
    require_finite(w, "factor vector");
  }
  require_finite(a, "activation vector");
}

}  // namespace

ChannelVector global_avg_pool(const Tensor& t) {
  if (t.empty()) throw InvalidInputError("global_avg_pool of an empty tensor");
  const std::size_t n = t.channel_size();
  ChannelVector out(t.channels());
  for (std::size_t c = 0; c < out.size(); ++c) {
    double sum = 0.0;
    for (double x : t.channel(c)) sum += x;
    out[c] = sum / static_cast<double>(n);
  }
  return out;
}

ChannelVector minmax_normalize(std::span<const double> v) {
  if (v.empty()) throw InvalidInputError("minmax_normalize of an empty vector");
  require_finite(v, "minmax_normalize input");
  const auto [lo_it, hi_it] = std::minmax_element(v.begin(), v.end());
  const double lo = *lo_it;
  const double range = *hi_it - lo;
  ChannelVector out(v.size(), 0.0);
  if (!(range > 0.0)) return out;
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = (v[i] - lo) / range;
  // (max - min) / (max - min) is exactly 1 in IEEE arithmetic, so the
  // extremes land on 0 and 1 without further adjustment.
  return out;
}

GateResult sigmoid_gate(std::span<const double> v, double theta) {
  if (!(theta > 0.0 && theta < 1.0)) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", theta);
    throw ConfigError(std::string("theta must lie in (0, 1), got ") + buf);
  }
  require_finite(v, "sigmoid_gate input");
  GateResult r;
  r.scores.resize(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    r.scores[i] = 1.0 / (1.0 + std::exp(-(v[i] - theta)));
    if (v[i] > theta) r.selected.push_back(i);
  }
  return r;
}

ChannelVector elementwise_product_reduce(std::span<const double> a, std::span<const ChannelVector> ws) {
  require_same_length(a, ws);
  ChannelVector out(a.begin(), a.end());
  for (const auto& w : ws) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= w[i];
  }
  return out;
}

ChannelVector elementwise_sum_mean_reduce(std::span<const double> a, std::span<const ChannelVector> ws) {
  require_same_length(a, ws);
  ChannelVector out(a.size(), 0.0);
  for (const auto& w : ws) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += a[i] * w[i];
  }
  const double k = static_cast<double>(ws.size());
  for (auto& x : out) x /= k;
  return out;
}

SoftmaxResult softmax_argmax(std::span<const double> logits) {
  if (logits.empty()) throw InvalidInputError("softmax of an empty vector");
  require_finite(logits, "logits");
  SoftmaxResult r;
  r.class_index = static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
  const double top = logits[r.class_index];
  r.probs.resize(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    r.probs[i] = std::exp(logits[i] - top);
    sum += r.probs[i];
  }
  for (auto& p : r.probs) p /= sum;
  return r;
}

}  // namespace cfp
