#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "cfp/tensor.hpp"

namespace cfp {

/// One value per channel (feature) index.
using ChannelVector = std::vector<double>;

/// Logistic gate output: a score per index and the indices that pass.
struct GateResult {
  ChannelVector scores;
  std::vector<std::size_t> selected;  // ascending
};

/// Per-channel mean over all non-channel extents.
ChannelVector global_avg_pool(const Tensor& t);

/// Min-max rescale to [0, 1]. A constant input maps to all zeros.
ChannelVector minmax_normalize(std::span<const double> v);

/// Shifted logistic gate. scores[i] = 1 / (1 + e^-(v[i] - theta)); index i
/// is selected when v[i] > theta, which is the same as scores[i] > 0.5.
/// Throws ConfigError unless 0 < theta < 1.
GateResult sigmoid_gate(std::span<const double> v, double theta);

/// a * ws[0] * ws[1] * ... element-wise.
ChannelVector elementwise_product_reduce(std::span<const double> a, std::span<const ChannelVector> ws);

/// Mean over k of (a * ws[k]) element-wise; the additive counterpart of
/// elementwise_product_reduce.
ChannelVector elementwise_sum_mean_reduce(std::span<const double> a, std::span<const ChannelVector> ws);

struct SoftmaxResult {
  ChannelVector probs;
  std::size_t class_index = 0;  // argmax, lowest index on ties
};

SoftmaxResult softmax_argmax(std::span<const double> logits);

}  // namespace cfp
