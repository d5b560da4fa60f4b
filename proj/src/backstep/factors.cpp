// Pooled activation/kernel factors and the class maps built from them.

#include <algorithm>
#include <string>

#include "cfp/backstep.hpp"
#include "cfp/error.hpp"

namespace cfp {

namespace {

void require_kernel_in_range(const LayerNode& layer, std::size_t kernel) {
  const std::size_t count = layer.kind == LayerKind::conv3d ? layer.conv().out_channels : layer.fc().out_features;
  if (kernel >= count) {
    throw InvalidInputError("kernel " + std::to_string(kernel) + " is out of range for layer '" + layer.id +
                            "' with " + std::to_string(count) + " kernels");
  }
}

ChannelVector pooled_conv_kernel(const LayerNode& conv, std::size_t kernel) {
  const auto& p = conv.conv();
  const auto& k = p.kernel;
  const std::size_t kvol = k[0] * k[1] * k[2];
  const std::size_t cin_g = p.in_channels_per_group();
  const std::size_t first = (kernel / p.out_channels_per_group()) * cin_g;
  ChannelVector out(p.in_channels, 0.0);
  const double* w = conv.weight->data().data() + kernel * cin_g * kvol;
  for (std::size_t ci = 0; ci < cin_g; ++ci) {
    double sum = 0.0;
    for (std::size_t o = 0; o < kvol; ++o) sum += w[ci * kvol + o];
    out[first + ci] = sum / static_cast<double>(kvol);
  }
  return out;
}

// Mean over all (location, kernel offset) pairs of activation * weight,
// with the kernel wrapped around the activation volume. Algebraically
// equal to mean(activation) * mean(weight).
double local_pair_mean(const Tensor& act, std::size_t channel, const double* kern, const Extent3& k) {
  const auto& s = act.shape();
  const std::size_t D = s[1], H = s[2], W = s[3];
  const double* a = act.data().data() + channel * D * H * W;
  double acc = 0.0;
  for (std::size_t kt = 0; kt < k[0]; ++kt)
    for (std::size_t kh = 0; kh < k[1]; ++kh)
      for (std::size_t kw = 0; kw < k[2]; ++kw) {
        const double w = kern[(kt * k[1] + kh) * k[2] + kw];
        for (std::size_t t = 0; t < D; ++t) {
          const std::size_t tt = (t + kt) % D;
          for (std::size_t h = 0; h < H; ++h) {
            const double* row = a + (tt * H + (h + kh) % H) * W;
            for (std::size_t x = 0; x < W; ++x) acc += row[(x + kw) % W] * w;
          }
        }
      }
  return acc / static_cast<double>(D * H * W * k[0] * k[1] * k[2]);
}

LayerFactors local_loop_factors(const LayerNode& conv, const Tensor& act, std::span<const std::size_t> kernels) {
  const auto& p = conv.conv();
  const std::size_t kvol = p.kernel[0] * p.kernel[1] * p.kernel[2];
  const std::size_t cin_g = p.in_channels_per_group();
  LayerFactors f;
  f.activation.assign(p.in_channels, 0.0);
  const std::size_t n = act.channel_size();
  for (std::size_t c = 0; c < p.in_channels; ++c) {
    double sum = 0.0;
    const auto ch = act.channel(c);
    for (std::size_t i = 0; i < n; ++i) sum += ch[i];
    f.activation[c] = sum / static_cast<double>(n);
  }
  for (std::size_t j : kernels) {
    ChannelVector w(p.in_channels, 0.0);
    const std::size_t first = (j / p.out_channels_per_group()) * cin_g;
    for (std::size_t ci = 0; ci < cin_g; ++ci) {
      const double* kern = conv.weight->data().data() + (j * cin_g + ci) * kvol;
      const double pair = local_pair_mean(act, first + ci, kern, p.kernel);
      const double a = f.activation[first + ci];
      // Where the pooled activation is zero every product that uses this
      // factor is zero as well, so its value is immaterial.
      w[first + ci] = a != 0.0 ? pair / a : 0.0;
    }
    f.kernels.emplace(j, std::move(w));
  }
  return f;
}

}  // namespace

Tensor inflate_kernel(const LayerNode& conv, std::size_t kernel) {
  require_kernel_in_range(conv, kernel);
  const auto& p = conv.conv();
  const auto& k = p.kernel;
  const std::size_t kvol = k[0] * k[1] * k[2];
  const std::size_t cin_g = p.in_channels_per_group();
  const std::size_t first = (kernel / p.out_channels_per_group()) * cin_g;
  Tensor out({p.in_channels, k[0], k[1], k[2]});
  const double* w = conv.weight->data().data() + kernel * cin_g * kvol;
  auto dst = out.mutable_data();
  std::copy(w, w + cin_g * kvol, dst.begin() + static_cast<std::ptrdiff_t>(first * kvol));
  return out;
}

ChannelVector pooled_kernel(const LayerNode& layer, std::size_t kernel, std::size_t input_channels) {
  if (layer.kind != LayerKind::conv3d && layer.kind != LayerKind::fully_connected) {
    throw InvalidInputError("layer '" + layer.id + "' has no kernels");
  }
  require_kernel_in_range(layer, kernel);
  if (layer.kind == LayerKind::conv3d) {
    if (layer.conv().in_channels != input_channels) {
      throw InvalidInputError("layer '" + layer.id + "' kernels span " + std::to_string(layer.conv().in_channels) +
                              " channels, activation has " + std::to_string(input_channels));
    }
    return pooled_conv_kernel(layer, kernel);
  }
  const auto& p = layer.fc();
  if (input_channels == 0 || p.in_features % input_channels != 0) {
    throw InvalidInputError("layer '" + layer.id + "' input features do not split evenly over " +
                            std::to_string(input_channels) + " channels");
  }
  const std::size_t per_channel = p.in_features / input_channels;
  const double* row = layer.weight->data().data() + kernel * p.in_features;
  ChannelVector out(input_channels);
  for (std::size_t c = 0; c < input_channels; ++c) {
    double sum = 0.0;
    for (std::size_t i = 0; i < per_channel; ++i) sum += row[c * per_channel + i];
    out[c] = sum / static_cast<double>(per_channel);
  }
  return out;
}

LayerFactors compute_layer_factors(const LayerNode& layer, const Tensor& input_activation,
                                   std::span<const std::size_t> kernels, PoolingRoute route) {
  if (input_activation.rank() != 4) {
    throw InvalidInputError("activation entering '" + layer.id + "' must be C,T,H,W");
  }
  for (std::size_t j : kernels) require_kernel_in_range(layer, j);
  if (route == PoolingRoute::local_loop && layer.kind == LayerKind::conv3d) {
    if (input_activation.channels() != layer.conv().in_channels) {
      throw InvalidInputError("activation entering '" + layer.id + "' has the wrong channel count");
    }
    return local_loop_factors(layer, input_activation, kernels);
  }
  LayerFactors f;
  f.activation = global_avg_pool(input_activation);
  for (std::size_t j : kernels) f.kernels.emplace(j, pooled_kernel(layer, j, f.activation.size()));
  return f;
}

ChannelVector kernel_class_map(const LayerFactors& f, std::size_t kernel) {
  auto it = f.kernels.find(kernel);
  if (it == f.kernels.end()) throw InvalidInputError("no pooled factor for kernel " + std::to_string(kernel));
  return minmax_normalize(elementwise_product_reduce(f.activation, std::span(&it->second, 1)));
}

ChannelVector aggregate_class_map(const LayerFactors& f, Aggregation aggregation) {
  std::vector<ChannelVector> ws;
  ws.reserve(f.kernels.size());
  for (const auto& [j, w] : f.kernels) ws.push_back(w);
  const auto raw = aggregation == Aggregation::product ? elementwise_product_reduce(f.activation, ws)
                                                       : elementwise_sum_mean_reduce(f.activation, ws);
  return minmax_normalize(raw);
}

}  // namespace cfp
