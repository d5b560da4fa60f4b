#include "cfp/inference.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <map>
#include <thread>

#include "cfp/error.hpp"

namespace cfp {

namespace {

template <typename F>
void parallel_for(std::size_t n, std::size_t threads, F&& body) {
  threads = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(n, 1));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::jthread> workers;
  workers.reserve(threads);
  for (std::size_t w = 0; w < threads; ++w) {
    workers.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += threads) body(i);
    });
  }
}

void require_shape(const Tensor& t, const Shape& expected, const LayerNode& node) {
  if (t.shape() != expected) {
    throw InvalidInputError("node '" + node.id + "' expects input shape " + shape_to_string(expected) + ", got " +
                            shape_to_string(t.shape()));
  }
}

void require_rank4(const Tensor& t, const LayerNode& node) {
  if (t.rank() != 4) throw InvalidInputError("node '" + node.id + "' expects a C,T,H,W input");
}

Shape windowed_shape(const Shape& in, const Extent3& k, const Extent3& s, const Extent3& p, std::size_t channels,
                     const LayerNode& node) {
  Shape out{channels, 0, 0, 0};
  for (int a = 0; a < 3; ++a) {
    out[a + 1] = window_output_extent(in[a + 1], k[a], s[a], p[a]);
    if (out[a + 1] == 0) throw InvalidInputError("node '" + node.id + "': window does not fit the input");
  }
  return out;
}

Tensor pool3d_forward(const Tensor& in, const LayerNode& node) {
  require_rank4(in, node);
  const auto& p = node.pool();
  const Shape out_shape = windowed_shape(in.shape(), p.kernel, p.stride, p.padding, in.channels(), node);
  Tensor out(out_shape);
  const bool is_max = node.kind == LayerKind::max_pool3d;
  const double window = static_cast<double>(p.kernel[0] * p.kernel[1] * p.kernel[2]);
  const auto& is = in.shape();
  for (std::size_t c = 0; c < out_shape[0]; ++c)
    for (std::size_t t = 0; t < out_shape[1]; ++t)
      for (std::size_t h = 0; h < out_shape[2]; ++h)
        for (std::size_t w = 0; w < out_shape[3]; ++w) {
          double acc = is_max ? -std::numeric_limits<double>::infinity() : 0.0;
          for (std::size_t kt = 0; kt < p.kernel[0]; ++kt) {
            const auto it = static_cast<std::ptrdiff_t>(t * p.stride[0] + kt) - static_cast<std::ptrdiff_t>(p.padding[0]);
            if (it < 0 || it >= static_cast<std::ptrdiff_t>(is[1])) continue;
            for (std::size_t kh = 0; kh < p.kernel[1]; ++kh) {
              const auto ih = static_cast<std::ptrdiff_t>(h * p.stride[1] + kh) - static_cast<std::ptrdiff_t>(p.padding[1]);
              if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(is[2])) continue;
              for (std::size_t kw = 0; kw < p.kernel[2]; ++kw) {
                const auto iw = static_cast<std::ptrdiff_t>(w * p.stride[2] + kw) - static_cast<std::ptrdiff_t>(p.padding[2]);
                if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(is[3])) continue;
                const double x = in.at(c, it, ih, iw);
                acc = is_max ? std::max(acc, x) : acc + x;
              }
            }
          }
          out.at(c, t, h, w) = is_max ? acc : acc / window;
        }
  return out;
}

Tensor fully_connected_forward(const Tensor& in, const LayerNode& node) {
  const auto& p = node.fc();
  if (in.size() != p.in_features) {
    throw InvalidInputError("node '" + node.id + "' expects " + std::to_string(p.in_features) + " features, got " +
                            std::to_string(in.size()));
  }
  const Tensor& w = *node.weight;
  std::vector<double> out(p.out_features);
  const auto x = in.data();
  for (std::size_t o = 0; o < p.out_features; ++o) {
    double acc = node.bias ? (*node.bias)[o] : 0.0;
    const double* row = w.data().data() + o * p.in_features;
    for (std::size_t i = 0; i < p.in_features; ++i) acc += row[i] * x[i];
    out[o] = acc;
  }
  return Tensor({p.out_features}, std::move(out));
}

// Normalized exponentials along the channel axis at every location.
Tensor softmax_forward(const Tensor& in) {
  Tensor out = in;
  const std::size_t channels = in.channels();
  const std::size_t stride = in.channel_size();
  auto data = out.mutable_data();
  for (std::size_t loc = 0; loc < stride; ++loc) {
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < channels; ++c) top = std::max(top, data[c * stride + loc]);
    double sum = 0.0;
    for (std::size_t c = 0; c < channels; ++c) {
      double& v = data[c * stride + loc];
      v = std::exp(v - top);
      sum += v;
    }
    for (std::size_t c = 0; c < channels; ++c) data[c * stride + loc] /= sum;
  }
  return out;
}

}  // namespace

void ActivationStore::insert(std::string id, Tensor t) {
  if (contains(id)) throw InternalError("activation for '" + id + "' stored twice");
  entries_.emplace_back(std::move(id), std::move(t));
}

const Tensor* ActivationStore::find(std::string_view id) const {
  for (const auto& [k, t] : entries_) {
    if (k == id) return &t;
  }
  return nullptr;
}

const Tensor& ActivationStore::at(std::string_view id) const {
  if (const auto* t = find(id)) return *t;
  throw InvalidInputError("no activation recorded for '" + std::string(id) + "'");
}

std::size_t threads_from_env() {
  if (const char* env = std::getenv("CFP_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<std::size_t>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

Tensor conv3d_forward(const Tensor& input, const LayerNode& node, const ForwardOptions& opts) {
  const auto& p = node.conv();
  require_rank4(input, node);
  if (input.channels() != p.in_channels) {
    throw InvalidInputError("node '" + node.id + "' expects " + std::to_string(p.in_channels) +
                            " input channels, got " + std::to_string(input.channels()));
  }
  if (!node.weight || node.weight->shape() != p.weight_shape()) {
    throw InvalidInputError("node '" + node.id + "' weight shape does not match its parameters");
  }
  const Shape out_shape = windowed_shape(input.shape(), p.kernel, p.stride, p.padding, p.out_channels, node);
  Tensor out(out_shape);
  const auto& is = input.shape();
  const auto& k = p.kernel;
  const std::size_t cin_g = p.in_channels_per_group();
  const std::size_t cout_g = p.out_channels_per_group();
  const double* wdata = node.weight->data().data();
  const double* xdata = input.data().data();
  const std::size_t kvol = k[0] * k[1] * k[2];
  const std::size_t out_plane = out_shape[1] * out_shape[2] * out_shape[3];

  parallel_for(p.out_channels, opts.threads, [&](std::size_t o) {
    const std::size_t first_in = (o / cout_g) * cin_g;
    const double bias = node.bias ? (*node.bias)[o] : 0.0;
    double* dst = out.mutable_data().data() + o * out_plane;
    for (std::size_t t = 0; t < out_shape[1]; ++t)
      for (std::size_t h = 0; h < out_shape[2]; ++h)
        for (std::size_t w = 0; w < out_shape[3]; ++w) {
          double acc = bias;
          for (std::size_t ci = 0; ci < cin_g; ++ci) {
            const double* kern = wdata + (o * cin_g + ci) * kvol;
            const double* chan = xdata + (first_in + ci) * is[1] * is[2] * is[3];
            for (std::size_t kt = 0; kt < k[0]; ++kt) {
              const auto it = static_cast<std::ptrdiff_t>(t * p.stride[0] + kt) - static_cast<std::ptrdiff_t>(p.padding[0]);
              if (it < 0 || it >= static_cast<std::ptrdiff_t>(is[1])) continue;
              for (std::size_t kh = 0; kh < k[1]; ++kh) {
                const auto ih = static_cast<std::ptrdiff_t>(h * p.stride[1] + kh) - static_cast<std::ptrdiff_t>(p.padding[1]);
                if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(is[2])) continue;
                const double* row = chan + (it * is[2] + ih) * is[3];
                const double* krow = kern + (kt * k[1] + kh) * k[2];
                for (std::size_t kw = 0; kw < k[2]; ++kw) {
                  const auto iw = static_cast<std::ptrdiff_t>(w * p.stride[2] + kw) - static_cast<std::ptrdiff_t>(p.padding[2]);
                  if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(is[3])) continue;
                  acc += krow[kw] * row[iw];
                }
              }
            }
          }
          dst[(t * out_shape[2] + h) * out_shape[3] + w] = acc;
        }
  });
  return out;
}

Tensor node_forward(std::span<const Tensor* const> inputs, const LayerNode& node, const ForwardOptions& opts) {
  const bool multi = node.kind == LayerKind::add || node.kind == LayerKind::concat;
  if (multi ? inputs.size() < 2 : inputs.size() != 1) {
    throw InvalidInputError("node '" + node.id + "' got " + std::to_string(inputs.size()) + " inputs");
  }
  const Tensor& in = *inputs.front();
  switch (node.kind) {
    case LayerKind::conv3d:
      return conv3d_forward(in, node, opts);
    case LayerKind::fully_connected:
      return fully_connected_forward(in, node);
    case LayerKind::relu: {
      Tensor out = in;
      for (double& x : out.mutable_data()) x = std::max(0.0, x);
      return out;
    }
    case LayerKind::avg_pool3d:
    case LayerKind::max_pool3d:
      return pool3d_forward(in, node);
    case LayerKind::global_avg_pool: {
      require_rank4(in, node);
      return Tensor({in.channels(), 1, 1, 1}, global_avg_pool(in));
    }
    case LayerKind::add: {
      Tensor out = in;
      for (std::size_t k = 1; k < inputs.size(); ++k) {
        require_shape(*inputs[k], in.shape(), node);
        auto dst = out.mutable_data();
        const auto src = inputs[k]->data();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
      }
      return out;
    }
    case LayerKind::concat: {
      require_rank4(in, node);
      Shape shape = in.shape();
      shape[0] = 0;
      std::vector<double> data;
      for (const Tensor* t : inputs) {
        require_rank4(*t, node);
        if (!std::equal(t->shape().begin() + 1, t->shape().end(), in.shape().begin() + 1)) {
          throw InvalidInputError("node '" + node.id + "': concat inputs differ in non-channel extents");
        }
        shape[0] += t->channels();
        data.insert(data.end(), t->data().begin(), t->data().end());
      }
      return Tensor(std::move(shape), std::move(data));
    }
    case LayerKind::softmax:
      return softmax_forward(in);
  }
  throw InternalError("unhandled layer kind");
}

ForwardResult forward_all(const ModelGraph& g, const ClipBundle& clip, const ForwardOptions& opts) {
  return forward_all(g, clip.tensor, opts);
}

ForwardResult forward_all(const ModelGraph& g, const Tensor& input, const ForwardOptions& opts) {
  if (input.shape() != g.input_shape()) {
    throw InvalidInputError("clip shape " + shape_to_string(input.shape()) + " does not match model input " +
                            shape_to_string(g.input_shape()));
  }
  ForwardResult r;
  for (const auto& node : g.nodes()) {
    std::vector<const Tensor*> ins;
    for (const auto& id : node.inputs) ins.push_back(id == kGraphInputId ? &input : &r.store.at(id));
    try {
      r.store.insert(node.id, node_forward(ins, node, opts));
    } catch (const InvalidInputError& e) {
      const std::string what = e.what();
      throw InvalidInputError(what.find("'" + node.id + "'") != std::string::npos ? what
                                                                                   : "node '" + node.id + "': " + what);
    }
  }
  const Tensor& pred = r.store.at(g.prediction_layer().id);
  r.logits = pred.rank() == 4 ? global_avg_pool(pred) : ChannelVector(pred.data().begin(), pred.data().end());
  return r;
}

}  // namespace cfp
