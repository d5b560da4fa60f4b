#include "toy_nets.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace cfp::testing {

namespace {

double float_value(double v) { return static_cast<double>(static_cast<float>(v)); }

Tensor random_tensor(const Shape& shape, double scale, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-scale, scale);
  std::vector<double> v(shape_volume(shape));
  for (double& x : v) x = float_value(u(rng));
  return Tensor(shape, std::move(v));
}

class Builder {
 public:
  Builder(std::mt19937_64& rng, Shape input) : rng_(rng) { shapes_[std::string(kGraphInputId)] = std::move(input); }

  std::string conv(const std::string& in, std::size_t out_ch, std::size_t k, std::size_t groups = 1) {
    Conv3dParams p;
    p.in_channels = shapes_.at(in)[0];
    p.out_channels = out_ch;
    p.kernel = {k, k, k};
    p.padding = {k / 2, k / 2, k / 2};
    p.groups = groups;
    LayerNode n{next_id("conv"), LayerKind::conv3d, {in}, p, std::nullopt, std::nullopt};
    const double fan_in = static_cast<double>(p.in_channels_per_group() * k * k * k);
    n.weight = random_tensor(p.weight_shape(), 1.5 / std::sqrt(fan_in), rng_);
    n.bias = random_tensor({out_ch}, 0.1, rng_);
    Shape s = shapes_.at(in);
    s[0] = out_ch;
    return push(std::move(n), s);
  }

  std::string unary(LayerKind kind, const std::string& in) {
    const char* prefix = kind == LayerKind::relu ? "relu" : kind == LayerKind::global_avg_pool ? "gap" : "softmax";
    Shape s = shapes_.at(in);
    if (kind == LayerKind::global_avg_pool) s = {s[0], 1, 1, 1};
    return push({next_id(prefix), kind, {in}, {}, std::nullopt, std::nullopt}, s);
  }

  std::string pool(LayerKind kind, const std::string& in) {
    Pool3dParams p;
    Shape s = shapes_.at(in);
    for (int d = 0; d < 3; ++d) {
      const std::size_t k = s[d + 1] >= 2 ? 2 : 1;
      p.kernel[d] = p.stride[d] = k;
      s[d + 1] = s[d + 1] / k;
    }
    return push({next_id("pool"), kind, {in}, p, std::nullopt, std::nullopt}, s);
  }

  std::string merge(LayerKind kind, std::vector<std::string> ins) {
    Shape s = shapes_.at(ins.front());
    if (kind == LayerKind::concat) {
      s[0] = 0;
      for (const auto& i : ins) s[0] += shapes_.at(i)[0];
    }
    return push({next_id(kind == LayerKind::add ? "add" : "concat"), kind, std::move(ins), {}, std::nullopt,
                 std::nullopt},
                s);
  }

  std::string fc(const std::string& in, std::size_t classes) {
    const std::size_t features = shape_volume(shapes_.at(in));
    LayerNode n{"fc", LayerKind::fully_connected, {in}, FullyConnectedParams{classes, features}, std::nullopt,
                std::nullopt};
    n.weight = random_tensor({classes, features}, 2.0 / std::sqrt(static_cast<double>(features)), rng_);
    n.bias = random_tensor({classes}, 0.1, rng_);
    return push(std::move(n), {classes});
  }

  const Shape& shape(const std::string& id) const { return shapes_.at(id); }

  GraphSpec finish(std::string output) {
    return {shapes_.at(std::string(kGraphInputId)), std::move(output), std::move(nodes_)};
  }

  std::string add_node(LayerNode n, Shape s) { return push(std::move(n), std::move(s)); }

 private:
  std::string next_id(const std::string& prefix) { return prefix + std::to_string(++counters_[prefix]); }

  std::string push(LayerNode n, Shape s) {
    shapes_[n.id] = std::move(s);
    nodes_.push_back(std::move(n));
    return nodes_.back().id;
  }

  std::mt19937_64& rng_;
  std::map<std::string, Shape> shapes_;
  std::map<std::string, int> counters_;
  std::vector<LayerNode> nodes_;
};

std::size_t pick(std::mt19937_64& rng, std::initializer_list<std::size_t> options) {
  std::uniform_int_distribution<std::size_t> d(0, options.size() - 1);
  return *(options.begin() + static_cast<std::ptrdiff_t>(d(rng)));
}

std::size_t channels(std::mt19937_64& rng, bool multiple_of_four) {
  if (multiple_of_four) return pick(rng, {4, 8, 12, 16});
  return std::uniform_int_distribution<std::size_t>(4, 16)(rng);
}

}  // namespace

std::string to_string(Topology t) {
  switch (t) {
    case Topology::plain: return "plain";
    case Topology::residual: return "residual";
    case Topology::grouped: return "grouped";
    case Topology::branch: return "branch";
  }
  return "?";
}

GraphSpec make_toy_spec(const ToyNetOptions& o, std::mt19937_64& rng) {
  Builder b(rng, o.input);
  const std::string in(kGraphInputId);
  auto conv_relu = [&](const std::string& x, std::size_t out, std::size_t k, std::size_t groups = 1) {
    return b.unary(LayerKind::relu, b.conv(x, out, k, groups));
  };
  auto kernel = [&] { return pick(rng, {1, 3}); };
  auto maybe_pool = [&](const std::string& x) {
    return o.pooling ? b.pool(pick(rng, {0, 1}) ? LayerKind::max_pool3d : LayerKind::avg_pool3d, x) : x;
  };

  std::string x;
  switch (o.topology) {
    case Topology::plain:
    case Topology::grouped: {
      const bool grouped = o.topology == Topology::grouped;
      x = maybe_pool(conv_relu(in, channels(rng, grouped), kernel()));
      for (int i = 1; i < o.convs; ++i) {
        const std::size_t out = channels(rng, grouped);
        std::size_t groups = 1;
        if (grouped) {
          const std::size_t cin = b.shape(x)[0];
          groups = (cin % 4 == 0 && out % 4 == 0 && pick(rng, {0, 1})) ? 4 : 2;
        }
        x = conv_relu(x, out, kernel(), groups);
      }
      break;
    }
    case Topology::residual: {
      const std::size_t c = channels(rng, false);
      const std::string stem = maybe_pool(conv_relu(in, c, kernel()));
      if (o.convs == 2) {
        x = b.unary(LayerKind::relu, b.merge(LayerKind::add, {b.conv(stem, c, kernel()), stem}));
      } else if (o.convs == 3) {
        const std::string main = b.conv(conv_relu(stem, channels(rng, false), kernel()), c, kernel());
        x = b.unary(LayerKind::relu, b.merge(LayerKind::add, {main, stem}));
      } else {
        const std::size_t c2 = channels(rng, false);
        const std::string main = b.conv(conv_relu(stem, channels(rng, false), kernel()), c2, kernel());
        const std::string shortcut = b.conv(stem, c2, 1);
        x = b.unary(LayerKind::relu, b.merge(LayerKind::add, {main, shortcut}));
      }
      break;
    }
    case Topology::branch: {
      const std::string stem = maybe_pool(conv_relu(in, channels(rng, false), kernel()));
      std::string a = stem, bb;
      if (o.convs >= 3) a = conv_relu(stem, channels(rng, false), kernel());
      bb = conv_relu(stem, channels(rng, false), kernel());
      if (o.convs >= 4) bb = conv_relu(bb, channels(rng, false), kernel());
      x = b.merge(LayerKind::concat, {a, bb});
      break;
    }
  }

  std::string out;
  switch (o.head) {
    case Head::pooled_fc: out = b.fc(b.unary(LayerKind::global_avg_pool, x), o.classes); break;
    case Head::flat_fc: out = b.fc(x, o.classes); break;
    case Head::unit_conv: {
      Conv3dParams p;
      p.in_channels = b.shape(x)[0];
      p.out_channels = o.classes;
      LayerNode n{"head", LayerKind::conv3d, {x}, p, std::nullopt, std::nullopt};
      n.weight = random_tensor(p.weight_shape(), 2.0 / std::sqrt(static_cast<double>(p.in_channels)), rng);
      n.bias = random_tensor({o.classes}, 0.1, rng);
      Shape s = b.shape(x);
      s[0] = o.classes;
      out = b.add_node(std::move(n), s);
      break;
    }
  }
  if (o.softmax) out = b.unary(LayerKind::softmax, out);
  return b.finish(out);
}

ClipBundle make_toy_clip(const Shape& shape, std::mt19937_64& rng) {
  ClipBundle clip;
  static constexpr double kMean[] = {0.45, 0.45, 0.45}, kStd[] = {0.225, 0.225, 0.225};
  const std::size_t c = shape[0];
  for (std::size_t i = 0; i < c; ++i) {
    clip.mean.push_back(float_value(kMean[i % 3]));
    clip.std.push_back(float_value(kStd[i % 3]));
  }
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> v(shape_volume(shape));
  const std::size_t per = v.size() / c;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const std::size_t ch = i / per;
    v[i] = float_value((u(rng) - clip.mean[ch]) / clip.std[ch]);
  }
  clip.tensor = Tensor(shape, std::move(v));
  return clip;
}

ToyNetOptions random_toy_options(std::mt19937_64& rng) {
  ToyNetOptions o;
  o.topology = static_cast<Topology>(pick(rng, {0, 1, 2, 3}));
  o.convs = static_cast<int>(pick(rng, {2, 3, 4}));
  o.head = static_cast<Head>(pick(rng, {0, 0, 1, 2}));
  o.softmax = pick(rng, {0, 1}) == 1;
  o.pooling = pick(rng, {0, 1}) == 1;
  o.classes = pick(rng, {3, 5, 10});
  return o;
}

ToyNet make_random_toy_net(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const ToyNetOptions o = random_toy_options(rng);
  ToyNet net;
  net.spec = make_toy_spec(o, rng);
  net.clip = make_toy_clip(o.input, rng);
  return net;
}

GraphSpec insert_identity_links(const GraphSpec& spec, int count) {
  GraphSpec out{spec.input_shape, spec.output_id, {}};
  int serial = 0;
  for (const auto& n : spec.nodes) {
    LayerNode copy = n;
    if (n.kind == LayerKind::add || n.kind == LayerKind::concat) {
      for (auto& in : copy.inputs) {
        for (int k = 0; k < count; ++k) {
          LayerNode pass{"pass" + std::to_string(++serial), LayerKind::avg_pool3d, {in}, Pool3dParams{}, std::nullopt,
                         std::nullopt};
          in = pass.id;
          out.nodes.push_back(std::move(pass));
        }
      }
    }
    out.nodes.push_back(std::move(copy));
  }
  return out;
}

}  // namespace cfp::testing
