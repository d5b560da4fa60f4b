#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "cfp/error.hpp"
#include "cfp/inference.hpp"
#include "helpers.hpp"
#include "toy_nets.hpp"

using namespace cfp;
using namespace cfp::testing;

namespace {

// Textbook cross-correlation over explicit indices; groups handled by
// reading only the group's slice.
Tensor reference_conv(const Tensor& x, const LayerNode& node) {
  const auto& p = node.conv();
  const auto& s = x.shape();
  Shape out{p.out_channels, 0, 0, 0};
  for (int d = 0; d < 3; ++d) out[d + 1] = (s[d + 1] + 2 * p.padding[d] - p.kernel[d]) / p.stride[d] + 1;
  Tensor y(out);
  auto dst = y.mutable_data();
  const std::size_t cin_g = p.in_channels / p.groups, cout_g = p.out_channels / p.groups;
  const auto& w = *node.weight;
  std::size_t i = 0;
  for (std::size_t o = 0; o < out[0]; ++o)
    for (std::size_t t = 0; t < out[1]; ++t)
      for (std::size_t h = 0; h < out[2]; ++h)
        for (std::size_t v = 0; v < out[3]; ++v, ++i) {
          double acc = node.bias ? node.bias->data()[o] : 0.0;
          const std::size_t g = o / cout_g;
          for (std::size_t ci = 0; ci < cin_g; ++ci)
            for (std::size_t a = 0; a < p.kernel[0]; ++a)
              for (std::size_t b = 0; b < p.kernel[1]; ++b)
                for (std::size_t c = 0; c < p.kernel[2]; ++c) {
                  const long long tt = static_cast<long long>(t * p.stride[0] + a) - static_cast<long long>(p.padding[0]);
                  const long long hh = static_cast<long long>(h * p.stride[1] + b) - static_cast<long long>(p.padding[1]);
                  const long long vv = static_cast<long long>(v * p.stride[2] + c) - static_cast<long long>(p.padding[2]);
                  if (tt < 0 || hh < 0 || vv < 0 || tt >= static_cast<long long>(s[1]) ||
                      hh >= static_cast<long long>(s[2]) || vv >= static_cast<long long>(s[3])) {
                    continue;
                  }
                  const std::size_t widx = (((o * cin_g + ci) * p.kernel[0] + a) * p.kernel[1] + b) * p.kernel[2] + c;
                  acc += w.data()[widx] * x.at(g * cin_g + ci, static_cast<std::size_t>(tt), static_cast<std::size_t>(hh),
                                               static_cast<std::size_t>(vv));
                }
          dst[i] = acc;
        }
  return y;
}

// Ungrouped copy whose kernels are zero outside their group's slice.
LayerNode zero_padded_full(const LayerNode& grouped) {
  LayerNode full = grouped;
  auto& p = std::get<Conv3dParams>(full.params);
  const auto& gp = grouped.conv();
  p.groups = 1;
  const std::size_t kvol = gp.kernel[0] * gp.kernel[1] * gp.kernel[2];
  const std::size_t cin_g = gp.in_channels_per_group(), cout_g = gp.out_channels_per_group();
  std::vector<double> w(gp.out_channels * gp.in_channels * kvol, 0.0);
  for (std::size_t o = 0; o < gp.out_channels; ++o)
    for (std::size_t ci = 0; ci < cin_g; ++ci)
      for (std::size_t k = 0; k < kvol; ++k)
        w[(o * gp.in_channels + (o / cout_g) * cin_g + ci) * kvol + k] = grouped.weight->data()[(o * cin_g + ci) * kvol + k];
  full.weight = Tensor(p.weight_shape(), std::move(w));
  return full;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.shape() == b.shape());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

// Scalar reference forward for every node kind used by the toy nets.
Tensor reference_node(const ModelGraph& g, const LayerNode& n, const std::vector<const Tensor*>& in) {
  const Tensor& x = *in.front();
  switch (n.kind) {
    case LayerKind::conv3d: return reference_conv(x, n);
    case LayerKind::relu: {
      std::vector<double> v(x.data().begin(), x.data().end());
      for (double& e : v) e = e > 0 ? e : 0.0;
      return Tensor(x.shape(), v);
    }
    case LayerKind::avg_pool3d:
    case LayerKind::max_pool3d: {
      const auto& p = n.pool();
      const Shape out = g.shape_of(n.id);
      std::vector<double> v;
      for (std::size_t c = 0; c < out[0]; ++c)
        for (std::size_t t = 0; t < out[1]; ++t)
          for (std::size_t h = 0; h < out[2]; ++h)
            for (std::size_t w = 0; w < out[3]; ++w) {
              double sum = 0.0, best = -std::numeric_limits<double>::infinity();
              for (std::size_t a = 0; a < p.kernel[0]; ++a)
                for (std::size_t b = 0; b < p.kernel[1]; ++b)
                  for (std::size_t d = 0; d < p.kernel[2]; ++d) {
                    const long long tt = static_cast<long long>(t * p.stride[0] + a) - static_cast<long long>(p.padding[0]);
                    const long long hh = static_cast<long long>(h * p.stride[1] + b) - static_cast<long long>(p.padding[1]);
                    const long long ww = static_cast<long long>(w * p.stride[2] + d) - static_cast<long long>(p.padding[2]);
                    if (tt < 0 || hh < 0 || ww < 0 || tt >= static_cast<long long>(x.shape()[1]) ||
                        hh >= static_cast<long long>(x.shape()[2]) || ww >= static_cast<long long>(x.shape()[3])) {
                      continue;
                    }
                    const double e = x.at(c, static_cast<std::size_t>(tt), static_cast<std::size_t>(hh),
                                          static_cast<std::size_t>(ww));
                    sum += e;
                    best = std::max(best, e);
                  }
              v.push_back(n.kind == LayerKind::max_pool3d
                              ? best
                              : sum / static_cast<double>(p.kernel[0] * p.kernel[1] * p.kernel[2]));
            }
      return Tensor(out, v);
    }
    case LayerKind::global_avg_pool: {
      std::vector<double> v;
      for (std::size_t c = 0; c < x.channels(); ++c) {
        double s = 0.0;
        for (std::size_t i = 0; i < x.channel_size(); ++i) s += x.data()[c * x.channel_size() + i];
        v.push_back(s / static_cast<double>(x.channel_size()));
      }
      return Tensor({x.channels(), 1, 1, 1}, v);
    }
    case LayerKind::add: {
      std::vector<double> v(x.size(), 0.0);
      for (const Tensor* t : in)
        for (std::size_t i = 0; i < v.size(); ++i) v[i] += t->data()[i];
      return Tensor(x.shape(), v);
    }
    case LayerKind::concat: {
      Shape s = x.shape();
      s[0] = 0;
      std::vector<double> v;
      for (const Tensor* t : in) {
        s[0] += t->channels();
        v.insert(v.end(), t->data().begin(), t->data().end());
      }
      return Tensor(s, v);
    }
    case LayerKind::fully_connected: {
      const auto& p = n.fc();
      std::vector<double> v(p.out_features);
      for (std::size_t o = 0; o < p.out_features; ++o) {
        double acc = n.bias ? n.bias->data()[o] : 0.0;
        for (std::size_t f = 0; f < p.in_features; ++f) acc += n.weight->data()[o * p.in_features + f] * x.data()[f];
        v[o] = acc;
      }
      return Tensor({p.out_features}, v);
    }
    case LayerKind::softmax: {
      // Over channels, separately at every location.
      const std::size_t c = x.shape()[0], per = x.size() / c;
      std::vector<double> v(x.size());
      for (std::size_t loc = 0; loc < per; ++loc) {
        double top = -std::numeric_limits<double>::infinity(), sum = 0.0;
        for (std::size_t k = 0; k < c; ++k) top = std::max(top, x.data()[k * per + loc]);
        for (std::size_t k = 0; k < c; ++k) sum += (v[k * per + loc] = std::exp(x.data()[k * per + loc] - top));
        for (std::size_t k = 0; k < c; ++k) v[k * per + loc] /= sum;
      }
      return Tensor(x.shape(), v);
    }
  }
  throw std::logic_error("unhandled kind");
}

}  // namespace

TEST_SUITE("inference") {
  TEST_CASE("conv3d scalar examples") {
    auto n = conv_node("c", "input", 1, 1, {1, 1, 1});
    n.weight = Tensor({1, 1, 1, 1, 1}, {2.5});
    CHECK(conv3d_forward(Tensor({1, 1, 1, 1}, {-3.0}), n).data()[0] == -7.5);
    n.weight = Tensor({1, 1, 1, 1, 1}, {2.0});
    CHECK(conv3d_forward(Tensor::filled({1, 3, 3, 3}, 1.0), n) == Tensor::filled({1, 3, 3, 3}, 2.0));
    CHECK_THROWS_AS(conv3d_forward(Tensor::filled({2, 3, 3, 3}, 1.0), n), InvalidInputError);
  }

  TEST_CASE("conv3d matches the scalar reference on random configs") {
    std::mt19937_64 rng(31);
    std::uniform_int_distribution<std::size_t> k_d(1, 3), s_d(1, 2), c_d(1, 5);
    for (int trial = 0; trial < 40; ++trial) {
      const Extent3 k{k_d(rng), k_d(rng), k_d(rng)}, st{s_d(rng), s_d(rng), s_d(rng)};
      const Extent3 pad{k[0] / 2, k[1] / 2, k[2] / 2};
      auto n = conv_node("c", "input", c_d(rng), c_d(rng), k, 1, st, pad);
      n.weight = random_tensor(n.conv().weight_shape(), rng);
      n.bias = random_tensor({n.conv().out_channels}, rng);
      const Tensor x = random_tensor({n.conv().in_channels, 4, 6, 5}, rng);
      CHECK(max_abs_diff(conv3d_forward(x, n), reference_conv(x, n)) <= 1e-12);
      CHECK(max_abs_diff(conv3d_forward(x, n, ForwardOptions{3}), reference_conv(x, n)) <= 1e-12);
    }
  }

  TEST_CASE("grouped conv equals the zero-padded full conv") {
    std::mt19937_64 rng(37);
    auto n = conv_node("g", "input", 4, 4, {3, 3, 3}, 2, {1, 1, 1}, {1, 1, 1});
    n.weight = random_tensor(n.conv().weight_shape(), rng);
    const Tensor x = random_tensor({4, 4, 5, 5}, rng);
    CHECK(max_abs_diff(conv3d_forward(x, n), conv3d_forward(x, zero_padded_full(n))) <= 1e-5);
  }

  TEST_CASE("node_forward examples") {
    const Tensor x({1, 1, 1, 3}, {-1, 0, 2});
    const Tensor* pair[] = {&x, &x};
    CHECK(node_forward(pair, plain_node("a", LayerKind::add, {"p", "q"})) == Tensor({1, 1, 1, 3}, {-2, 0, 4}));
    const Tensor* one[] = {&x};
    CHECK(node_forward(one, plain_node("r", LayerKind::relu, {"p"})) == Tensor({1, 1, 1, 3}, {0, 0, 2}));

    std::mt19937_64 rng(41);
    const Tensor a = random_tensor({8, 2, 3, 3}, rng), b = random_tensor({16, 2, 3, 3}, rng);
    const Tensor* cat_in[] = {&a, &b};
    const Tensor cat = node_forward(cat_in, plain_node("c", LayerKind::concat, {"p", "q"}));
    REQUIRE(cat.shape() == Shape{24, 2, 3, 3});
    CHECK(std::equal(a.data().begin(), a.data().end(), cat.data().begin()));
    CHECK(std::equal(b.data().begin(), b.data().end(), cat.data().begin() + 8 * 18));
    const Tensor* mismatched[] = {&a, &b};
    CHECK_THROWS(node_forward(mismatched, plain_node("a", LayerKind::add, {"p", "q"})));
    CHECK_THROWS(node_forward(one, plain_node("a", LayerKind::add, {"p", "q"})));
  }

  TEST_CASE("pool padding: average counts padded cells, max ignores them") {
    auto avg = plain_node("avg", LayerKind::avg_pool3d, {"p"});
    avg.params = Pool3dParams{{1, 1, 3}, {1, 1, 1}, {0, 0, 1}};
    auto mx = avg;
    mx.kind = LayerKind::max_pool3d;
    const Tensor x({1, 1, 1, 2}, {-3.0, -6.0});
    const Tensor* in[] = {&x};
    CHECK(node_forward(in, avg) == Tensor({1, 1, 1, 2}, {-3.0, -3.0}));
    CHECK(node_forward(in, mx) == Tensor({1, 1, 1, 2}, {-3.0, -3.0}));
    const Tensor y({1, 1, 1, 2}, {-3.0, 6.0});
    const Tensor* in2[] = {&y};
    CHECK(node_forward(in2, avg) == Tensor({1, 1, 1, 2}, {1.0, 1.0}));
    CHECK(node_forward(in2, mx) == Tensor({1, 1, 1, 2}, {6.0, 6.0}));
  }

  TEST_CASE("a single unit conv with weight 1 stores the clip") {
    GraphSpec s;
    s.input_shape = {1, 2, 3, 3};
    auto n = conv_node("c", "input", 1, 1, {1, 1, 1});
    n.weight = Tensor({1, 1, 1, 1, 1}, {1.0});
    s.nodes = {n};
    s.output_id = "c";
    const auto g = ModelGraph::create(s);
    std::mt19937_64 rng(2);
    const Tensor clip = random_tensor(s.input_shape, rng);
    CHECK(forward_all(g, clip).store.at("c") == clip);
  }

  TEST_CASE("forward_all matches the scalar reference on toy nets") {
    for (std::uint64_t seed : {42ull, 1ull, 2ull, 3ull, 4ull, 5ull, 6ull, 7ull, 8ull, 9ull, 10ull, 11ull}) {
      const auto net = make_random_toy_net(seed);
      const auto g = ModelGraph::create(net.spec);
      const auto fwd = forward_all(g, net.clip);
      CHECK(fwd.store.size() == g.nodes().size());
      ActivationStore ref;
      for (const auto& n : g.nodes()) {
        std::vector<const Tensor*> in;
        for (const auto& id : n.inputs) in.push_back(id == kGraphInputId ? &net.clip.tensor : &ref.at(id));
        ref.insert(n.id, reference_node(g, n, in));
        CHECK(fwd.store.at(n.id).shape() == g.shape_of(n.id));
        CHECK(max_abs_diff(fwd.store.at(n.id), ref.at(n.id)) <= 1e-9);
      }
      const Tensor& pred = ref.at(g.prediction_layer().id);
      for (std::size_t c = 0; c < fwd.logits.size(); ++c) {
        double expected = 0.0;
        const std::size_t per = pred.size() / fwd.logits.size();
        for (std::size_t i = 0; i < per; ++i) expected += pred.data()[c * per + i];
        CHECK(std::abs(fwd.logits[c] - expected / static_cast<double>(per)) <= 1e-9);
      }
    }
  }

  TEST_CASE("forward is deterministic and independent of the thread count") {
    const auto net = make_random_toy_net(77);
    const auto g = ModelGraph::create(net.spec);
    const auto a = forward_all(g, net.clip, ForwardOptions{1});
    const auto b = forward_all(g, net.clip, ForwardOptions{1});
    const auto c = forward_all(g, net.clip, ForwardOptions{4});
    CHECK(a.store == b.store);
    CHECK(a.store == c.store);
  }

  TEST_CASE("residual add equals main path plus shortcut") {
    for (std::uint64_t seed = 100; seed < 110; ++seed) {
      std::mt19937_64 rng(seed);
      ToyNetOptions o;
      o.topology = Topology::residual;
      o.convs = 3;
      const auto spec = make_toy_spec(o, rng);
      const auto g = ModelGraph::create(spec);
      const auto fwd = forward_all(g, make_toy_clip(o.input, rng).tensor);
      for (const auto& n : g.nodes()) {
        if (n.kind != LayerKind::add) continue;
        const Tensor& sum = fwd.store.at(n.id);
        const Tensor& main = fwd.store.at(n.inputs[0]);
        const Tensor& skip = fwd.store.at(n.inputs[1]);
        for (std::size_t i = 0; i < sum.size(); ++i) CHECK(sum.data()[i] == main.data()[i] + skip.data()[i]);
      }
    }
  }

  TEST_CASE("errors name the failing node and clip shape is checked") {
    const auto net = make_random_toy_net(3);
    const auto g = ModelGraph::create(net.spec);
    CHECK_THROWS_AS(forward_all(g, Tensor::filled({1, 1, 1, 1}, 0.0)), InvalidInputError);
  }
}
