#include "cfp/backstep.hpp"

#include <algorithm>
#include <cstdio>
#include <set>
#include <string>
#include <tuple>

#include "cfp/error.hpp"

namespace cfp {

std::string_view to_string(Aggregation a) { return a == Aggregation::product ? "product" : "sum_mean"; }

std::string_view to_string(ActivationTap t) {
  return t == ActivationTap::post_nonlinearity ? "post_nonlinearity" : "pre_nonlinearity";
}

std::optional<Aggregation> aggregation_from_string(std::string_view s) {
  if (s == "product") return Aggregation::product;
  if (s == "sum_mean") return Aggregation::sum_mean;
  return std::nullopt;
}

void BackstepConfig::validate() const {
  auto check_theta = [](double t, const std::string& where) {
    if (!(t > 0.0 && t < 1.0)) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%g", t);
      throw ConfigError(where + " must lie in (0, 1), got " + buf);
    }
  };
  check_theta(theta, "theta");
  for (const auto& [layer, t] : theta_overrides) check_theta(t, "theta for layer '" + layer + "'");
  if (depth < 1) throw ConfigError("depth must be at least 1, got " + std::to_string(depth));
}

double BackstepConfig::theta_for(std::string_view layer_id) const {
  auto it = theta_overrides.find(layer_id);
  return it == theta_overrides.end() ? theta : it->second;
}

const Tensor& layer_input_activation(const ModelGraph& g, const ActivationStore& store, std::string_view layer_id,
                                     ActivationTap tap) {
  const LayerNode& layer = g.node(layer_id);
  const std::string& direct = layer.inputs.front();
  if (direct == kGraphInputId) throw InvalidInputError("layer '" + layer.id + "' reads the clip directly");
  if (tap == ActivationTap::pre_nonlinearity) {
    const LayerNode* cur = &g.node(direct);
    while (cur->kind == LayerKind::avg_pool3d || cur->kind == LayerKind::max_pool3d ||
           cur->kind == LayerKind::global_avg_pool) {
      if (cur->inputs.front() == kGraphInputId) break;
      cur = &g.node(cur->inputs.front());
    }
    // A relu applied straight to the clip has no stored pre-activation;
    // fall through to the post-nonlinearity map.
    if (cur->kind == LayerKind::relu && cur->inputs.front() != kGraphInputId) return store.at(cur->inputs.front());
  }
  return store.at(direct);
}

namespace {

SelectionResult gate_map(std::string layer_id, ChannelVector map, double theta) {
  SelectionResult r;
  r.layer_id = std::move(layer_id);
  r.gate = sigmoid_gate(map, theta);
  r.class_map = std::move(map);
  r.selected_kernels = r.gate.selected;
  return r;
}

struct Step {
  SelectionResult selection;
  LayerFactors factors;
};

Step step_through(const LayerNode& layer, std::span<const std::size_t> kernels, const Tensor& act,
                  const BackstepConfig& cfg) {
  if (layer.kind != LayerKind::conv3d) throw InvalidInputError("layer '" + layer.id + "' is not a convolution");
  if (kernels.empty()) throw InvalidInputError("back-step through '" + layer.id + "' needs at least one kernel");
  Step s;
  s.factors = compute_layer_factors(layer, act, kernels, cfg.pooling);
  s.selection = gate_map(layer.id, aggregate_class_map(s.factors, cfg.aggregation), cfg.theta_for(layer.id));
  return s;
}

}  // namespace

ClassSeed class_seed(const Tensor& prediction_input, std::span<const double> logits, const LayerNode& prediction,
                     const BackstepConfig& cfg) {
  cfg.validate();
  ClassSeed seed;
  if (cfg.class_index) {
    if (*cfg.class_index >= logits.size()) {
      throw ConfigError("class index " + std::to_string(*cfg.class_index) + " is out of range; the model has " +
                        std::to_string(logits.size()) + " classes (valid: 0.." + std::to_string(logits.size() - 1) +
                        ")");
    }
    seed.class_index = *cfg.class_index;
  } else {
    seed.class_index = softmax_argmax(logits).class_index;
  }
  const std::size_t c = seed.class_index;
  const LayerFactors f = compute_layer_factors(prediction, prediction_input, std::span(&c, 1), PoolingRoute::vectorized);
  seed.selection = gate_map(prediction.id, kernel_class_map(f, c), cfg.theta_for(prediction.id));
  return seed;
}

ClassSeed class_seed(const ActivationStore& store, const ModelGraph& g, const BackstepConfig& cfg) {
  const LayerNode& p = g.prediction_layer();
  const Tensor& out = store.at(p.id);
  const ChannelVector logits = out.rank() == 4 ? global_avg_pool(out) : ChannelVector(out.data().begin(), out.data().end());
  return class_seed(layer_input_activation(g, store, p.id, cfg.activation_tap), logits, p, cfg);
}

SelectionResult backstep_layer(std::span<const std::size_t> selected_kernels, const Tensor& prev_activation,
                               const LayerNode& layer, const BackstepConfig& cfg) {
  cfg.validate();
  return step_through(layer, selected_kernels, prev_activation, cfg).selection;
}

std::vector<RoutedSelection> adapt_block(const ModelGraph& g, const LayerNode& node,
                                         std::span<const std::size_t> selected) {
  const std::size_t width = g.shape_of(node.id)[0];
  for (std::size_t s : selected) {
    if (s >= width) {
      throw InternalError("channel " + std::to_string(s) + " is outside the " + std::to_string(width) +
                          " channels of '" + node.id + "'");
    }
  }
  const std::vector<std::size_t> all(selected.begin(), selected.end());
  switch (node.kind) {
    case LayerKind::relu:
    case LayerKind::avg_pool3d:
    case LayerKind::max_pool3d:
    case LayerKind::global_avg_pool:
      return {{node.inputs.front(), all}};
    case LayerKind::add: {
      std::vector<RoutedSelection> out;
      for (const auto& in : node.inputs) out.push_back({in, all});
      return out;
    }
    case LayerKind::concat: {
      std::vector<RoutedSelection> out;
      for (const auto& in : node.inputs) out.push_back({in, {}});
      for (std::size_t s : selected) {
        std::size_t offset = 0;
        bool placed = false;
        for (std::size_t i = 0; i < node.inputs.size() && !placed; ++i) {
          const std::size_t span = g.shape_of(node.inputs[i])[0];
          if (s < offset + span) {
            out[i].channels.push_back(s - offset);
            placed = true;
          }
          offset += span;
        }
        if (!placed) throw InternalError("concat '" + node.id + "' has no input covering channel " + std::to_string(s));
      }
      return out;
    }
    case LayerKind::conv3d:
    case LayerKind::fully_connected:
      throw InvalidInputError("'" + node.id + "' has weights; back-step it with backstep_layer");
    case LayerKind::softmax:
      break;
  }
  throw InvalidInputError("no back-step adapter for " + std::string(to_string(node.kind)) + " node '" + node.id + "'");
}

std::map<std::string, int, std::less<>> convolution_levels(const ModelGraph& g) {
  const LayerNode& p = g.prediction_layer();
  // Longest count of convolutions strictly between a node and the
  // prediction layer, over every path that reaches it.
  std::map<std::string, int, std::less<>> down;
  down[p.id] = 0;
  const auto nodes = g.nodes();
  for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
    if (it->id == p.id) continue;
    int best = -1;
    for (const auto& consumer : g.consumers(it->id)) {
      auto d = down.find(consumer);
      if (d == down.end()) continue;
      const bool counts = consumer != p.id && g.node(consumer).kind == LayerKind::conv3d;
      best = std::max(best, d->second + (counts ? 1 : 0));
    }
    if (best >= 0) down[it->id] = best;
  }
  std::map<std::string, int, std::less<>> levels;
  for (const auto& n : nodes) {
    if (n.kind != LayerKind::conv3d || n.id == p.id) continue;
    if (auto d = down.find(n.id); d != down.end()) levels[n.id] = d->second + 1;
  }
  return levels;
}

namespace {

class PyramidBuilder {
 public:
  PyramidBuilder(const ModelGraph& g, const ActivationStore& store, const BackstepConfig& cfg)
      : g_(g), store_(store), cfg_(cfg), levels_(convolution_levels(g)) {}

  BackstepOutput run() {
    cfg_.validate();
    const LayerNode& p = g_.prediction_layer();
    int max_level = 0;
    for (const auto& [id, level] : levels_) max_level = std::max(max_level, level);
    depth_ = std::min(cfg_.depth, std::max(max_level, 1));
    if (depth_ < cfg_.depth) {
      out_.pyramid.warnings.push_back("requested depth " + std::to_string(cfg_.depth) + " exceeds the " +
                                      std::to_string(max_level) + " available convolution levels; clamped to " +
                                      std::to_string(depth_));
    }

    out_.trace.seed = class_seed(store_, g_, cfg_);
    const auto& seed = out_.trace.seed;
    const KernelRef root{p.id, seed.class_index};
    for (std::size_t s : seed.selection.selected_kernels) {
      const double score = seed.selection.class_map[s];
      for (const auto& ref : reachable(p.inputs.front(), s)) {
        add_node(ref, score);
        add_edge(root, ref, score);
        arrivals_[ref.layer].insert(ref.kernel);
      }
    }

    const auto nodes = g_.nodes();
    for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
      const LayerNode& layer = *it;
      auto lvl = levels_.find(layer.id);
      auto arrived = arrivals_.find(layer.id);
      if (lvl == levels_.end() || lvl->second >= depth_ || arrived == arrivals_.end()) continue;
      if (layer.inputs.front() == kGraphInputId) continue;  // channels of the clip are not kernels
      const std::vector<std::size_t> parents(arrived->second.begin(), arrived->second.end());
      const Tensor& act = layer_input_activation(g_, store_, layer.id, cfg_.activation_tap);
      Step step = step_through(layer, parents, act, cfg_);
      const auto& sel = step.selection;
      const std::string& input = layer.inputs.front();

      for (std::size_t s : sel.selected_kernels) {
        for (const auto& ref : reachable(input, s)) {
          add_node(ref, sel.class_map[s]);
          arrivals_[ref.layer].insert(ref.kernel);
        }
      }
      const double theta = cfg_.theta_for(layer.id);
      for (std::size_t j : parents) {
        const ChannelVector map = kernel_class_map(step.factors, j);
        for (std::size_t c : sigmoid_gate(map, theta).selected) {
          for (const auto& ref : reachable(input, c)) {
            add_node(ref, map[c]);
            add_edge({layer.id, j}, ref, map[c]);
          }
        }
      }
      out_.trace.layers.push_back(std::move(step.selection));
    }
    finalize();
    return std::move(out_);
  }

 private:
  // Convolution kernels within depth that channel `ch` of `id` maps to.
  const std::vector<KernelRef>& reachable(const std::string& id, std::size_t ch) {
    const auto key = std::make_pair(id, ch);
    if (auto it = memo_.find(key); it != memo_.end()) return it->second;
    std::vector<KernelRef> out;
    if (id != kGraphInputId) {
      const LayerNode& n = g_.node(id);
      if (n.kind == LayerKind::conv3d) {
        if (auto lvl = levels_.find(id); lvl != levels_.end() && lvl->second <= depth_) out.push_back({id, ch});
      } else if (n.kind != LayerKind::fully_connected && n.kind != LayerKind::softmax) {
        const std::size_t one[] = {ch};
        for (const auto& routed : adapt_block(g_, n, one)) {
          for (std::size_t local : routed.channels) {
            for (const auto& ref : reachable(routed.input_id, local)) {
              if (std::find(out.begin(), out.end(), ref) == out.end()) out.push_back(ref);
            }
          }
        }
      }
    }
    return memo_.emplace(key, std::move(out)).first->second;
  }

  void add_node(const KernelRef& ref, double score) {
    auto [it, inserted] = nodes_.emplace(ref, score);
    if (!inserted) it->second = std::max(it->second, score);
  }

  void add_edge(const KernelRef& from, const KernelRef& to, double weight) {
    auto [it, inserted] = edges_.emplace(std::make_pair(from, to), weight);
    if (!inserted) it->second = std::max(it->second, weight);
  }

  auto order_key(const KernelRef& r) const {
    const int level = r.layer == g_.prediction_layer().id ? 0 : levels_.at(r.layer);
    return std::make_tuple(level, g_.index_of(r.layer), r.kernel);
  }

  void finalize() {
    auto& pg = out_.pyramid;
    pg.class_index = out_.trace.seed.class_index;
    pg.theta = cfg_.theta;
    pg.prediction_layer = g_.prediction_layer().id;
    pg.depth = depth_;
    pg.aggregation = std::string(to_string(cfg_.aggregation));
    pg.activation_tap = std::string(to_string(cfg_.activation_tap));

    std::set<std::string> layer_ids;
    for (const auto& [ref, score] : nodes_) {
      layer_ids.insert(ref.layer);
      pg.nodes.push_back({ref, score});
    }
    for (const auto& id : layer_ids) pg.layers.push_back({id, levels_.at(id)});
    std::sort(pg.layers.begin(), pg.layers.end(), [&](const PyramidLayer& a, const PyramidLayer& b) {
      return std::make_pair(a.level, g_.index_of(a.id)) < std::make_pair(b.level, g_.index_of(b.id));
    });
    std::sort(pg.nodes.begin(), pg.nodes.end(),
              [&](const PyramidNode& a, const PyramidNode& b) { return order_key(a.ref) < order_key(b.ref); });
    for (const auto& [key, weight] : edges_) pg.edges.push_back({key.first, key.second, weight});
    std::sort(pg.edges.begin(), pg.edges.end(), [&](const PyramidEdge& a, const PyramidEdge& b) {
      return std::make_pair(order_key(a.from), order_key(a.to)) < std::make_pair(order_key(b.from), order_key(b.to));
    });
    if (pg.nodes.empty()) pg.warnings.push_back("no kernel passed the class gate; the pyramid is empty");
  }

  const ModelGraph& g_;
  const ActivationStore& store_;
  const BackstepConfig& cfg_;
  std::map<std::string, int, std::less<>> levels_;
  int depth_ = 1;
  std::map<std::string, std::set<std::size_t>, std::less<>> arrivals_;
  std::map<KernelRef, double> nodes_;
  std::map<std::pair<KernelRef, KernelRef>, double> edges_;
  std::map<std::pair<std::string, std::size_t>, std::vector<KernelRef>> memo_;
  BackstepOutput out_;
};

}  // namespace

BackstepOutput build_pyramid_traced(const ModelGraph& g, const ActivationStore& store, const BackstepConfig& cfg) {
  return PyramidBuilder(g, store, cfg).run();
}

PyramidGraph build_pyramid(const ModelGraph& g, const ActivationStore& store, const BackstepConfig& cfg) {
  return build_pyramid_traced(g, store, cfg).pyramid;
}

}  // namespace cfp
