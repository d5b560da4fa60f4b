#include "cfp/model.hpp"

#include <algorithm>
#include <deque>
#include <set>

#include "cfp/error.hpp"

namespace cfp {

namespace {

constexpr std::array<std::pair<LayerKind, std::string_view>, 9> kKindNames{{
    {LayerKind::conv3d, "conv3d"},
    {LayerKind::fully_connected, "fully_connected"},
    {LayerKind::relu, "relu"},
    {LayerKind::avg_pool3d, "avg_pool3d"},
    {LayerKind::max_pool3d, "max_pool3d"},
    {LayerKind::global_avg_pool, "global_avg_pool"},
    {LayerKind::add, "add"},
    {LayerKind::concat, "concat"},
    {LayerKind::softmax, "softmax"},
}};

bool is_unit_conv(const LayerNode& n) {
  if (n.kind != LayerKind::conv3d) return false;
  const auto* p = std::get_if<Conv3dParams>(&n.params);
  return p && p->kernel == Extent3{1, 1, 1} && p->groups == 1;
}

bool is_prediction_kind(const LayerNode& n) { return n.kind == LayerKind::fully_connected || is_unit_conv(n); }

class Checker {
 public:
  explicit Checker(const GraphSpec& spec) : spec_(spec) {}

  ValidationReport run() {
    if (!check_input_shape() || !check_ids() || !sort_topologically()) return std::move(report_);
    shapes_.emplace(std::string(kGraphInputId), spec_.input_shape);
    for (std::size_t idx : order_) {
      const LayerNode& n = spec_.nodes[idx];
      auto shape = infer(n);
      if (!shape) return std::move(report_);
      shapes_.emplace(n.id, *shape);
      report_.shapes.emplace_back(n.id, *shape);
    }
    check_output();
    return std::move(report_);
  }

  const std::vector<std::size_t>& order() const { return order_; }
  const std::string& prediction_id() const { return prediction_id_; }

 private:
  bool fail(const std::string& node, std::string message) {
    report_.findings.push_back({node, std::move(message)});
    return false;
  }

  std::nullopt_t reject(const std::string& node, std::string message) {
    fail(node, std::move(message));
    return std::nullopt;
  }

  bool check_input_shape() {
    const auto& s = spec_.input_shape;
    if (s.size() != 4 || std::find(s.begin(), s.end(), 0u) != s.end()) {
      return fail(std::string(kGraphInputId), "input_shape must be four positive extents C,T,H,W, got [" +
                                                  shape_to_string(s) + "]");
    }
    return true;
  }

  bool check_ids() {
    std::set<std::string_view> seen;
    for (const auto& n : spec_.nodes) {
      if (n.id.empty()) return fail(n.id, "empty node id");
      if (n.id == kGraphInputId) return fail(n.id, "node id 'input' is reserved for the clip");
      if (!seen.insert(n.id).second) return fail(n.id, "duplicate node id");
    }
    for (const auto& n : spec_.nodes) {
      for (const auto& in : n.inputs) {
        if (in != kGraphInputId && !seen.contains(in)) {
          return fail(n.id, "dangling input reference '" + in + "'");
        }
      }
    }
    return true;
  }

  // Kahn's algorithm; ties resolved by declaration order so an already
  // sorted manifest keeps its order.
  bool sort_topologically() {
    std::map<std::string_view, std::size_t> pos;
    for (std::size_t i = 0; i < spec_.nodes.size(); ++i) pos[spec_.nodes[i].id] = i;
    std::vector<std::size_t> pending(spec_.nodes.size(), 0);
    std::vector<std::vector<std::size_t>> out(spec_.nodes.size());
    for (std::size_t i = 0; i < spec_.nodes.size(); ++i) {
      for (const auto& in : spec_.nodes[i].inputs) {
        if (in == kGraphInputId) continue;
        ++pending[i];
        out[pos[in]].push_back(i);
      }
    }
    std::set<std::size_t> ready;
    for (std::size_t i = 0; i < pending.size(); ++i) {
      if (pending[i] == 0) ready.insert(i);
    }
    while (!ready.empty()) {
      std::size_t i = *ready.begin();
      ready.erase(ready.begin());
      order_.push_back(i);
      for (std::size_t j : out[i]) {
        if (--pending[j] == 0) ready.insert(j);
      }
    }
    if (order_.size() != spec_.nodes.size()) {
      for (std::size_t i = 0; i < pending.size(); ++i) {
        if (pending[i] != 0) return fail(spec_.nodes[i].id, "cycle detected");
      }
    }
    return true;
  }

  bool check_arity(const LayerNode& n) {
    const std::size_t k = n.inputs.size();
    const bool binary = n.kind == LayerKind::add || n.kind == LayerKind::concat;
    if (binary ? k < 2 : k != 1) {
      return fail(n.id, std::string(to_string(n.kind)) + " takes " + (binary ? "at least two inputs" : "one input") +
                            ", got " + std::to_string(k));
    }
    return true;
  }

  bool check_tensor(const LayerNode& n, const std::optional<Tensor>& t, const Shape& expected, const char* what,
                    bool required) {
    if (!t) return required ? fail(n.id, std::string("missing ") + what) : true;
    if (t->shape() != expected) {
      return fail(n.id, std::string(what) + " shape mismatch: expected " + shape_to_string(expected) + ", got " +
                            shape_to_string(t->shape()));
    }
    return true;
  }

  bool check_no_weights(const LayerNode& n) {
    if (n.weight || n.bias) return fail(n.id, std::string(to_string(n.kind)) + " takes no weights");
    return true;
  }

  static bool positive(const Extent3& e) { return e[0] && e[1] && e[2]; }

  std::optional<Shape> windowed(const LayerNode& n, const Shape& in, const Extent3& kernel, const Extent3& stride,
                                const Extent3& pad, std::size_t out_channels) {
    if (!positive(kernel) || !positive(stride)) {
      fail(n.id, "kernel and stride extents must be positive");
      return std::nullopt;
    }
    Shape out{out_channels, 0, 0, 0};
    for (int a = 0; a < 3; ++a) {
      out[a + 1] = window_output_extent(in[a + 1], kernel[a], stride[a], pad[a]);
      if (out[a + 1] == 0) {
        fail(n.id, "window " + std::to_string(kernel[a]) + " does not fit input extent " + std::to_string(in[a + 1]) +
                       " with padding " + std::to_string(pad[a]));
        return std::nullopt;
      }
    }
    return out;
  }

  bool require_rank4(const LayerNode& n, const Shape& in) {
    if (in.size() != 4) return fail(n.id, "expects a C,T,H,W input, got shape " + shape_to_string(in));
    return true;
  }

  std::optional<Shape> infer(const LayerNode& n) {
    if (!check_arity(n)) return std::nullopt;
    std::vector<Shape> ins;
    for (const auto& id : n.inputs) ins.push_back(shapes_.at(id));
    const Shape& in = ins.front();

    switch (n.kind) {
      case LayerKind::conv3d: {
        const auto* p = std::get_if<Conv3dParams>(&n.params);
        if (!p) return reject(n.id, "conv3d without conv parameters");
        if (p->groups == 0 || p->in_channels == 0 || p->out_channels == 0) {
          return reject(n.id, "channel counts and groups must be positive");
        }
        if (p->in_channels % p->groups != 0 || p->out_channels % p->groups != 0) {
          return reject(n.id, "in_channels " + std::to_string(p->in_channels) + " and out_channels " +
                                std::to_string(p->out_channels) + " must be divisible by groups " +
                                std::to_string(p->groups));
        }
        if (!require_rank4(n, in)) return std::nullopt;
        if (in[0] != p->in_channels) {
          return reject(n.id, "declares " + std::to_string(p->in_channels) + " input channels but receives " +
                                std::to_string(in[0]));
        }
        if (!check_tensor(n, n.weight, p->weight_shape(), "weight", true) ||
            !check_tensor(n, n.bias, Shape{p->out_channels}, "bias", false)) {
          return std::nullopt;
        }
        return windowed(n, in, p->kernel, p->stride, p->padding, p->out_channels);
      }
      case LayerKind::fully_connected: {
        const auto* p = std::get_if<FullyConnectedParams>(&n.params);
        if (!p) return reject(n.id, "fully_connected without parameters");
        if (p->in_features == 0 || p->out_features == 0) {
          return reject(n.id, "feature counts must be positive");
        }
        if (shape_volume(in) != p->in_features) {
          return reject(n.id, "declares " + std::to_string(p->in_features) + " input features but receives shape " +
                                shape_to_string(in));
        }
        if (!check_tensor(n, n.weight, Shape{p->out_features, p->in_features}, "weight", true) ||
            !check_tensor(n, n.bias, Shape{p->out_features}, "bias", false)) {
          return std::nullopt;
        }
        return Shape{p->out_features};
      }
      case LayerKind::relu:
      case LayerKind::softmax:
        if (!check_no_weights(n)) return std::nullopt;
        return in;
      case LayerKind::avg_pool3d:
      case LayerKind::max_pool3d: {
        const auto* p = std::get_if<Pool3dParams>(&n.params);
        if (!p) return reject(n.id, "pooling node without window parameters");
        if (!check_no_weights(n) || !require_rank4(n, in)) return std::nullopt;
        for (int a = 0; a < 3; ++a) {
          if (p->padding[a] * 2 > p->kernel[a]) {
            return reject(n.id, "padding may be at most half the pooling window");
          }
        }
        return windowed(n, in, p->kernel, p->stride, p->padding, in[0]);
      }
      case LayerKind::global_avg_pool:
        if (!check_no_weights(n) || !require_rank4(n, in)) return std::nullopt;
        return Shape{in[0], 1, 1, 1};
      case LayerKind::add:
        if (!check_no_weights(n)) return std::nullopt;
        for (std::size_t i = 1; i < ins.size(); ++i) {
          if (ins[i] != in) {
            return reject(n.id, "add inputs differ in shape: " + shape_to_string(in) + " vs " +
                                  shape_to_string(ins[i]));
          }
        }
        return in;
      case LayerKind::concat: {
        if (!check_no_weights(n)) return std::nullopt;
        Shape out = in;
        for (std::size_t i = 0; i < ins.size(); ++i) {
          if (!require_rank4(n, ins[i])) return std::nullopt;
          if (!std::equal(ins[i].begin() + 1, ins[i].end(), in.begin() + 1)) {
            return reject(n.id, "concat inputs differ in non-channel extents: " + shape_to_string(in) + " vs " +
                                  shape_to_string(ins[i]));
          }
          if (i) out[0] += ins[i][0];
        }
        return out;
      }
    }
    return reject(n.id, "unsupported layer kind");
  }

  void check_output() {
    const LayerNode* out = nullptr;
    for (const auto& n : spec_.nodes) {
      if (n.id == spec_.output_id) out = &n;
    }
    if (!out) {
      fail(spec_.output_id, "output node '" + spec_.output_id + "' does not exist");
      return;
    }
    const LayerNode* pred = out;
    if (out->kind == LayerKind::softmax) {
      pred = nullptr;
      for (const auto& n : spec_.nodes) {
        if (n.id == out->inputs.front()) pred = &n;
      }
    }
    if (!pred || !is_prediction_kind(*pred)) {
      fail(out->id, "output must be a fully_connected or ungrouped 1x1x1 conv3d layer, optionally followed by softmax");
      return;
    }
    prediction_id_ = pred->id;
  }

  const GraphSpec& spec_;
  ValidationReport report_;
  std::vector<std::size_t> order_;
  std::map<std::string, Shape, std::less<>> shapes_;
  std::string prediction_id_;
};

}  // namespace

std::string_view to_string(LayerKind kind) {
  for (const auto& [k, name] : kKindNames) {
    if (k == kind) return name;
  }
  return "unknown";
}

std::optional<LayerKind> layer_kind_from_string(std::string_view name) {
  for (const auto& [k, n] : kKindNames) {
    if (n == name) return k;
  }
  return std::nullopt;
}

Shape Conv3dParams::weight_shape() const {
  return {out_channels, groups ? in_channels / groups : 0, kernel[0], kernel[1], kernel[2]};
}

const Conv3dParams& LayerNode::conv() const {
  if (const auto* p = std::get_if<Conv3dParams>(&params)) return *p;
  throw InternalError("node '" + id + "' has no conv parameters");
}

const FullyConnectedParams& LayerNode::fc() const {
  if (const auto* p = std::get_if<FullyConnectedParams>(&params)) return *p;
  throw InternalError("node '" + id + "' has no fully_connected parameters");
}

const Pool3dParams& LayerNode::pool() const {
  if (const auto* p = std::get_if<Pool3dParams>(&params)) return *p;
  throw InternalError("node '" + id + "' has no pooling parameters");
}

std::size_t window_output_extent(std::size_t n, std::size_t f, std::size_t stride, std::size_t pad) {
  if (stride == 0 || n + 2 * pad < f) return 0;
  return (n + 2 * pad - f) / stride + 1;
}

ValidationReport validate_graph(const GraphSpec& spec) { return Checker(spec).run(); }

ValidationReport validate_graph(const ModelGraph& g) { return validate_graph(g.spec()); }

ModelGraph ModelGraph::create(GraphSpec spec) {
  Checker checker(spec);
  ValidationReport report = checker.run();
  if (!report.ok()) {
    const auto& f = report.findings.front();
    throw ModelFormatError(f.message, f.node_id);
  }
  ModelGraph g;
  g.input_shape_ = spec.input_shape;
  g.output_id_ = spec.output_id;
  g.prediction_id_ = checker.prediction_id();
  for (std::size_t idx : checker.order()) g.nodes_.push_back(std::move(spec.nodes[idx]));
  g.shapes_.emplace(std::string(kGraphInputId), g.input_shape_);
  g.consumers_[std::string(kGraphInputId)];
  for (std::size_t i = 0; i < g.nodes_.size(); ++i) {
    g.index_.emplace(g.nodes_[i].id, i);
    g.consumers_[g.nodes_[i].id];
  }
  for (auto& [id, shape] : report.shapes) g.shapes_.emplace(id, std::move(shape));
  for (const auto& n : g.nodes_) {
    for (const auto& in : n.inputs) {
      auto& list = g.consumers_[in];
      if (std::find(list.begin(), list.end(), n.id) == list.end()) list.push_back(n.id);
    }
  }
  return g;
}

const LayerNode* ModelGraph::find(std::string_view id) const {
  auto it = index_.find(id);
  return it == index_.end() ? nullptr : &nodes_[it->second];
}

const LayerNode& ModelGraph::node(std::string_view id) const {
  if (const auto* n = find(id)) return *n;
  throw InvalidInputError("no node named '" + std::string(id) + "'");
}

std::size_t ModelGraph::index_of(std::string_view id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw InvalidInputError("no node named '" + std::string(id) + "'");
  return it->second;
}

const Shape& ModelGraph::shape_of(std::string_view id) const {
  auto it = shapes_.find(id);
  if (it == shapes_.end()) throw InvalidInputError("no node named '" + std::string(id) + "'");
  return it->second;
}

const std::vector<std::string>& ModelGraph::consumers(std::string_view id) const {
  auto it = consumers_.find(id);
  if (it == consumers_.end()) throw InvalidInputError("no node named '" + std::string(id) + "'");
  return it->second;
}

const LayerNode& ModelGraph::prediction_layer() const { return node(prediction_id_); }

std::size_t ModelGraph::class_count() const {
  const auto& p = prediction_layer();
  return p.kind == LayerKind::fully_connected ? p.fc().out_features : p.conv().out_channels;
}

GraphSpec ModelGraph::spec() const { return GraphSpec{input_shape_, output_id_, nodes_}; }

}  // namespace cfp
