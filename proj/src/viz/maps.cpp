#include <algorithm>
#include <string>

#include "cfp/error.hpp"
#include "cfp/tensor_ops.hpp"
#include "cfp/viz.hpp"

namespace cfp {

namespace {

Shape volume_shape(const Tensor& t) { return {t.shape()[1], t.shape()[2], t.shape()[3]}; }

ActivationVolume normalized_volume(Shape shape, const std::vector<double>& acc, std::string layer, std::string tag) {
  return {Tensor(std::move(shape), minmax_normalize(acc)), std::move(layer), std::move(tag)};
}

void require_same_extents(const Shape& expected, const Tensor& t, const KernelRef& ref) {
  if (volume_shape(t) != expected) {
    throw InvalidInputError("activation of " + ref.layer + ":" + std::to_string(ref.kernel) + " spans " +
                            shape_to_string(volume_shape(t)) + ", other maps span " + shape_to_string(expected));
  }
}

}  // namespace

const Tensor& kernel_activation(const ModelGraph& g, const ActivationStore& store, std::string_view layer,
                                ActivationTap tap) {
  if (g.node(layer).kind != LayerKind::conv3d) {
    throw InvalidInputError("'" + std::string(layer) + "' is not a convolution");
  }
  if (tap == ActivationTap::post_nonlinearity) {
    const auto& consumers = g.consumers(layer);
    if (consumers.size() == 1 && g.node(consumers.front()).kind == LayerKind::relu) return store.at(consumers.front());
  }
  return store.at(layer);
}

ActivationVolume feature_wise_map(const PyramidGraph& pg, const ModelGraph& g, const ActivationStore& store,
                                  const KernelRef& node, ActivationTap tap) {
  const std::string name = node.layer + ":" + std::to_string(node.kernel);
  if (node != pg.root() && !pg.find_node(node)) throw InvalidInputError("kernel " + name + " is not in the pyramid");
  const auto children = pg.children_of(node);
  if (children.empty()) {
    throw InvalidInputError("kernel " + name +
                            " has no children in the pyramid; use layer-wise mode or back-step to a greater depth");
  }
  Shape shape;
  std::vector<double> acc;
  for (const auto& child : children) {
    const Tensor& act = kernel_activation(g, store, child.layer, tap);
    if (acc.empty()) {
      shape = volume_shape(act);
      acc.assign(act.channel_size(), 0.0);
    }
    require_same_extents(shape, act, child);
    const auto ch = act.channel(child.kernel);
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += ch[i];
  }
  for (double& x : acc) x /= static_cast<double>(children.size());
  return normalized_volume(std::move(shape), acc, node.layer, "kernel " + std::to_string(node.kernel));
}

ActivationVolume layer_wise_map(const PyramidGraph& pg, const ModelGraph& g, const ActivationStore& store,
                                std::string_view layer, ActivationTap tap) {
  const auto nodes = pg.nodes_in_layer(std::string(layer));
  if (nodes.empty()) throw InvalidInputError("layer '" + std::string(layer) + "' is not part of the pyramid");
  const Tensor& act = kernel_activation(g, store, layer, tap);
  std::vector<double> acc(act.channel_size(), 0.0);
  for (const auto& n : nodes) {
    const double weight = static_cast<double>(pg.in_degree(n.ref));
    const auto ch = act.channel(n.ref.kernel);
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += weight * ch[i];
  }
  return normalized_volume(volume_shape(act), acc, std::string(layer), "layer");
}

}  // namespace cfp
