#pragma once

#include <compare>
#include <cstddef>
#include <string>
#include <vector>

namespace cfp {

/// A kernel (output channel) of a layer.
struct KernelRef {
  std::string layer;
  std::size_t kernel = 0;

  friend auto operator<=>(const KernelRef&, const KernelRef&) = default;
  friend bool operator==(const KernelRef&, const KernelRef&) = default;
};

struct PyramidNode {
  KernelRef ref;
  double score = 0.0;  // normalized class-map value in [0, 1]

  friend bool operator==(const PyramidNode&, const PyramidNode&) = default;
};

/// Parent kernel -> child kernel in an earlier layer. Edges leaving the
/// class root use the prediction layer as `from.layer` and the class index
/// as `from.kernel`.
struct PyramidEdge {
  KernelRef from;
  KernelRef to;
  double weight = 0.0;

  friend bool operator==(const PyramidEdge&, const PyramidEdge&) = default;
};

struct PyramidLayer {
  std::string id;
  int level = 0;  // 1 = closest to the class prediction

  friend bool operator==(const PyramidLayer&, const PyramidLayer&) = default;
};

/// Class Feature Pyramid: a DAG rooted at a virtual class node.
///
/// Nodes and edges are kept in canonical order (by layer level, then layer
/// position in the network, then kernel index) so serialization is stable.
struct PyramidGraph {
  std::size_t class_index = 0;
  double theta = 0.0;
  std::string prediction_layer;
  int depth = 0;
  std::string aggregation;
  std::string activation_tap;
  std::vector<PyramidLayer> layers;
  std::vector<PyramidNode> nodes;
  std::vector<PyramidEdge> edges;
  std::vector<std::string> warnings;

  KernelRef root() const { return {prediction_layer, class_index}; }

  const PyramidNode* find_node(const KernelRef& ref) const;
  std::vector<KernelRef> children_of(const KernelRef& ref) const;
  /// Number of edges ending at `ref` (connections from the layer above).
  std::size_t in_degree(const KernelRef& ref) const;
  std::vector<PyramidNode> nodes_in_layer(const std::string& layer) const;
  int level_of(const std::string& layer) const;  // 0 when absent

  friend bool operator==(const PyramidGraph&, const PyramidGraph&) = default;
};

}  // namespace cfp
