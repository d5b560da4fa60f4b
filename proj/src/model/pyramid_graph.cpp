#include "cfp/pyramid_graph.hpp"

#include <algorithm>

namespace cfp {

const PyramidNode* PyramidGraph::find_node(const KernelRef& ref) const {
  auto it = std::find_if(nodes.begin(), nodes.end(), [&](const PyramidNode& n) { return n.ref == ref; });
  return it == nodes.end() ? nullptr : &*it;
}

std::vector<KernelRef> PyramidGraph::children_of(const KernelRef& ref) const {
  std::vector<KernelRef> out;
  for (const auto& e : edges) {
    if (e.from == ref) out.push_back(e.to);
  }
  return out;
}

std::size_t PyramidGraph::in_degree(const KernelRef& ref) const {
  return static_cast<std::size_t>(std::count_if(edges.begin(), edges.end(), [&](const PyramidEdge& e) { return e.to == ref; }));
}

std::vector<PyramidNode> PyramidGraph::nodes_in_layer(const std::string& layer) const {
  std::vector<PyramidNode> out;
  for (const auto& n : nodes) {
    if (n.ref.layer == layer) out.push_back(n);
  }
  return out;
}

int PyramidGraph::level_of(const std::string& layer) const {
  for (const auto& l : layers) {
    if (l.id == layer) return l.level;
  }
  return 0;
}

}  // namespace cfp
