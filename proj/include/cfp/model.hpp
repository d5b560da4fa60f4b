#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "cfp/tensor.hpp"

namespace cfp {

/// Id under which the clip tensor is referenced by `inputs` lists.
inline constexpr std::string_view kGraphInputId = "input";

enum class LayerKind {
  conv3d,
  fully_connected,
  relu,
  avg_pool3d,
  max_pool3d,
  global_avg_pool,
  add,
  concat,
  softmax,
};

std::string_view to_string(LayerKind kind);
std::optional<LayerKind> layer_kind_from_string(std::string_view name);

using Extent3 = std::array<std::size_t, 3>;  // depth (time), height, width

struct Conv3dParams {
  std::size_t out_channels = 0;
  std::size_t in_channels = 0;
  Extent3 kernel{1, 1, 1};
  Extent3 stride{1, 1, 1};
  Extent3 padding{0, 0, 0};
  std::size_t groups = 1;

  /// Expected weight shape: out x (in / groups) x Fd x Fh x Fw.
  Shape weight_shape() const;
  std::size_t in_channels_per_group() const { return in_channels / groups; }
  std::size_t out_channels_per_group() const { return out_channels / groups; }
};

struct FullyConnectedParams {
  std::size_t out_features = 0;
  std::size_t in_features = 0;
};

/// Windowed pooling. Average pooling counts padded cells in the divisor;
/// max pooling ignores them.
struct Pool3dParams {
  Extent3 kernel{1, 1, 1};
  Extent3 stride{1, 1, 1};
  Extent3 padding{0, 0, 0};
};

using LayerParams = std::variant<std::monostate, Conv3dParams, FullyConnectedParams, Pool3dParams>;

struct LayerNode {
  std::string id;
  LayerKind kind = LayerKind::relu;
  std::vector<std::string> inputs;
  LayerParams params;
  std::optional<Tensor> weight;
  std::optional<Tensor> bias;

  const Conv3dParams& conv() const;
  const FullyConnectedParams& fc() const;
  const Pool3dParams& pool() const;
};

/// Unvalidated description of a network, as read from a manifest.
struct GraphSpec {
  Shape input_shape;  // C x T x H x W
  std::string output_id;
  std::vector<LayerNode> nodes;
};

struct ValidationFinding {
  std::string node_id;
  std::string message;
};

/// Inferred output shape per node (in topological order), or the first
/// inconsistency found. Stops at the first finding.
struct ValidationReport {
  std::vector<std::pair<std::string, Shape>> shapes;
  std::vector<ValidationFinding> findings;

  bool ok() const { return findings.empty(); }
};

/// Checks ids, references, acyclicity, parameters, weight shapes and
/// propagates shapes from the input. Never throws for graph defects.
ValidationReport validate_graph(const GraphSpec& spec);

/// Output extent of a strided, zero-padded window along one axis, or 0
/// when the window does not fit.
std::size_t window_output_extent(std::size_t n, std::size_t f, std::size_t stride, std::size_t pad);

/// A validated, immutable network in topological order.
class ModelGraph {
 public:
  /// Validates and topologically sorts. Throws ModelFormatError naming
  /// the offending node on any finding.
  static ModelGraph create(GraphSpec spec);

  const Shape& input_shape() const noexcept { return input_shape_; }
  const std::string& output_id() const noexcept { return output_id_; }
  std::span<const LayerNode> nodes() const noexcept { return nodes_; }

  const LayerNode* find(std::string_view id) const;
  const LayerNode& node(std::string_view id) const;
  std::size_t index_of(std::string_view id) const;

  /// Output shape of a node; kGraphInputId gives the input shape.
  const Shape& shape_of(std::string_view id) const;

  /// Nodes that list `id` among their inputs, in topological order.
  const std::vector<std::string>& consumers(std::string_view id) const;

  /// The fully_connected or 1x1x1 conv3d layer producing class scores.
  const LayerNode& prediction_layer() const;

  std::size_t class_count() const;

  /// Back to a plain description (for serialization).
  GraphSpec spec() const;

 private:
  Shape input_shape_;
  std::string output_id_;
  std::string prediction_id_;
  std::vector<LayerNode> nodes_;
  std::map<std::string, std::size_t, std::less<>> index_;
  std::map<std::string, Shape, std::less<>> shapes_;
  std::map<std::string, std::vector<std::string>, std::less<>> consumers_;
};

ValidationReport validate_graph(const ModelGraph& g);

}  // namespace cfp
