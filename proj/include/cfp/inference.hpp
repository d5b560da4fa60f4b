#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "cfp/model.hpp"
#include "cfp/model_io.hpp"
#include "cfp/tensor.hpp"
#include "cfp/tensor_ops.hpp"

namespace cfp {

/// Output of every executed node, in topological order.
class ActivationStore {
 public:
  void insert(std::string id, Tensor t);

  const Tensor* find(std::string_view id) const;
  const Tensor& at(std::string_view id) const;
  bool contains(std::string_view id) const { return find(id) != nullptr; }
  std::size_t size() const noexcept { return entries_.size(); }
  std::span<const std::pair<std::string, Tensor>> entries() const noexcept { return entries_; }

  friend bool operator==(const ActivationStore&, const ActivationStore&) = default;

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
};

struct ForwardOptions {
  /// Worker threads for convolution; results do not depend on it.
  std::size_t threads = 1;
};

/// Reads CFP_THREADS; falls back to the hardware concurrency.
std::size_t threads_from_env();

struct ForwardResult {
  ActivationStore store;
  ChannelVector logits;  // prediction-layer output, pooled to one value per class
};

/// Direct 3D cross-correlation with zero padding. With groups > 1, output
/// channel o only reads the input channels of its group.
Tensor conv3d_forward(const Tensor& input, const LayerNode& node, const ForwardOptions& opts = {});

/// Dispatch for every layer kind.
Tensor node_forward(std::span<const Tensor* const> inputs, const LayerNode& node, const ForwardOptions& opts = {});

ForwardResult forward_all(const ModelGraph& g, const ClipBundle& clip, const ForwardOptions& opts = {});
ForwardResult forward_all(const ModelGraph& g, const Tensor& input, const ForwardOptions& opts = {});

}  // namespace cfp
