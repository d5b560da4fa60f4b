#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cfp/inference.hpp"
#include "cfp/model.hpp"
#include "cfp/pyramid_graph.hpp"
#include "cfp/tensor.hpp"
#include "cfp/tensor_ops.hpp"

namespace cfp {

enum class Aggregation { product, sum_mean };
enum class ActivationTap { post_nonlinearity, pre_nonlinearity };

/// How pooled activation x kernel factors are computed. `local_loop` slides
/// every kernel over every activation location (with wrap-around) and
/// averages the products; it yields the same factors as `vectorized` at
/// a cost of D*H*W*Fd*Fh*Fw per channel pair instead of D*H*W + Fd*Fh*Fw.
enum class PoolingRoute { vectorized, local_loop };

std::string_view to_string(Aggregation a);
std::string_view to_string(ActivationTap t);
std::optional<Aggregation> aggregation_from_string(std::string_view s);

struct BackstepConfig {
  double theta = 0.6;
  /// Per-layer thresholds, keyed by the id of the layer whose weights are
  /// used in the step (the prediction layer for class seeding).
  std::map<std::string, double, std::less<>> theta_overrides;
  /// Number of selection levels: 1 is the class seed alone, every further
  /// level back-steps through one more convolution.
  int depth = 3;
  std::optional<std::size_t> class_index;  // empty: argmax of the logits
  Aggregation aggregation = Aggregation::product;
  ActivationTap activation_tap = ActivationTap::post_nonlinearity;
  PoolingRoute pooling = PoolingRoute::vectorized;

  /// Throws ConfigError on theta outside (0, 1) or depth < 1.
  void validate() const;
  double theta_for(std::string_view layer_id) const;
};

/// Gated selection over the input channels of `layer_id`.
struct SelectionResult {
  std::string layer_id;
  ChannelVector class_map;  // normalized, in [0, 1]
  GateResult gate;
  std::vector<std::size_t> selected_kernels;  // == gate.selected
};

/// Pooled activation and pooled (inflated) kernels of one layer.
struct LayerFactors {
  ChannelVector activation;                    // a', one value per input channel
  std::map<std::size_t, ChannelVector> kernels;  // w'_j per requested kernel j
};

/// The activation entering `layer_id` under the given tap. The
/// pre-nonlinearity tap walks back through pooling nodes to the first relu
/// and returns that relu's input.
const Tensor& layer_input_activation(const ModelGraph& g, const ActivationStore& store, std::string_view layer_id,
                                     ActivationTap tap);

/// Kernel j expanded to the full input-channel extent; channels outside
/// the kernel's group are zero.
Tensor inflate_kernel(const LayerNode& conv, std::size_t kernel);

/// w'_j for a convolution (per-input-channel mean of the inflated kernel)
/// or a fully_connected row (per-channel mean when the input is flattened
/// from several locations per channel).
ChannelVector pooled_kernel(const LayerNode& layer, std::size_t kernel, std::size_t input_channels);

LayerFactors compute_layer_factors(const LayerNode& layer, const Tensor& input_activation,
                                   std::span<const std::size_t> kernels, PoolingRoute route);

/// Class-based map of a single kernel: normalize(a' * w'_j).
ChannelVector kernel_class_map(const LayerFactors& f, std::size_t kernel);
/// Aggregated map over all kernels in `f`, normalized.
ChannelVector aggregate_class_map(const LayerFactors& f, Aggregation aggregation);

struct ClassSeed {
  std::size_t class_index = 0;
  SelectionResult selection;  // over the prediction layer's input channels
};

ClassSeed class_seed(const ActivationStore& store, const ModelGraph& g, const BackstepConfig& cfg);
/// Seeding from an explicit prediction-layer input activation.
ClassSeed class_seed(const Tensor& prediction_input, std::span<const double> logits, const LayerNode& prediction,
                     const BackstepConfig& cfg);

/// One back-step through a convolution: from selected kernels of `layer`
/// to a selection over the layer's input channels.
SelectionResult backstep_layer(std::span<const std::size_t> selected_kernels, const Tensor& prev_activation,
                               const LayerNode& layer, const BackstepConfig& cfg);

struct RoutedSelection {
  std::string input_id;
  std::vector<std::size_t> channels;  // local to that input
};

/// Routes a selection over `node`'s output channels to its inputs: add
/// passes it unchanged to every input, concat splits it by channel
/// offset, relu and pooling pass it through.
std::vector<RoutedSelection> adapt_block(const ModelGraph& g, const LayerNode& node,
                                         std::span<const std::size_t> selected);

/// Level of every convolution relative to the prediction layer (1 for the
/// last convolution before it). Levels follow the longest chain of
/// convolutions, so a shorter branch behaves as if padded with identity
/// steps up to the depth of its deepest sibling.
std::map<std::string, int, std::less<>> convolution_levels(const ModelGraph& g);

struct BackstepTrace {
  ClassSeed seed;
  std::vector<SelectionResult> layers;  // one per back-stepped convolution, in processing order
};

struct BackstepOutput {
  PyramidGraph pyramid;
  BackstepTrace trace;
};

BackstepOutput build_pyramid_traced(const ModelGraph& g, const ActivationStore& store, const BackstepConfig& cfg);
PyramidGraph build_pyramid(const ModelGraph& g, const ActivationStore& store, const BackstepConfig& cfg);

}  // namespace cfp
