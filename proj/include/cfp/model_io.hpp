#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cfp/model.hpp"
#include "cfp/pyramid_graph.hpp"
#include "cfp/tensor.hpp"

namespace cfp {

// Interchange bundle: a UTF-8 JSON manifest plus a blob of little-endian
// IEEE-754 float32 values addressed by byte offset.
//
//   model.json   { "input_shape": [C,T,H,W], "output": "<id>",
//                  "nodes": [ { "id", "kind", "inputs": [...], "params": {...},
//                               "weight": {"offset", "shape"}, "bias": {...} } ] }
//   weights.bin  row-major float32 values at the declared offsets
//   clip.json    { "shape": [C,T,H,W], "mean": [...], "std": [...] }
//   clip.bin     C*T*H*W float32 values
//
// Within each node, "params" holds out_channels / in_channels / kernel /
// stride / padding / groups for conv3d, out_features / in_features for
// fully_connected and kernel / stride / padding for the windowed pools.

ModelGraph load_model_bundle(const std::filesystem::path& manifest_path, const std::filesystem::path& weights_path);

/// Parses the manifest and materializes weights without validating the
/// graph structure (used by `validate` to report findings instead of
/// throwing).
GraphSpec read_graph_spec(const std::filesystem::path& manifest_path, const std::filesystem::path& weights_path);

/// Weights are written as float32; values that are not float-representable
/// are rounded.
void write_model_bundle(const ModelGraph& g, const std::filesystem::path& manifest_path,
                        const std::filesystem::path& weights_path);

/// A pre-decoded clip, C x T x H x W. `mean`/`std` are the per-channel
/// normalization that was applied at export (empty when none was).
struct ClipBundle {
  Tensor tensor;
  std::vector<double> mean;
  std::vector<double> std;

  std::size_t channels() const { return tensor.shape()[0]; }
  std::size_t frames() const { return tensor.shape()[1]; }
  std::size_t height() const { return tensor.shape()[2]; }
  std::size_t width() const { return tensor.shape()[3]; }
};

ClipBundle load_clip(const std::filesystem::path& manifest_path, const std::filesystem::path& blob_path);
void write_clip(const ClipBundle& clip, const std::filesystem::path& manifest_path,
                const std::filesystem::path& blob_path);

/// pyramid.json text. Key order and number formatting are fixed, so equal
/// graphs serialize to identical bytes.
std::string pyramid_to_json(const PyramidGraph& pg);
PyramidGraph pyramid_from_json(const std::string& text);

/// Graphviz text with one cluster per layer; edge labels carry the weight
/// to three decimals.
std::string pyramid_to_dot(const PyramidGraph& pg);

void write_pyramid_graph(const PyramidGraph& pg, const std::filesystem::path& json_path,
                         const std::optional<std::filesystem::path>& dot_path = std::nullopt);
PyramidGraph read_pyramid_graph(const std::filesystem::path& json_path);

}  // namespace cfp
