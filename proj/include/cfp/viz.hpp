#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cfp/backstep.hpp"
#include "cfp/inference.hpp"
#include "cfp/model.hpp"
#include "cfp/model_io.hpp"
#include "cfp/pyramid_graph.hpp"
#include "cfp/tensor.hpp"

namespace cfp {

/// Single-channel spatio-temporal map, shape t x h x w.
struct ActivationVolume {
  Tensor values;
  std::string layer;
  std::string tag;  // "kernel <j>", "layer", ...

  std::size_t frames() const { return values.shape()[0]; }
  std::size_t height() const { return values.shape()[1]; }
  std::size_t width() const { return values.shape()[2]; }
};

/// Output map of a convolution's kernels. The post-nonlinearity tap uses the
/// output of a relu when that relu is the convolution's only consumer.
const Tensor& kernel_activation(const ModelGraph& g, const ActivationStore& store, std::string_view layer,
                                ActivationTap tap = ActivationTap::post_nonlinearity);

/// Mean of the activation maps of `node`'s children, min-max normalized.
ActivationVolume feature_wise_map(const PyramidGraph& pg, const ModelGraph& g, const ActivationStore& store,
                                  const KernelRef& node, ActivationTap tap = ActivationTap::post_nonlinearity);

/// Sum of a layer's selected kernel maps, each weighted by its number of
/// incoming pyramid edges, min-max normalized.
ActivationVolume layer_wise_map(const PyramidGraph& pg, const ModelGraph& g, const ActivationStore& store,
                                std::string_view layer, ActivationTap tap = ActivationTap::post_nonlinearity);

/// Natural cubic spline through equally spaced knots at 0, 1, ..., n-1.
class NaturalCubicSpline {
 public:
  explicit NaturalCubicSpline(std::span<const double> knots);
  double operator()(double x) const;
  std::size_t size() const noexcept { return y_.size(); }

 private:
  std::vector<double> y_;
  std::vector<double> m_;  // second derivatives
};

enum class TemporalInterpolation {
  natural_cubic,
  /// Piecewise polynomial of degree T/t through the nearest T/t + 1 knots.
  /// Only for integer ratios up to 4.
  local_polynomial,
};

/// Resamples to frames x height x width. Knots map onto the output with
/// first and last samples aligned, so each source frame i sits at output
/// position i * (frames - 1) / (t - 1). Time uses the chosen interpolant,
/// space uses bilinear interpolation; the result is clamped to [0, 1].
ActivationVolume spline_upsample(const ActivationVolume& v, std::size_t frames, std::size_t height, std::size_t width,
                                 TemporalInterpolation mode = TemporalInterpolation::natural_cubic);

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
  friend bool operator==(const Rgb&, const Rgb&) = default;
};

/// 256-entry perceptually ordered ramp (index 0 coldest).
class Colormap {
 public:
  static const Colormap& inferno();
  /// Throws ConfigError for unknown names.
  static const Colormap& by_name(std::string_view name);

  Rgb operator()(double v) const;  // v clamped to [0, 1]
  const std::array<Rgb, 256>& table() const noexcept { return table_; }

 private:
  explicit Colormap(const std::array<Rgb, 256>& table) : table_(table) {}
  std::array<Rgb, 256> table_;
};

struct OverlayStyle {
  double alpha = 0.5;
  std::string colormap = "inferno";
  int output_fps = 8;

  void validate() const;
};

struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> rgb;  // row-major, 3 bytes per pixel

  friend bool operator==(const Image&, const Image&) = default;
};

/// 8-bit RGB frames of a clip. Values are de-normalized with the clip's
/// mean/std (when present) and read as intensities in [0, 1]. Clips must
/// have 1 (gray) or 3 (RGB) channels.
std::vector<Image> clip_frames(const ClipBundle& clip);

/// out = (1 - alpha*v) * frame + alpha*v * colormap(v), per pixel.
Image blend_frame(const Image& frame, std::span<const double> heat, const OverlayStyle& style);

/// Writes frame_0000.png, frame_0001.png, ... and, when `gif` is set,
/// overlay.gif at style.output_fps. Returns the written paths.
std::vector<std::filesystem::path> render_overlay(const ClipBundle& clip, const ActivationVolume& v,
                                                  const OverlayStyle& style, const std::filesystem::path& out_dir,
                                                  bool gif = false);

void write_png(const std::filesystem::path& path, const Image& image);
Image read_png(const std::filesystem::path& path);

/// Animated, looping GIF with a fixed 3-3-2 RGB palette.
void write_gif(const std::filesystem::path& path, std::span<const Image> frames, int fps);

}  // namespace cfp
