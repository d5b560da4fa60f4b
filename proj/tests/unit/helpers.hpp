#pragma once

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <unistd.h>
#include <random>
#include <string>
#include <vector>

#include "cfp/model.hpp"
#include "cfp/tensor.hpp"

namespace cfp::testing {

inline constexpr double kExact = 1e-12;

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int serial = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("cfp_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(++serial));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

inline Tensor random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(shape_volume(shape));
  for (double& x : v) x = u(rng);
  return Tensor(shape, std::move(v));
}

inline LayerNode conv_node(std::string id, std::string input, std::size_t in, std::size_t out, Extent3 k,
                           std::size_t groups = 1, Extent3 stride = {1, 1, 1}, Extent3 pad = {0, 0, 0}) {
  Conv3dParams p;
  p.in_channels = in;
  p.out_channels = out;
  p.kernel = k;
  p.stride = stride;
  p.padding = pad;
  p.groups = groups;
  return {std::move(id), LayerKind::conv3d, {std::move(input)}, p, std::nullopt, std::nullopt};
}

inline LayerNode plain_node(std::string id, LayerKind kind, std::vector<std::string> inputs) {
  return {std::move(id), kind, std::move(inputs), {}, std::nullopt, std::nullopt};
}

inline LayerNode fc_node(std::string id, std::string input, std::size_t in, std::size_t out) {
  return {std::move(id), LayerKind::fully_connected, {std::move(input)}, FullyConnectedParams{out, in}, std::nullopt,
          std::nullopt};
}

}  // namespace cfp::testing
