#pragma once

#include <cstdint>
#include <random>
#include <string>

#include "cfp/model.hpp"
#include "cfp/model_io.hpp"

namespace cfp::testing {

enum class Topology { plain, residual, grouped, branch };
enum class Head { pooled_fc, flat_fc, unit_conv };

std::string to_string(Topology t);

struct ToyNetOptions {
  Topology topology = Topology::plain;
  int convs = 3;  // 2..4
  Head head = Head::pooled_fc;
  bool softmax = false;
  bool pooling = false;  // a strided pool after the first relu
  Shape input{3, 4, 8, 8};
  std::size_t classes = 5;
};

struct ToyNet {
  GraphSpec spec;
  ClipBundle clip;
};

/// Randomly weighted network with float-representable values.
GraphSpec make_toy_spec(const ToyNetOptions& opts, std::mt19937_64& rng);
ClipBundle make_toy_clip(const Shape& shape, std::mt19937_64& rng);

/// Picks topology, depth, channels and head from `seed`.
ToyNetOptions random_toy_options(std::mt19937_64& rng);
ToyNet make_random_toy_net(std::uint64_t seed);

/// Inserts `count` pass-through nodes (1x1x1 average pools) in front of
/// every input of every add and concat node.
GraphSpec insert_identity_links(const GraphSpec& spec, int count = 1);

}  // namespace cfp::testing
