// Writes the committed toy bundles used by the tests:
//   <out>/<topology>/{model.json, weights.bin, clip.json, clip.bin}

#include <CLI11.hpp>
#include <iostream>

#include "cfp/model_io.hpp"
#include "toy_nets.hpp"

using namespace cfp;
using namespace cfp::testing;

int main(int argc, char** argv) {
  CLI::App app{"Generate toy model bundles"};
  std::string out = "tests/fixtures";
  std::uint64_t seed = 2019;
  app.add_option("--out", out, "Output directory");
  app.add_option("--seed", seed, "Random seed");
  CLI11_PARSE(app, argc, argv);

  struct Fixture {
    Topology topology;
    int convs;
    Head head;
    bool softmax;
    bool pooling;
  };
  const Fixture fixtures[] = {
      {Topology::plain, 3, Head::pooled_fc, false, true},
      {Topology::residual, 4, Head::unit_conv, false, false},
      {Topology::grouped, 3, Head::flat_fc, false, false},
      {Topology::branch, 4, Head::pooled_fc, true, false},
  };
  std::mt19937_64 rng(seed);
  for (const auto& f : fixtures) {
    ToyNetOptions o;
    o.topology = f.topology;
    o.convs = f.convs;
    o.head = f.head;
    o.softmax = f.softmax;
    o.pooling = f.pooling;
    o.input = {3, 4, 12, 12};
    o.classes = 10;
    const GraphSpec spec = make_toy_spec(o, rng);
    const ClipBundle clip = make_toy_clip(o.input, rng);
    const auto dir = std::filesystem::path(out) / to_string(f.topology);
    std::filesystem::create_directories(dir);
    write_model_bundle(ModelGraph::create(spec), dir / "model.json", dir / "weights.bin");
    write_clip(clip, dir / "clip.json", dir / "clip.bin");
    std::cout << dir.string() << ": " << spec.nodes.size() << " nodes\n";
  }
  return 0;
}
