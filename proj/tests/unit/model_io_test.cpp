#include <doctest.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <json.hpp>

#include "cfp/error.hpp"
#include "cfp/model_io.hpp"
#include "helpers.hpp"
#include "toy_nets.hpp"

using namespace cfp;
using namespace cfp::testing;
using nlohmann::json;

namespace {

void write_text(const std::filesystem::path& p, const std::string& text) { std::ofstream(p) << text; }

void write_floats(const std::filesystem::path& p, const std::vector<float>& v) {
  std::ofstream f(p, std::ios::binary);
  for (float x : v) {
    const auto bits = std::bit_cast<std::uint32_t>(x);
    for (int b = 0; b < 4; ++b) f.put(static_cast<char>((bits >> (8 * b)) & 0xff));
  }
}

// conv3d (2->3, 1x1x1) -> relu -> fully_connected (3*1*2*2 -> 2)
json toy_manifest() {
  return json::parse(R"({
    "input_shape": [2, 1, 2, 2], "output": "fc",
    "nodes": [
      {"id": "conv", "kind": "conv3d", "inputs": ["input"],
       "params": {"out_channels": 3, "in_channels": 2, "kernel": [1, 1, 1]},
       "weight": {"offset": 0, "shape": [3, 2, 1, 1, 1]}},
      {"id": "relu", "kind": "relu", "inputs": ["conv"]},
      {"id": "fc", "kind": "fully_connected", "inputs": ["relu"],
       "params": {"out_features": 2, "in_features": 12},
       "weight": {"offset": 24, "shape": [2, 12]}, "bias": {"offset": 120, "shape": [2]}}
    ]})");
}

constexpr std::size_t kToyFloats = 6 + 24 + 2;

std::vector<float> toy_weights() {
  std::vector<float> w(kToyFloats);
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = 0.25f * static_cast<float>(i) - 3.0f;
  return w;
}

std::string error_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_SUITE("model_io") {
  TEST_CASE("a 3-layer manifest loads in topological order with exact weights") {
    TempDir dir("io");
    write_text(dir / "model.json", toy_manifest().dump());
    write_floats(dir / "weights.bin", toy_weights());
    const auto g = load_model_bundle(dir / "model.json", dir / "weights.bin");
    REQUIRE(g.nodes().size() == 3);
    CHECK(g.nodes()[0].id == "conv");
    CHECK(g.nodes()[2].id == "fc");
    CHECK(g.node("conv").weight->data()[5] == -1.75);
    CHECK(g.node("fc").bias->data()[1] == 0.25 * 31 - 3.0);
  }

  TEST_CASE("a dangling reference names the missing node") {
    TempDir dir("io");
    auto m = toy_manifest();
    m["nodes"][1]["inputs"] = {"x"};
    write_text(dir / "model.json", m.dump());
    write_floats(dir / "weights.bin", toy_weights());
    const auto msg = error_of([&] { load_model_bundle(dir / "model.json", dir / "weights.bin"); });
    CHECK(msg.find("dangling input reference 'x'") != std::string::npos);
    CHECK(msg.find("relu") != std::string::npos);
  }

  TEST_CASE("a truncated weight file reports expected and actual sizes") {
    TempDir dir("io");
    write_text(dir / "model.json", toy_manifest().dump());
    auto w = toy_weights();
    w.pop_back();
    write_floats(dir / "weights.bin", w);
    const auto msg = error_of([&] { load_model_bundle(dir / "model.json", dir / "weights.bin"); });
    CHECK(msg.find("expected at least 128 bytes, got 124") != std::string::npos);
  }

  TEST_CASE("unknown kinds and malformed manifests are rejected") {
    TempDir dir("io");
    write_floats(dir / "weights.bin", toy_weights());
    auto m = toy_manifest();
    m["nodes"][1]["kind"] = "batch_norm";
    write_text(dir / "model.json", m.dump());
    CHECK_THROWS_AS(load_model_bundle(dir / "model.json", dir / "weights.bin"), ModelFormatError);
    CHECK(error_of([&] { load_model_bundle(dir / "model.json", dir / "weights.bin"); }).find("batch_norm") !=
          std::string::npos);

    write_text(dir / "model.json", "{ not json");
    CHECK_THROWS_AS(load_model_bundle(dir / "model.json", dir / "weights.bin"), ModelFormatError);

    m = toy_manifest();
    m["nodes"][0]["weight"]["shape"] = {3, 2, 1, 1, 2};
    write_text(dir / "model.json", m.dump());
    CHECK_THROWS_AS(load_model_bundle(dir / "model.json", dir / "weights.bin"), ModelFormatError);
    CHECK_THROWS(load_model_bundle(dir / "missing.json", dir / "weights.bin"));
  }

  TEST_CASE("bundle write/load round-trips float-representable weights exactly") {
    TempDir dir("io");
    for (std::uint64_t seed = 1; seed <= 8; ++seed) {
      const auto net = make_random_toy_net(seed);
      const auto g = ModelGraph::create(net.spec);
      write_model_bundle(g, dir / "m.json", dir / "w.bin");
      const auto back = load_model_bundle(dir / "m.json", dir / "w.bin");
      REQUIRE(back.nodes().size() == g.nodes().size());
      for (std::size_t i = 0; i < g.nodes().size(); ++i) {
        const auto& a = g.nodes()[i];
        const auto& b = back.nodes()[i];
        CHECK(a.id == b.id);
        CHECK(a.inputs == b.inputs);
        CHECK(a.weight == b.weight);
        CHECK(a.bias == b.bias);
      }
      CHECK(validate_graph(back).ok());
    }
  }

  TEST_CASE("clips load, round-trip bit-exactly and reject bad sizes") {
    TempDir dir("clip");
    write_text(dir / "clip.json", R"({"shape": [3, 8, 16, 16]})");
    write_floats(dir / "clip.bin", std::vector<float>(3 * 8 * 16 * 16, 0.0f));
    const auto zeros = load_clip(dir / "clip.json", dir / "clip.bin");
    CHECK(zeros.tensor == Tensor({3, 8, 16, 16}));
    CHECK(zeros.frames() == 8);

    write_floats(dir / "clip.bin", std::vector<float>(3 * 8 * 16 * 16 - 1, 0.0f));
    CHECK(error_of([&] { load_clip(dir / "clip.json", dir / "clip.bin"); }).find("size mismatch") !=
          std::string::npos);

    write_floats(dir / "clip.bin", {1.0f, std::numeric_limits<float>::quiet_NaN()});
    write_text(dir / "clip.json", R"({"shape": [1, 1, 1, 2]})");
    CHECK_THROWS_AS(load_clip(dir / "clip.json", dir / "clip.bin"), ModelFormatError);

    std::mt19937_64 rng(4);
    const auto clip = make_toy_clip({3, 4, 5, 6}, rng);
    write_clip(clip, dir / "c.json", dir / "c.bin");
    const auto back = load_clip(dir / "c.json", dir / "c.bin");
    CHECK(back.tensor == clip.tensor);
    CHECK(back.mean == clip.mean);
    CHECK(back.std == clip.std);
  }

  TEST_CASE("pyramid graph serialization") {
    TempDir dir("pg");
    PyramidGraph empty;
    empty.prediction_layer = "fc";
    write_pyramid_graph(empty, dir / "empty.json");
    const auto ej = json::parse(read_bytes(dir / "empty.json"));
    CHECK(ej["nodes"].empty());
    CHECK(ej["edges"].empty());

    PyramidGraph pg;
    pg.class_index = 4;
    pg.theta = 0.6;
    pg.prediction_layer = "fc";
    pg.depth = 2;
    pg.layers = {{"conv2", 1}, {"conv1", 2}};
    pg.nodes = {{{"conv2", 3}, 1.0}, {{"conv1", 0}, 0.75}};
    pg.edges = {{{"conv2", 3}, {"conv1", 0}, 0.8125}};
    write_pyramid_graph(pg, dir / "pg.json", dir / "pg.dot");
    const auto j = json::parse(read_bytes(dir / "pg.json"));
    REQUIRE(j["edges"].size() == 1);
    CHECK(j["edges"][0] == json::parse(
                               R"({"from_layer":"conv2","from_kernel":3,"to_layer":"conv1","to_kernel":0,"weight":0.8125})"));
    CHECK(j["class_index"] == 4);
    CHECK(j["nodes"][1] == json::parse(R"({"layer":"conv1","kernel":0,"score":0.75})"));
    CHECK(read_pyramid_graph(dir / "pg.json") == pg);

    const auto dot = read_bytes(dir / "pg.dot");
    CHECK(dot.find("subgraph cluster_") != std::string::npos);
    CHECK(dot.find("0.812") != std::string::npos);
  }
}
