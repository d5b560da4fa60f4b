#include "cfp/model_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <sstream>

#include <json.hpp>

#include "cfp/error.hpp"

namespace cfp {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

std::vector<unsigned char> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file(const fs::path& path, const void* data, std::size_t n) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
  if (!out) throw IoError("write failed for " + path.string());
}

void write_text(const fs::path& path, const std::string& text) { write_file(path, text.data(), text.size()); }

double read_f32_le(const unsigned char* p) {
  const std::uint32_t bits = static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
                             (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
  return static_cast<double>(std::bit_cast<float>(bits));
}

void append_f32_le(std::vector<unsigned char>& out, double v) {
  const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
  for (int s = 0; s < 32; s += 8) out.push_back(static_cast<unsigned char>((bits >> s) & 0xffu));
}

json parse_json(const std::string& text, const fs::path& origin) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ModelFormatError("parse error in " + origin.string() + ": " + e.what());
  }
}

Shape parse_shape(const json& j, const std::string& node, const char* what) {
  if (!j.is_array() || j.empty()) throw ModelFormatError(std::string(what) + " must be a non-empty array", node);
  Shape s;
  for (const auto& e : j) {
    if (!e.is_number_unsigned() || e.get<std::size_t>() == 0) {
      throw ModelFormatError(std::string(what) + " extents must be positive integers", node);
    }
    s.push_back(e.get<std::size_t>());
  }
  return s;
}

std::size_t get_count(const json& params, const char* key, const std::string& node) {
  if (!params.contains(key) || !params[key].is_number_unsigned()) {
    throw ModelFormatError(std::string("params.") + key + " must be a non-negative integer", node);
  }
  return params[key].get<std::size_t>();
}

Extent3 get_extent(const json& params, const char* key, const std::string& node, Extent3 fallback) {
  if (!params.contains(key)) return fallback;
  const auto& v = params[key];
  if (v.is_number_unsigned()) {
    const auto x = v.get<std::size_t>();
    return {x, x, x};
  }
  if (!v.is_array() || v.size() != 3) throw ModelFormatError(std::string("params.") + key + " must have 3 entries", node);
  Extent3 e{};
  for (std::size_t i = 0; i < 3; ++i) {
    if (!v[i].is_number_unsigned()) throw ModelFormatError(std::string("params.") + key + " must be integers", node);
    e[i] = v[i].get<std::size_t>();
  }
  return e;
}

struct BlobRef {
  std::size_t offset = 0;
  Shape shape;
  std::size_t end() const { return offset + 4 * shape_volume(shape); }
};

BlobRef parse_blob_ref(const json& j, const std::string& node, const char* what) {
  if (!j.is_object() || !j.contains("offset") || !j["offset"].is_number_unsigned() || !j.contains("shape")) {
    throw ModelFormatError(std::string(what) + " must be {\"offset\": bytes, \"shape\": [...]}", node);
  }
  BlobRef r{j["offset"].get<std::size_t>(), parse_shape(j["shape"], node, what)};
  if (r.offset % 4 != 0) throw ModelFormatError(std::string(what) + " offset must be a multiple of 4", node);
  return r;
}

Tensor materialize(const std::vector<unsigned char>& blob, const BlobRef& ref, const std::string& node) {
  std::vector<double> data(shape_volume(ref.shape));
  const unsigned char* p = blob.data() + ref.offset;
  for (std::size_t i = 0; i < data.size(); ++i, p += 4) {
    data[i] = read_f32_le(p);
    if (!std::isfinite(data[i])) throw ModelFormatError("weight blob holds a non-finite value", node);
  }
  return Tensor(ref.shape, std::move(data));
}

LayerParams parse_params(LayerKind kind, const json& params, const std::string& node) {
  switch (kind) {
    case LayerKind::conv3d: {
      Conv3dParams p;
      p.out_channels = get_count(params, "out_channels", node);
      p.in_channels = get_count(params, "in_channels", node);
      p.kernel = get_extent(params, "kernel", node, {1, 1, 1});
      p.stride = get_extent(params, "stride", node, {1, 1, 1});
      p.padding = get_extent(params, "padding", node, {0, 0, 0});
      p.groups = params.contains("groups") ? get_count(params, "groups", node) : 1;
      return p;
    }
    case LayerKind::fully_connected:
      return FullyConnectedParams{get_count(params, "out_features", node), get_count(params, "in_features", node)};
    case LayerKind::avg_pool3d:
    case LayerKind::max_pool3d: {
      Pool3dParams p;
      p.kernel = get_extent(params, "kernel", node, {1, 1, 1});
      p.stride = get_extent(params, "stride", node, p.kernel);
      p.padding = get_extent(params, "padding", node, {0, 0, 0});
      return p;
    }
    default:
      return std::monostate{};
  }
}

json extent_json(const Extent3& e) { return json::array({e[0], e[1], e[2]}); }

ordered_json params_json(const LayerNode& n) {
  ordered_json j = ordered_json::object();
  if (const auto* p = std::get_if<Conv3dParams>(&n.params)) {
    j["out_channels"] = p->out_channels;
    j["in_channels"] = p->in_channels;
    j["kernel"] = extent_json(p->kernel);
    j["stride"] = extent_json(p->stride);
    j["padding"] = extent_json(p->padding);
    j["groups"] = p->groups;
  } else if (const auto* p = std::get_if<FullyConnectedParams>(&n.params)) {
    j["out_features"] = p->out_features;
    j["in_features"] = p->in_features;
  } else if (const auto* p = std::get_if<Pool3dParams>(&n.params)) {
    j["kernel"] = extent_json(p->kernel);
    j["stride"] = extent_json(p->stride);
    j["padding"] = extent_json(p->padding);
  }
  return j;
}

}  // namespace

GraphSpec read_graph_spec(const fs::path& manifest_path, const fs::path& weights_path) {
  const json m = parse_json(read_text(manifest_path), manifest_path);
  if (!m.is_object() || !m.contains("input_shape") || !m.contains("output") || !m.contains("nodes") ||
      !m["nodes"].is_array() || !m["output"].is_string()) {
    throw ModelFormatError("manifest needs \"input_shape\", \"output\" and a \"nodes\" array");
  }
  GraphSpec spec;
  spec.input_shape = parse_shape(m["input_shape"], std::string(kGraphInputId), "input_shape");
  spec.output_id = m["output"].get<std::string>();

  struct PendingBlobs {
    std::optional<BlobRef> weight, bias;
  };
  std::vector<PendingBlobs> blobs;
  std::size_t needed = 0;
  for (const auto& jn : m["nodes"]) {
    if (!jn.is_object() || !jn.contains("id") || !jn["id"].is_string()) {
      throw ModelFormatError("every node needs a string \"id\"");
    }
    LayerNode n;
    n.id = jn["id"].get<std::string>();
    if (!jn.contains("kind") || !jn["kind"].is_string()) throw ModelFormatError("missing \"kind\"", n.id);
    const auto kind_name = jn["kind"].get<std::string>();
    const auto kind = layer_kind_from_string(kind_name);
    if (!kind) throw ModelFormatError("unsupported layer kind '" + kind_name + "'", n.id);
    n.kind = *kind;
    if (jn.contains("inputs")) {
      if (!jn["inputs"].is_array()) throw ModelFormatError("\"inputs\" must be an array of ids", n.id);
      for (const auto& in : jn["inputs"]) {
        if (!in.is_string()) throw ModelFormatError("\"inputs\" must be an array of ids", n.id);
        n.inputs.push_back(in.get<std::string>());
      }
    }
    n.params = parse_params(n.kind, jn.value("params", json::object()), n.id);
    PendingBlobs b;
    if (jn.contains("weight")) b.weight = parse_blob_ref(jn["weight"], n.id, "weight");
    if (jn.contains("bias")) b.bias = parse_blob_ref(jn["bias"], n.id, "bias");
    for (const auto& r : {b.weight, b.bias}) {
      if (r) needed = std::max(needed, r->end());
    }
    blobs.push_back(std::move(b));
    spec.nodes.push_back(std::move(n));
  }

  const auto blob = read_bytes(weights_path);
  if (blob.size() < needed) {
    throw ModelFormatError("weights file truncated: expected at least " + std::to_string(needed) + " bytes, got " +
                           std::to_string(blob.size()));
  }
  for (std::size_t i = 0; i < spec.nodes.size(); ++i) {
    auto& n = spec.nodes[i];
    if (blobs[i].weight) n.weight = materialize(blob, *blobs[i].weight, n.id);
    if (blobs[i].bias) n.bias = materialize(blob, *blobs[i].bias, n.id);
  }
  return spec;
}

ModelGraph load_model_bundle(const fs::path& manifest_path, const fs::path& weights_path) {
  return ModelGraph::create(read_graph_spec(manifest_path, weights_path));
}

void write_model_bundle(const ModelGraph& g, const fs::path& manifest_path, const fs::path& weights_path) {
  std::vector<unsigned char> blob;
  ordered_json m;
  m["input_shape"] = g.input_shape();
  m["output"] = g.output_id();
  m["nodes"] = ordered_json::array();
  auto blob_ref = [&](const Tensor& t) {
    ordered_json r;
    r["offset"] = blob.size();
    r["shape"] = t.shape();
    for (double x : t.data()) append_f32_le(blob, x);
    return r;
  };
  for (const auto& n : g.nodes()) {
    ordered_json jn;
    jn["id"] = n.id;
    jn["kind"] = std::string(to_string(n.kind));
    jn["inputs"] = n.inputs;
    jn["params"] = params_json(n);
    if (n.weight) jn["weight"] = blob_ref(*n.weight);
    if (n.bias) jn["bias"] = blob_ref(*n.bias);
    m["nodes"].push_back(std::move(jn));
  }
  write_text(manifest_path, m.dump(2) + "\n");
  write_file(weights_path, blob.data(), blob.size());
}

ClipBundle load_clip(const fs::path& manifest_path, const fs::path& blob_path) {
  const json m = parse_json(read_text(manifest_path), manifest_path);
  if (!m.is_object() || !m.contains("shape")) throw ModelFormatError("clip manifest needs \"shape\"", "clip");
  const Shape shape = parse_shape(m["shape"], "clip", "shape");
  if (shape.size() != 4) throw ModelFormatError("clip shape must be C,T,H,W", "clip");

  ClipBundle clip;
  for (auto [key, dst] : {std::pair{"mean", &clip.mean}, std::pair{"std", &clip.std}}) {
    if (!m.contains(key)) continue;
    if (!m[key].is_array()) throw ModelFormatError(std::string(key) + " must be an array", "clip");
    for (const auto& v : m[key]) {
      if (!v.is_number()) throw ModelFormatError(std::string(key) + " must hold numbers", "clip");
      dst->push_back(v.get<double>());
    }
    if (!dst->empty() && dst->size() != shape[0]) {
      throw ModelFormatError(std::string(key) + " needs one entry per channel", "clip");
    }
  }

  const auto blob = read_bytes(blob_path);
  const std::size_t expected = 4 * shape_volume(shape);
  if (blob.size() != expected) {
    throw ModelFormatError("clip blob size mismatch: expected " + std::to_string(expected) + " bytes, got " +
                               std::to_string(blob.size()),
                           "clip");
  }
  std::vector<double> data(shape_volume(shape));
  for (std::size_t i = 0; i < data.size(); ++i) {
    data[i] = read_f32_le(blob.data() + 4 * i);
    if (!std::isfinite(data[i])) throw ModelFormatError("clip holds a non-finite value", "clip");
  }
  clip.tensor = Tensor(shape, std::move(data));
  return clip;
}

void write_clip(const ClipBundle& clip, const fs::path& manifest_path, const fs::path& blob_path) {
  ordered_json m;
  m["shape"] = clip.tensor.shape();
  m["mean"] = clip.mean;
  m["std"] = clip.std;
  std::vector<unsigned char> blob;
  blob.reserve(4 * clip.tensor.size());
  for (double x : clip.tensor.data()) append_f32_le(blob, x);
  write_text(manifest_path, m.dump(2) + "\n");
  write_file(blob_path, blob.data(), blob.size());
}

std::string pyramid_to_json(const PyramidGraph& pg) {
  ordered_json j;
  j["class_index"] = pg.class_index;
  j["theta"] = pg.theta;
  j["prediction_layer"] = pg.prediction_layer;
  j["depth"] = pg.depth;
  j["aggregation"] = pg.aggregation;
  j["activation_tap"] = pg.activation_tap;
  j["layers"] = ordered_json::array();
  for (const auto& l : pg.layers) j["layers"].push_back(ordered_json{{"id", l.id}, {"level", l.level}});
  j["nodes"] = ordered_json::array();
  for (const auto& n : pg.nodes) {
    j["nodes"].push_back(ordered_json{{"layer", n.ref.layer}, {"kernel", n.ref.kernel}, {"score", n.score}});
  }
  j["edges"] = ordered_json::array();
  for (const auto& e : pg.edges) {
    j["edges"].push_back(ordered_json{{"from_layer", e.from.layer},
                                      {"from_kernel", e.from.kernel},
                                      {"to_layer", e.to.layer},
                                      {"to_kernel", e.to.kernel},
                                      {"weight", e.weight}});
  }
  j["warnings"] = pg.warnings;
  return j.dump(2) + "\n";
}

PyramidGraph pyramid_from_json(const std::string& text) {
  const json j = parse_json(text, "pyramid.json");
  PyramidGraph pg;
  try {
    pg.class_index = j.at("class_index").get<std::size_t>();
    pg.theta = j.at("theta").get<double>();
    pg.prediction_layer = j.value("prediction_layer", std::string{});
    pg.depth = j.value("depth", 0);
    pg.aggregation = j.value("aggregation", std::string{});
    pg.activation_tap = j.value("activation_tap", std::string{});
    for (const auto& l : j.value("layers", json::array())) {
      pg.layers.push_back({l.at("id").get<std::string>(), l.at("level").get<int>()});
    }
    for (const auto& n : j.at("nodes")) {
      pg.nodes.push_back({{n.at("layer").get<std::string>(), n.at("kernel").get<std::size_t>()},
                          n.at("score").get<double>()});
    }
    for (const auto& e : j.at("edges")) {
      pg.edges.push_back({{e.at("from_layer").get<std::string>(), e.at("from_kernel").get<std::size_t>()},
                          {e.at("to_layer").get<std::string>(), e.at("to_kernel").get<std::size_t>()},
                          e.at("weight").get<double>()});
    }
    for (const auto& w : j.value("warnings", json::array())) pg.warnings.push_back(w.get<std::string>());
  } catch (const json::exception& e) {
    throw ModelFormatError(std::string("malformed pyramid graph: ") + e.what());
  }
  return pg;
}

namespace {

std::string dot_id(const KernelRef& r) { return "\"" + r.layer + ":" + std::to_string(r.kernel) + "\""; }

std::string fixed3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

}  // namespace

std::string pyramid_to_dot(const PyramidGraph& pg) {
  std::ostringstream os;
  os << "digraph pyramid {\n";
  os << "  rankdir=TB;\n";
  os << "  node [shape=box];\n";
  os << "  " << dot_id(pg.root()) << " [label=\"class " << pg.class_index << "\", shape=doubleoctagon];\n";
  for (std::size_t i = 0; i < pg.layers.size(); ++i) {
    const auto& layer = pg.layers[i];
    os << "  subgraph cluster_" << i << " {\n";
    os << "    label=\"" << layer.id << " (level " << layer.level << ")\";\n";
    for (const auto& n : pg.nodes) {
      if (n.ref.layer != layer.id) continue;
      os << "    " << dot_id(n.ref) << " [label=\"" << n.ref.kernel << "\\n" << fixed3(n.score) << "\"];\n";
    }
    os << "  }\n";
  }
  for (const auto& e : pg.edges) {
    os << "  " << dot_id(e.from) << " -> " << dot_id(e.to) << " [label=\"" << fixed3(e.weight) << "\"];\n";
  }
  os << "}\n";
  return os.str();
}

void write_pyramid_graph(const PyramidGraph& pg, const fs::path& json_path, const std::optional<fs::path>& dot_path) {
  write_text(json_path, pyramid_to_json(pg));
  if (dot_path) write_text(*dot_path, pyramid_to_dot(pg));
}

PyramidGraph read_pyramid_graph(const fs::path& json_path) { return pyramid_from_json(read_text(json_path)); }

}  // namespace cfp
