#include "cfp/cli.hpp"

#include <CLI11.hpp>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <sstream>

#include "cfp/bench.hpp"
#include "cfp/error.hpp"
#include "cfp/model_io.hpp"
#include "cfp/viz.hpp"

namespace cfp {

namespace {

struct BundleArgs {
  std::string model, weights, clip;
};

struct BackstepArgs {
  double theta = 0.6;
  int depth = 3;
  std::optional<std::size_t> class_index;
  std::string aggregation = "product";
  std::string tap = "post";
  std::vector<std::string> theta_overrides;  // layer=value
};

struct RenderArgs {
  std::string pyramid, mode = "layer", layer, out, interpolation = "cubic";
  std::optional<std::size_t> kernel;
  double alpha = 0.5;
  int fps = 8;
  bool gif = false;
};

struct BenchArgs {
  std::string name = "model", out;
  int repeats = 5;
  bool naive = false;
};

void add_bundle_flags(CLI::App* cmd, BundleArgs& a, bool need_clip) {
  cmd->add_option("--model", a.model, "Model manifest (model.json)")->required();
  cmd->add_option("--weights", a.weights, "Weight blob (weights.bin)")->required();
  auto* clip = cmd->add_option("--clip", a.clip, "Clip manifest (clip.json); clip.bin is read beside it");
  if (need_clip) clip->required();
}

void add_backstep_flags(CLI::App* cmd, BackstepArgs& a) {
  cmd->add_option("--theta", a.theta, "Class gate threshold in (0, 1)");
  cmd->add_option("--depth", a.depth, "Selection levels; 1 keeps only the class seed");
  cmd->add_option("--class", a.class_index, "Class to explain (default: predicted class)");
  cmd->add_option("--aggregation", a.aggregation, "Kernel map aggregation")->check(CLI::IsMember({"product", "sum_mean"}));
  cmd->add_option("--tap", a.tap, "Activation read for pooling")->check(CLI::IsMember({"post", "pre"}));
  cmd->add_option("--theta-layer", a.theta_overrides, "Per-layer threshold as layer=value (repeatable)");
}

std::filesystem::path clip_blob(const std::filesystem::path& manifest) {
  auto blob = manifest;
  return blob.replace_extension(".bin");
}

BackstepConfig make_config(const BackstepArgs& a) {
  BackstepConfig cfg;
  cfg.theta = a.theta;
  cfg.depth = a.depth;
  cfg.class_index = a.class_index;
  cfg.aggregation = *aggregation_from_string(a.aggregation);
  cfg.activation_tap = a.tap == "pre" ? ActivationTap::pre_nonlinearity : ActivationTap::post_nonlinearity;
  for (const auto& o : a.theta_overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--theta-layer expects layer=value, got '" + o + "'");
    try {
      std::size_t used = 0;
      const std::string num = o.substr(eq + 1);
      const double v = std::stod(num, &used);
      if (used != num.size()) throw std::invalid_argument(num);
      cfg.theta_overrides[o.substr(0, eq)] = v;
    } catch (const std::logic_error&) {
      throw ConfigError("--theta-layer value in '" + o + "' is not a number");
    }
  }
  cfg.validate();
  return cfg;
}

struct Loaded {
  ModelGraph graph;
  ClipBundle clip;
  ForwardResult forward;
};

Loaded load_and_forward(const BundleArgs& a) {
  ModelGraph g = load_model_bundle(a.model, a.weights);
  ClipBundle clip = load_clip(a.clip, clip_blob(a.clip));
  ForwardResult fwd = forward_all(g, clip, ForwardOptions{threads_from_env()});
  return {std::move(g), std::move(clip), std::move(fwd)};
}

int cmd_validate(const BundleArgs& a, std::ostream& out) {
  const GraphSpec spec = read_graph_spec(a.model, a.weights);
  const ValidationReport report = validate_graph(spec);
  if (!report.ok()) {
    const auto& f = report.findings.front();
    throw ModelFormatError(f.message, f.node_id);
  }
  out << "model ok: " << spec.nodes.size() << " nodes, output '" << spec.output_id << "' "
      << shape_to_string(report.shapes.back().second) << "\n";
  if (!a.clip.empty()) {
    const ClipBundle clip = load_clip(a.clip, clip_blob(a.clip));
    if (clip.tensor.shape() != spec.input_shape) {
      throw InvalidInputError("clip shape " + shape_to_string(clip.tensor.shape()) + " does not match model input " +
                              shape_to_string(spec.input_shape));
    }
    out << "clip ok: " << shape_to_string(clip.tensor.shape()) << "\n";
  }
  return kExitOk;
}

int cmd_backstep(const BundleArgs& b, const BackstepArgs& a, const std::string& out_path,
                 const std::string& dot_path, std::ostream& out, std::ostream& err) {
  const BackstepConfig cfg = make_config(a);
  const Loaded l = load_and_forward(b);
  const BackstepOutput res = build_pyramid_traced(l.graph, l.forward.store, cfg);
  const PyramidGraph& pg = res.pyramid;
  std::optional<std::filesystem::path> dot;
  if (!dot_path.empty()) dot = dot_path;
  write_pyramid_graph(pg, out_path, dot);
  const auto sm = softmax_argmax(l.forward.logits);
  char prob[32];
  std::snprintf(prob, sizeof prob, "%.4f", sm.probs[pg.class_index]);
  out << "predicted class " << sm.class_index << ", explained class " << pg.class_index << " (p=" << prob << ")\n"
      << "pyramid: " << pg.layers.size() << " layers, " << pg.nodes.size() << " nodes, " << pg.edges.size()
      << " edges\n";
  for (const auto& w : pg.warnings) err << "warning: " << w << "\n";
  return kExitOk;
}

std::string list_nodes(const PyramidGraph& pg) {
  std::string s = pg.root().layer + ":" + std::to_string(pg.root().kernel) + " (class)";
  for (const auto& n : pg.nodes) s += ", " + n.ref.layer + ":" + std::to_string(n.ref.kernel);
  return s;
}

void check_pyramid_matches(const PyramidGraph& pg, const ModelGraph& g) {
  if (pg.prediction_layer != g.prediction_layer().id) {
    throw InvalidInputError("pyramid was built for prediction layer '" + pg.prediction_layer + "', model has '" +
                            g.prediction_layer().id + "'");
  }
  for (const auto& n : pg.nodes) {
    const LayerNode* node = g.find(n.ref.layer);
    if (!node || node->kind != LayerKind::conv3d || n.ref.kernel >= node->conv().out_channels) {
      throw InvalidInputError("pyramid node " + n.ref.layer + ":" + std::to_string(n.ref.kernel) +
                              " does not exist in the model");
    }
  }
}

int cmd_render(const BundleArgs& b, const RenderArgs& a, std::ostream& out) {
  OverlayStyle style;
  style.alpha = a.alpha;
  style.output_fps = a.fps;
  style.validate();
  const PyramidGraph pg = read_pyramid_graph(a.pyramid);
  const Loaded l = load_and_forward(b);
  check_pyramid_matches(pg, l.graph);
  const ActivationTap tap =
      pg.activation_tap == "pre_nonlinearity" ? ActivationTap::pre_nonlinearity : ActivationTap::post_nonlinearity;

  ActivationVolume map;
  if (a.mode == "kernel") {
    if (a.layer.empty() || !a.kernel) throw ConfigError("kernel mode needs --layer and --kernel");
    const KernelRef ref{a.layer, *a.kernel};
    if (ref != pg.root() && !pg.find_node(ref)) {
      throw InvalidInputError("node " + a.layer + ":" + std::to_string(*a.kernel) +
                              " is not in the pyramid; available nodes: " + list_nodes(pg));
    }
    map = feature_wise_map(pg, l.graph, l.forward.store, ref, tap);
  } else {
    std::string layer = a.layer;
    if (layer.empty()) {
      if (pg.layers.empty()) throw InvalidInputError("the pyramid has no layers to render");
      layer = pg.layers.back().id;  // deepest selected layer
    }
    if (pg.nodes_in_layer(layer).empty()) {
      std::string names;
      for (const auto& pl : pg.layers) names += (names.empty() ? "" : ", ") + pl.id;
      throw InvalidInputError("layer '" + layer + "' is not in the pyramid; available layers: " + names);
    }
    map = layer_wise_map(pg, l.graph, l.forward.store, layer, tap);
  }
  const auto mode = a.interpolation == "polynomial" ? TemporalInterpolation::local_polynomial
                                                    : TemporalInterpolation::natural_cubic;
  const auto up = spline_upsample(map, l.clip.frames(), l.clip.height(), l.clip.width(), mode);
  const auto files = render_overlay(l.clip, up, style, a.out, a.gif);
  out << "rendered " << map.layer << " (" << map.tag << "): " << files.size() << " files in " << a.out << "\n";
  return kExitOk;
}

int cmd_bench(const BundleArgs& b, const BackstepArgs& a, const BenchArgs& ba, std::ostream& out) {
  BenchOptions opts;
  opts.name = ba.name;
  opts.repeats = ba.repeats;
  opts.naive = ba.naive;
  opts.backstep = make_config(a);
  opts.validate();
  const Loaded l = load_and_forward(b);
  const BenchRow row = run_bench(l.graph, l.forward.store, opts);
  out << format_bench_table({row});
  if (!ba.out.empty()) {
    std::ofstream f(ba.out);
    if (!f) throw IoError("cannot open '" + ba.out + "'");
    f << bench_row_to_json(row) << "\n";
    if (!f) throw IoError("writing '" + ba.out + "' failed");
  }
  return kExitOk;
}

void report(std::ostream& err, const char* kind, const std::string& message, int code) {
  nlohmann::ordered_json j;
  j["error"] = kind;
  j["message"] = message;
  j["exit_code"] = code;
  err << j.dump() << "\n";
}

int exit_code_for(const Error& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const ModelFormatError*>(&e) ||
      dynamic_cast<const InvalidInputError*>(&e)) {
    return kExitValidation;
  }
  return kExitRuntime;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Class feature pyramids for 3D convolutional networks"};
  app.require_subcommand(1);

  BundleArgs bundle;
  BackstepArgs bs;
  RenderArgs ra;
  BenchArgs ba;
  std::string pyramid_out, dot_out;

  auto* validate = app.add_subcommand("validate", "Check a model bundle (and optionally a clip)");
  add_bundle_flags(validate, bundle, false);

  auto* backstep = app.add_subcommand("backstep", "Build the class feature pyramid for a clip");
  add_bundle_flags(backstep, bundle, true);
  add_backstep_flags(backstep, bs);
  backstep->add_option("--out", pyramid_out, "Output pyramid.json")->required();
  backstep->add_option("--dot", dot_out, "Also write a Graphviz file");

  auto* render = app.add_subcommand("render", "Overlay a pyramid map on the clip frames");
  add_bundle_flags(render, bundle, true);
  render->add_option("--pyramid", ra.pyramid, "pyramid.json from backstep")->required();
  render->add_option("--mode", ra.mode, "kernel: children of one node; layer: one whole layer")
      ->check(CLI::IsMember({"kernel", "layer"}));
  render->add_option("--layer", ra.layer, "Layer id (layer mode default: deepest pyramid layer)");
  render->add_option("--kernel", ra.kernel, "Kernel index (kernel mode)");
  render->add_option("--alpha", ra.alpha, "Overlay opacity in [0, 1]");
  render->add_option("--out", ra.out, "Output directory")->required();
  render->add_flag("--gif", ra.gif, "Also write overlay.gif");
  render->add_option("--fps", ra.fps, "Animation frame rate");
  render->add_option("--interpolation", ra.interpolation, "Temporal upsampling")
      ->check(CLI::IsMember({"cubic", "polynomial"}));

  auto* bench = app.add_subcommand("bench", "Time the back-step");
  add_bundle_flags(bench, bundle, true);
  add_backstep_flags(bench, bs);
  bench->add_option("--repeats", ba.repeats, "Timed repeats (at least 3); the median is reported");
  bench->add_flag("--naive", ba.naive, "Also time the per-location loop implementation");
  bench->add_option("--name", ba.name, "Model name for the report");
  bench->add_option("--out", ba.out, "Write the report row as JSON lines");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    report(err, "usage", e.what(), kExitValidation);
    return kExitValidation;
  }

  try {
    if (validate->parsed()) return cmd_validate(bundle, out);
    if (backstep->parsed()) return cmd_backstep(bundle, bs, pyramid_out, dot_out, out, err);
    if (render->parsed()) return cmd_render(bundle, ra, out);
    return cmd_bench(bundle, bs, ba, out);
  } catch (const Error& e) {
    const int code = exit_code_for(e);
    report(err, e.kind(), e.what(), code);
    return code;
  } catch (const std::exception& e) {
    report(err, "runtime", e.what(), kExitRuntime);
    return kExitRuntime;
  }
}

}  // namespace cfp
