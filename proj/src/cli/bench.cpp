#include "cfp/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <json.hpp>
#include <string>

#include "cfp/error.hpp"

namespace cfp {

namespace {

std::string printf_string(const char* fmt, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

std::string format_flops(double flops) {
  static constexpr std::pair<double, const char*> kUnits[] = {{1e12, "TFLOPS"}, {1e9, "GFLOPS"}, {1e6, "MFLOPS"},
                                                              {1e3, "KFLOPS"}};
  for (const auto& [scale, unit] : kUnits) {
    if (flops >= scale) return printf_string("%.2f", flops / scale) + " " + unit;
  }
  return printf_string("%.2f", flops) + " FLOPS";
}

template <class F>
double median_ms(int repeats, F&& run) {
  std::vector<double> times;
  times.reserve(static_cast<std::size_t>(repeats));
  for (int i = 0; i < repeats; ++i) {
    const auto start = std::chrono::steady_clock::now();
    run();
    const auto stop = std::chrono::steady_clock::now();
    times.push_back(std::chrono::duration<double, std::milli>(stop - start).count());
  }
  std::sort(times.begin(), times.end());
  const std::size_t n = times.size();
  const double m = n % 2 ? times[n / 2] : 0.5 * (times[n / 2 - 1] + times[n / 2]);
  // A clock tick coarser than the work would report zero.
  return std::max(m, 1e-6);
}

std::vector<KernelRef> selected_refs(const PyramidGraph& pg) {
  std::vector<KernelRef> refs;
  for (const auto& n : pg.nodes) refs.push_back(n.ref);
  return refs;
}

}  // namespace

void BenchOptions::validate() const {
  if (repeats < 3) throw ConfigError("repeats must be at least 3, got " + std::to_string(repeats));
  backstep.validate();
}

std::size_t parameter_count(const ModelGraph& g) {
  std::size_t n = 0;
  for (const auto& node : g.nodes()) {
    if (node.weight) n += node.weight->size();
    if (node.bias) n += node.bias->size();
  }
  return n;
}

double flop_estimate(const ModelGraph& g) {
  double flops = 0.0;
  for (const auto& node : g.nodes()) {
    if (node.kind == LayerKind::conv3d) {
      const auto& p = node.conv();
      const Shape& out = g.shape_of(node.id);
      const double per_output = static_cast<double>(p.in_channels_per_group() * p.kernel[0] * p.kernel[1] * p.kernel[2]);
      flops += 2.0 * per_output * static_cast<double>(shape_volume(out));
    } else if (node.kind == LayerKind::fully_connected) {
      flops += 2.0 * static_cast<double>(node.fc().in_features * node.fc().out_features);
    }
  }
  return flops;
}

double theoretical_ratio(const Extent3& activation, const Extent3& kernel) {
  const double a = static_cast<double>(activation[0] * activation[1] * activation[2]);
  const double k = static_cast<double>(kernel[0] * kernel[1] * kernel[2]);
  return a / k;
}

double theoretical_ratio(const ModelGraph& g) {
  // Among several level-1 convolutions the one with the largest kernel
  // dominates the naive cost.
  const auto levels = convolution_levels(g);
  const LayerNode* best = nullptr;
  auto volume = [](const LayerNode& n) { return n.conv().kernel[0] * n.conv().kernel[1] * n.conv().kernel[2]; };
  for (const auto& node : g.nodes()) {
    auto it = levels.find(node.id);
    if (it == levels.end() || it->second != 1) continue;
    if (!best || volume(node) > volume(*best)) best = &node;
  }
  if (!best) return 0.0;
  const Shape& in = g.shape_of(best->inputs.front());
  return theoretical_ratio(Extent3{in[1], in[2], in[3]}, best->conv().kernel);
}

BenchRow run_bench(const ModelGraph& g, const ActivationStore& store, const BenchOptions& opts) {
  opts.validate();
  BenchRow row;
  row.name = opts.name;
  row.parameters = parameter_count(g);
  row.flops = flop_estimate(g);
  row.depth = opts.backstep.depth;
  row.theta = opts.backstep.theta;
  row.theoretical_ratio = theoretical_ratio(g);
  row.repeats = static_cast<std::size_t>(opts.repeats);

  BackstepConfig vec = opts.backstep;
  vec.pooling = PoolingRoute::vectorized;
  PyramidGraph fast;
  row.backstep_ms = median_ms(opts.repeats, [&] { fast = build_pyramid(g, store, vec); });

  if (opts.naive) {
    BackstepConfig slow_cfg = opts.backstep;
    slow_cfg.pooling = PoolingRoute::local_loop;
    PyramidGraph slow;
    row.naive_ms = median_ms(opts.repeats, [&] { slow = build_pyramid(g, store, slow_cfg); });
    row.speedup = *row.naive_ms / row.backstep_ms;
    row.naive_selection_matches = selected_refs(fast) == selected_refs(slow);
  }
  return row;
}

std::string format_bench_row(const BenchRow& row) {
  return row.name + " | " + format_flops(row.flops) + " | " + printf_string("%.2f", row.backstep_ms) + " ms | " +
         std::to_string(row.depth) + " | " + printf_string("%g", row.theta);
}

std::string format_bench_table(const std::vector<BenchRow>& rows) {
  std::string out = "Network | FLOPs | Back-step time | Depth | theta\n";
  for (const auto& r : rows) out += format_bench_row(r) + "\n";
  for (const auto& r : rows) {
    out += r.name + ": " + std::to_string(r.parameters) + " parameters, theoretical ratio " +
           printf_string("%.1f", r.theoretical_ratio);
    if (r.naive_ms) {
      out += ", naive " + printf_string("%.2f", *r.naive_ms) + " ms, speedup " + printf_string("%.1f", *r.speedup) +
             "x, selections " + (*r.naive_selection_matches ? "identical" : "DIFFER");
    }
    out += "\n";
  }
  return out;
}

std::string bench_row_to_json(const BenchRow& row) {
  nlohmann::ordered_json j;
  j["name"] = row.name;
  j["parameters"] = row.parameters;
  j["flops"] = row.flops;
  j["backstep_ms"] = row.backstep_ms;
  j["depth"] = row.depth;
  j["theta"] = row.theta;
  j["repeats"] = row.repeats;
  j["theoretical_ratio"] = row.theoretical_ratio;
  j["naive_ms"] = row.naive_ms ? nlohmann::ordered_json(*row.naive_ms) : nlohmann::ordered_json(nullptr);
  j["speedup"] = row.speedup ? nlohmann::ordered_json(*row.speedup) : nlohmann::ordered_json(nullptr);
  j["naive_selection_matches"] = row.naive_selection_matches
                                     ? nlohmann::ordered_json(*row.naive_selection_matches)
                                     : nlohmann::ordered_json(nullptr);
  return j.dump();
}

}  // namespace cfp
