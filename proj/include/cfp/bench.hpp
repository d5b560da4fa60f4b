#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "cfp/backstep.hpp"
#include "cfp/inference.hpp"
#include "cfp/model.hpp"

namespace cfp {

struct BenchOptions {
  std::string name = "model";
  BackstepConfig backstep;
  int repeats = 5;     // at least 3
  bool naive = false;  // also time the local-loop route

  void validate() const;
};

struct BenchRow {
  std::string name;
  std::size_t parameters = 0;
  double flops = 0.0;        // forward pass, 2 per multiply-add
  double backstep_ms = 0.0;  // median over repeats
  int depth = 0;
  double theta = 0.0;
  std::optional<double> naive_ms;
  std::optional<double> speedup;  // naive_ms / backstep_ms
  std::optional<bool> naive_selection_matches;
  double theoretical_ratio = 0.0;  // (D*H*W) / (Fd*Fh*Fw) at the level-1 convolution
  std::size_t repeats = 0;
};

std::size_t parameter_count(const ModelGraph& g);
double flop_estimate(const ModelGraph& g);

/// (D*H*W) / (Fd*Fh*Fw) for the activation entering the convolution closest
/// to the prediction layer, or 0 when the model has no convolution.
double theoretical_ratio(const ModelGraph& g);
double theoretical_ratio(const Extent3& activation, const Extent3& kernel);

/// Times only the back-step; `store` must hold a completed forward pass.
/// The timed region is single-threaded.
BenchRow run_bench(const ModelGraph& g, const ActivationStore& store, const BenchOptions& opts);

/// "name | 22.70 GFLOPS | 24.43 ms | 3 | 0.6"
std::string format_bench_row(const BenchRow& row);
/// Header, rows and, where timed, the naive comparison lines.
std::string format_bench_table(const std::vector<BenchRow>& rows);
/// One JSON object, no trailing newline.
std::string bench_row_to_json(const BenchRow& row);

}  // namespace cfp
