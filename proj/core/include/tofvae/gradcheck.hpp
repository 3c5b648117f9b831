#pragma once

#include <functional>
#include <string>
#include <vector>

#include "tofvae/rng.hpp"
#include "tofvae/tape.hpp"

namespace tofvae {

// Builds the scalar under test from leaves already on the tape, one leaf per
// input in order. Must be deterministic: repeated invocations with the same
// values produce the same graph (internal randomness must be self-seeded).
using GradCheckFn = std::function<Tape<double>::Id(
    Tape<double>&, const std::vector<Tape<double>::Id>&)>;

// Extended-precision central difference: returns f(x + h·e) − f(x − h·e) for
// coordinate `coord` of input `input_index`, with the subtraction performed
// before any rounding to double. Rescues coordinates whose gradient is orders
// of magnitude below the forward value, where double-precision evaluation
// noise swamps the difference at every usable step.
using DeltaOracle = std::function<double(const std::vector<Tensor<double>>&,
                                         size_t input_index, int64_t coord,
                                         double h)>;

struct GradCheckOptions {
  double step = 1e-5;
  int64_t max_coords_per_input = 0;  // 0 checks every coordinate
  uint64_t subsample_seed = 0;
  // When > 0, a coordinate whose error at `step` exceeds this retries a
  // ladder of nearby steps and keeps its best error. Central differences
  // trade truncation (grows with h) against rounding (shrinks with h), so
  // the optimal h is coordinate-dependent; a genuinely wrong gradient stays
  // wrong at every step and is still caught.
  double refine_threshold = 0;
  DeltaOracle delta_oracle;  // optional, consulted only during refinement
};

struct GradCheckResult {
  double max_rel_err = 0;
  int64_t coords_checked = 0;
};

// Central differences (f(x+h)-f(x-h))/2h per coordinate against the tape
// gradient; relative error uses denominator max(|analytic|, |numeric|, 1e-8).
GradCheckResult grad_check(const GradCheckFn& fn,
                           const std::vector<Tensor<double>>& inputs,
                           const GradCheckOptions& opts = {});

Tensor<double> random_tensor(const Shape4& shape, rng::Prng& prng,
                             double lo = -1.0, double hi = 1.0);

struct GradCheckReport {
  std::string op;
  double max_rel_err = 0;
  double tolerance = 0;
  int64_t coords_checked = 0;
  bool passed = false;
};

// Every differentiable op plus the end-to-end objectives, each over `seeds`
// seeds; reports the worst error seen. include_model adds the full-network
// objective checks (the slow entries).
std::vector<GradCheckReport> run_gradcheck_suite(int seeds = 3,
                                                 bool include_model = true);

}  // namespace tofvae
