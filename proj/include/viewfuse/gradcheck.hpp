#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "viewfuse/tensor.hpp"

namespace viewfuse {

using NamedLeaf = std::pair<std::string, Tensor>;

struct GradCheckOptions {
  double h = 1e-4;
  double tolerance = 1e-4;
  // 0 checks every coordinate; otherwise a seeded random subset per leaf.
  std::size_t max_coords_per_leaf = 0;
  std::uint64_t seed = 1;
  // Skip coordinates whose +h/-h evaluations put some relu input on
  // different sides of zero; central differences are invalid there.
  bool skip_kinks = true;
  // Fail when more than this fraction of checked coordinates is skipped.
  double max_kink_fraction = 0.02;
  // Fourth-order stencil (f(-2h), f(-h), f(h), f(2h)) instead of the central
  // difference; for losses that are strongly curved on the scale of h.
  bool five_point = false;
  // Number of times a kinked coordinate is retried with a tenfold smaller step.
  int kink_retries = 2;
  // Relative errors are only meaningful above the resolution of the central
  // difference, about eps * |loss| / h. When set, the denominator floor is
  // raised to 64 * eps * |loss| / (h * tolerance), so a coordinate at that
  // floor may differ by at most the estimated rounding noise.
  bool resolution_floor = true;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  bool pass = true;
  std::string worst_leaf;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coords_checked = 0;
  std::size_t kinks_skipped = 0;
  double denominator_floor = 0.0;
  // Coordinates whose gradient magnitude lies below denominator_floor.
  std::size_t below_floor = 0;
};

// Compares the analytic gradient of the scalar built by f with central
// differences, perturbing the leaves in place. f must rebuild its graph from
// the current leaf values on every call and be deterministic.
// Relative error is |a - n| / max(|a|, |n|, floor), floor >= 1e-8.
GradCheckReport grad_check(const std::function<Tensor()>& f,
                           const std::vector<NamedLeaf>& leaves,
                           const GradCheckOptions& opts = {});

// Throws NumericError naming the first node (in graph order from the root)
// holding a non-finite value.
void require_finite_graph(const Tensor& root);

}  // namespace viewfuse
