#include "viewfuse/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <unordered_set>

#include "viewfuse/error.hpp"

namespace viewfuse {

void require_finite_graph(const Tensor& root) {
  std::vector<const detail::Node*> stack{&root.node()};
  std::unordered_set<const detail::Node*> seen;
  while (!stack.empty()) {
    const detail::Node* n = stack.back();
    stack.pop_back();
    if (!seen.insert(n).second) continue;
    for (double v : n->value) {
      if (!std::isfinite(v)) {
        throw NumericError("non-finite value in node '" + std::string(n->op) +
                           "' of shape " + shape_str(n->shape));
      }
    }
    for (const auto& p : n->parents) stack.push_back(p.get());
  }
}

namespace {

// Sign pattern of every relu input in the graph, in a fixed traversal order.
std::vector<char> relu_signs(const Tensor& root) {
  std::vector<char> out;
  std::vector<const detail::Node*> stack{&root.node()};
  std::unordered_set<const detail::Node*> seen;
  while (!stack.empty()) {
    const detail::Node* n = stack.back();
    stack.pop_back();
    if (!seen.insert(n).second) continue;
    if (n->op == "relu") {
      for (double v : n->parents[0]->value) out.push_back(v > 0.0);
    }
    for (const auto& p : n->parents) stack.push_back(p.get());
  }
  return out;
}

}  // namespace

GradCheckReport grad_check(const std::function<Tensor()>& f,
                           const std::vector<NamedLeaf>& leaves,
                           const GradCheckOptions& opts) {
  for (const auto& [name, leaf] : leaves) {
    if (!leaf.requires_grad()) {
      throw GraphError("grad_check: leaf '" + name + "' does not require grad");
    }
    for (double v : leaf.values()) {
      if (!std::isfinite(v)) {
        throw NumericError("grad_check: leaf '" + name + "' is not finite");
      }
    }
  }
  for (const auto& [name, leaf] : leaves) leaf.node().grad.clear();

  const Tensor loss = f();
  require_finite_graph(loss);
  loss.backward();

  std::vector<std::vector<double>> analytic;
  for (const auto& [name, leaf] : leaves) {
    const auto g = leaf.grad();
    analytic.emplace_back(leaf.numel(), 0.0);
    std::copy(g.begin(), g.end(), analytic.back().begin());
  }

  GradCheckReport report;
  const double loss_mag = std::abs(loss.item());
  auto floor_for = [&](double h) {
    if (!opts.resolution_floor) return 1e-8;
    const double noise = 64.0 * std::numeric_limits<double>::epsilon() * loss_mag / h;
    return std::max(1e-8, noise / opts.tolerance);
  };
  report.denominator_floor = floor_for(opts.h);
  std::mt19937_64 rng(opts.seed);
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    Tensor leaf = leaves[li].second;
    std::vector<std::size_t> coords(leaf.numel());
    std::iota(coords.begin(), coords.end(), 0);
    if (opts.max_coords_per_leaf > 0 && coords.size() > opts.max_coords_per_leaf) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(opts.max_coords_per_leaf);
      std::sort(coords.begin(), coords.end());
    }
    auto values = leaf.mutable_values();
    for (std::size_t idx : coords) {
      const double orig = values[idx];
      // A step that moves some relu input across zero is retried with a
      // smaller step before the coordinate is given up as a kink.
      double h = opts.h;
      double numeric = 0.0;
      bool kink = true;
      for (int attempt = 0; attempt <= (opts.skip_kinks ? opts.kink_retries : 0); ++attempt) {
        auto eval_at = [&](double x) {
          values[idx] = x;
          Tensor t = f();
          values[idx] = orig;
          if (!std::isfinite(t.item())) {
            throw NumericError("grad_check: non-finite loss while perturbing '" +
                               leaves[li].first + "'");
          }
          return t;
        };
        const Tensor up_t = eval_at(orig + h);
        const Tensor down_t = eval_at(orig - h);
        bool same = !opts.skip_kinks || relu_signs(up_t) == relu_signs(down_t);
        if (opts.five_point) {
          const Tensor up2_t = eval_at(orig + 2.0 * h);
          const Tensor down2_t = eval_at(orig - 2.0 * h);
          numeric = (8.0 * (up_t.item() - down_t.item()) - (up2_t.item() - down2_t.item())) /
                    (12.0 * h);
          if (same && opts.skip_kinks) {
            const auto s = relu_signs(up_t);
            same = relu_signs(up2_t) == s && relu_signs(down2_t) == s;
          }
        } else {
          numeric = (up_t.item() - down_t.item()) / (2.0 * h);
        }
        if (same) {
          kink = false;
          break;
        }
        h *= 0.1;
      }
      if (kink) {
        ++report.kinks_skipped;
        continue;
      }
      const double floor = floor_for(h);
      const double a = analytic[li][idx];
      const double rel = std::abs(a - numeric) /
                         std::max({std::abs(a), std::abs(numeric), floor});
      ++report.coords_checked;
      if (std::max(std::abs(a), std::abs(numeric)) < floor) {
        ++report.below_floor;
      }
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_leaf = leaves[li].first;
        report.worst_index = idx;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
  }
  const std::size_t total = report.coords_checked + report.kinks_skipped;
  report.pass = report.max_rel_error < opts.tolerance &&
                static_cast<double>(report.kinks_skipped) <=
                    opts.max_kink_fraction * static_cast<double>(total);
  return report;
}

}  // namespace viewfuse
