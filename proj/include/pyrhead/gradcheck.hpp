#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pyrhead/tensor.hpp"

namespace pyrhead {

struct GradCheckOptions {
  std::uint64_t seed = 1;
  double h = 1e-5;
  /// Denominator floor of the relative error; keeps components whose true
  /// gradient is ~0 from turning finite-difference rounding into failures.
  double floor = 1e-4;
  /// Parameter entries probed per tensor in the full-head check.
  std::size_t head_samples = 4;
  double tolerance = 1e-4;
};

struct GradCheckGroup {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t entries = 0;
  /// Probes whose step straddled a kink (ReLU, clamp) and were redone at h / 100.
  std::size_t retried = 0;
  bool passed(double tol) const { return max_rel_error < tol; }
};

/// |a - n| / max(|a|, |n|, floor).
double gradient_rel_error(double analytic, double numeric, double floor);
double max_gradient_rel_error(const num::Tensor& analytic, const num::Tensor& numeric, double floor);

/// Reverse mode against central differences for every op, every operator
/// (parameters, neighbor features and, for the soft-radius variant, the
/// radius), the radius head, the context embedding and the full head loss.
/// Soft-radius instances keep every neighbor at least 2 tau from r + 5 tau,
/// so membership never changes under a probe.
std::vector<GradCheckGroup> run_gradcheck(const GradCheckOptions& opts);

}  // namespace pyrhead
