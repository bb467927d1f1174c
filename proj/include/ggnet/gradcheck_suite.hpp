#pragma once

#include <string>
#include <vector>

namespace ggnet {

struct GradCheckResult {
  std::string name;
  double max_rel_error = 0.0;
};

/// Gradient verification across the differentiable surface: every tensor
/// primitive, the GRU cell, the learned adjacencies, each GgNet block kind,
/// every RNN variant, and the full GgNet training loss with every parameter
/// probed by central differences. Deterministic; runs in seconds.
std::vector<GradCheckResult> run_gradient_suite();

/// Largest error across the suite.
double gradient_suite_worst(const std::vector<GradCheckResult>& results);

}  // namespace ggnet
