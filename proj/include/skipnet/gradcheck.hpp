#pragma once

// Finite-difference gradient suites over every differentiable op, every
// block variant and a tiny end-to-end model with CTC loss.

#include <string>
#include <vector>

#include "skipnet/model.hpp"

namespace skipnet {

struct GradSuiteResult {
  std::string name;
  double max_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

struct GradSuiteOptions {
  double eps = 1e-5;
  double tolerance = 1e-4;
  // Evaluation points with a relu/hardtanh input closer than this to a kink
  // are re-drawn.
  double kink_margin = 1e-3;
  unsigned seeds = 5;
};

// The tiny model used by the end-to-end check: F=3, C=4, |A|=2.
ModelConfig tiny_model_config(ConnectivityKind kind, std::uint64_t seed = 1);

std::vector<GradSuiteResult> run_op_gradient_suites(const GradSuiteOptions& options = {});
std::vector<GradSuiteResult> run_block_gradient_suites(const GradSuiteOptions& options = {});
// Full network + CTC loss on T=12 frames, one result per connectivity kind.
std::vector<GradSuiteResult> run_model_gradient_suites(const GradSuiteOptions& options = {});

std::vector<GradSuiteResult> run_gradient_suites(const GradSuiteOptions& options = {});

}  // namespace skipnet
