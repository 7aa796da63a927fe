#pragma once

// Central finite differences against the analytic gradients.
// Per array: ||analytic - numeric||_inf / max(||analytic||_inf, ||numeric||_inf),
// taken as 0 when both norms are 0.

#include <string>
#include <vector>

#include "sentinel/nn/model.hpp"

namespace sentinel::nn {

struct ArrayError {
  std::string name;
  double rel_error = 0;
  double scale = 0;  // max of the two inf-norms
};

struct GradCheckReport {
  std::vector<ArrayError> arrays;
  double max_rel_error = 0;
};

GradCheckReport check_mlm_gradients(const Model& model, const MaskPlan& plan, double h = 1e-5);
GradCheckReport check_cls_gradients(const Model& model, const Batch& batch,
                                    std::span<const ThreatClass> labels, double h = 1e-5);

}  // namespace sentinel::nn
