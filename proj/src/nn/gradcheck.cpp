#include "sentinel/nn/gradcheck.hpp"

#include <algorithm>

namespace sentinel::nn {

namespace {

template <typename LossFn>
GradCheckReport compare(const Model& model, const ParamBundle& analytic, LossFn&& loss, double h) {
  GradCheckReport report;
  Model probe = model;
  for (std::size_t i = 0; i < probe.params.size(); ++i) {
    Mat& w = probe.params.value(i);
    Mat numeric(w.rows(), w.cols());
    for (Eigen::Index k = 0; k < w.size(); ++k) {
      const double saved = w.data()[k];
      w.data()[k] = saved + h;
      const double up = loss(probe);
      w.data()[k] = saved - h;
      const double down = loss(probe);
      w.data()[k] = saved;
      numeric.data()[k] = (up - down) / (2 * h);
    }
    const Mat& a = analytic.value(i);
    const double scale = std::max(a.lpNorm<Eigen::Infinity>(), numeric.lpNorm<Eigen::Infinity>());
    const double err = scale == 0 ? 0.0 : (a - numeric).lpNorm<Eigen::Infinity>() / scale;
    report.arrays.push_back({probe.params.name(i), err, scale});
    report.max_rel_error = std::max(report.max_rel_error, err);
  }
  return report;
}

}  // namespace

GradCheckReport check_mlm_gradients(const Model& model, const MaskPlan& plan, double h) {
  const std::vector<bool> none(model.params.size(), false);
  const Gradients g = backward_mlm(model, plan, none);
  return compare(model, g.grads, [&](const Model& m) { return mlm_loss(m, plan).loss; }, h);
}

GradCheckReport check_cls_gradients(const Model& model, const Batch& batch, std::span<const ThreatClass> labels,
                                    double h) {
  const std::vector<bool> none(model.params.size(), false);
  const Gradients g = backward_cls(model, batch, labels, none);
  return compare(model, g.grads, [&](const Model& m) { return cls_loss(m, batch, labels).loss; }, h);
}

}  // namespace sentinel::nn
