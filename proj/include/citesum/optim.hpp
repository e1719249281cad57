#pragma once

#include <cmath>

#include <Eigen/Dense>

namespace citesum::optim {

using Matrix = Eigen::MatrixXd;

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One Adam step with bias correction; `t` is the 1-based step count after
/// this update. Moments are caller-owned so they can live in checkpoints.
inline void adam_update(Matrix& value, const Matrix& grad, Matrix& m, Matrix& v,
                        std::uint64_t t, double lr, const AdamConfig& cfg = {}) {
  m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad;
  v = cfg.beta2 * v + (1.0 - cfg.beta2) * grad.cwiseProduct(grad);
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  const double step = lr * std::sqrt(bc2) / bc1;
  value.array() -= step * (m.array() / (v.array().sqrt() + cfg.eps * std::sqrt(bc2)));
}

/// Linear warmup to base_lr at `warmup`, then inverse-square-root decay:
/// lr(s) = base * min(s^-1/2, s * warmup^-3/2), with lr(0) = 0.
inline double schedule_lr(double base_lr, std::uint64_t warmup, std::uint64_t step) {
  if (step == 0) return 0.0;
  const double s = static_cast<double>(step);
  const double w = static_cast<double>(warmup == 0 ? 1 : warmup);
  return base_lr * std::min(1.0 / std::sqrt(s), s / (w * std::sqrt(w)));
}

}  // namespace citesum::optim
