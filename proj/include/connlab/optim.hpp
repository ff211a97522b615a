#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <variant>
#include <vector>

#include "connlab/errors.hpp"
#include "connlab/grad.hpp"
#include "connlab/model.hpp"

namespace connlab {

/// Plain gradient descent, optionally with cosine decay to 0 at total_steps.
struct GdConfig {
  double lr = 0.1;
  bool cosine = true;
  long total_steps = 10000;
};

/// Adaptive moments with decoupled weight decay.
struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
  bool cosine = true;
  long total_steps = 10000;
};

using OptimizerConfig = std::variant<GdConfig, AdamConfig>;

/// lr * 0.5 (1 + cos(pi t / T)), clamped to 0 once t >= T.
inline double cosine_lr(double base, long t, long total) {
  if (total <= 0 || t >= total) return 0.0;
  return base * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(t) / static_cast<double>(total)));
}

class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig config) : config_(std::move(config)) {}

  const OptimizerConfig& config() const noexcept { return config_; }
  long step_count() const noexcept { return step_; }

  double current_lr() const {
    return std::visit(
        [&](const auto& c) { return c.cosine ? cosine_lr(c.lr, step_, c.total_steps) : c.lr; }, config_);
  }

  /// Applies one update. Structured params are updated through (A, B) and
  /// re-materialized; nonneg params are projected back onto W >= 0.
  void step(ModelParams& params, const GradientSet& grads) {
    std::vector<Matrix*> values;
    std::vector<const Matrix*> gradients;
    if (params.is_structured()) {
      if (grads.da.size() != params.structured.size()) throw ShapeError("optimizer: missing structured grads");
      for (std::size_t l = 0; l < params.structured.size(); ++l) {
        values.push_back(&params.structured[l].a);
        gradients.push_back(&grads.da[l]);
        values.push_back(&params.structured[l].b);
        gradients.push_back(&grads.db[l]);
      }
    } else {
      if (grads.dw.size() != params.weights.size()) throw ShapeError("optimizer: gradient layer count");
      for (std::size_t l = 0; l < params.weights.size(); ++l) {
        values.push_back(&params.weights[l]);
        gradients.push_back(&grads.dw[l]);
      }
    }
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (values[i]->rows() != gradients[i]->rows() || values[i]->cols() != gradients[i]->cols()) {
        throw ShapeError("optimizer: gradient shape mismatch");
      }
    }

    const double lr = current_lr();
    if (const auto* gd = std::get_if<GdConfig>(&config_)) {
      (void)gd;
      for (std::size_t i = 0; i < values.size(); ++i) *values[i] -= lr * *gradients[i];
    } else {
      const auto& c = std::get<AdamConfig>(config_);
      if (first_.empty()) {
        for (auto* v : values) {
          first_.push_back(Matrix::Zero(v->rows(), v->cols()));
          second_.push_back(Matrix::Zero(v->rows(), v->cols()));
        }
      }
      const double t = static_cast<double>(step_ + 1);
      const double bias1 = 1.0 - std::pow(c.beta1, t);
      const double bias2 = 1.0 - std::pow(c.beta2, t);
      for (std::size_t i = 0; i < values.size(); ++i) {
        const Matrix& g = *gradients[i];
        first_[i] = c.beta1 * first_[i] + (1.0 - c.beta1) * g;
        second_[i] = c.beta2 * second_[i] + (1.0 - c.beta2) * g.cwiseProduct(g);
        *values[i] *= (1.0 - lr * c.weight_decay);
        *values[i] -= lr * ((first_[i] / bias1).array() / ((second_[i] / bias2).array().sqrt() + c.eps)).matrix();
      }
    }
    ++step_;
    sync_weights(params);
    if (params.nonneg) params = clamp_nonneg(std::move(params));
  }

  // Moment buffers, exposed for checkpointing.
  const std::vector<Matrix>& first_moments() const noexcept { return first_; }
  const std::vector<Matrix>& second_moments() const noexcept { return second_; }
  void restore(long step, std::vector<Matrix> first, std::vector<Matrix> second) {
    step_ = step;
    first_ = std::move(first);
    second_ = std::move(second);
  }

 private:
  OptimizerConfig config_;
  long step_ = 0;
  std::vector<Matrix> first_;
  std::vector<Matrix> second_;
};

}  // namespace connlab
