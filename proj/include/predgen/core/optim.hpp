#pragma once

#include "predgen/core/autodiff.hpp"

#include <cmath>
#include <vector>

namespace predgen {

/// Adaptive-moment optimizer over a ParameterSet; moment buffers follow parameter order.
class Adam {
 public:
  struct Options {
    double learning_rate = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
  };

  Adam() = default;
  explicit Adam(Options opts) : opts_(opts) {}

  void step(ParameterSet& params) {
    if (first_.empty()) {
      for (const auto& p : params) {
        first_.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
        second_.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
      }
    }
    if (first_.size() != params.size()) throw std::logic_error("Adam: parameter set changed");
    ++t_;
    const double c1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
    std::size_t i = 0;
    for (auto& p : params) {
      Matrix& m = first_[i];
      Matrix& v = second_[i];
      m = opts_.beta1 * m + (1.0 - opts_.beta1) * p.grad;
      v = opts_.beta2 * v + (1.0 - opts_.beta2) * p.grad.cwiseAbs2();
      p.value.array() -= opts_.learning_rate * (m.array() / c1) /
                         ((v.array() / c2).sqrt() + opts_.eps);
      ++i;
    }
  }

  long steps() const { return t_; }
  Options& options() { return opts_; }

 private:
  Options opts_{};
  std::vector<Matrix> first_;
  std::vector<Matrix> second_;
  long t_ = 0;
};

}  // namespace predgen
