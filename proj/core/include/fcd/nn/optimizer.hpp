#pragma once

#include <vector>

#include "fcd/nn/layers.hpp"

namespace fcd::nn {

class Optimizer {
 public:
  virtual ~Optimizer() = default;
  virtual void step(const std::vector<Param*>& params) = 0;
};

/// Adam with bias correction (beta1 0.9, beta2 0.999, eps 1e-8).
class Adam final : public Optimizer {
 public:
  explicit Adam(double learning_rate, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps) {}
  void step(const std::vector<Param*>& params) override;

 private:
  double lr_, beta1_, beta2_, eps_;
  long step_ = 0;
  std::vector<Mat> m_, v_;
};

/// Plain SGD with heavy-ball momentum.
class Sgd final : public Optimizer {
 public:
  explicit Sgd(double learning_rate, double momentum = 0.9) : lr_(learning_rate), momentum_(momentum) {}
  void step(const std::vector<Param*>& params) override;

 private:
  double lr_, momentum_;
  std::vector<Mat> velocity_;
};

}  // namespace fcd::nn
