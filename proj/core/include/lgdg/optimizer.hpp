#pragma once

#include "lgdg/layers.hpp"

namespace lgdg {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adaptive-moment gradient descent over a fixed parameter list. Parameters
// that backward did not reach in a step are skipped, moments included.
class Adam {
 public:
  Adam(NamedParams params, const AdamConfig& cfg);

  void zero_grad();
  void step();
  long steps() const { return t_; }
  const NamedParams& params() const { return params_; }

 private:
  NamedParams params_;
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  long t_ = 0;
};

}  // namespace lgdg
