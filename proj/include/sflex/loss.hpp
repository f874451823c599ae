#pragma once

#include <vector>

#include "sflex/supernet.hpp"

namespace sflex {

struct LossWeights {
  std::vector<double> scale_w;  // scale_w[s] weighs the map at scale s+1
  double half_w = 1.0;
  double full_w = 1.0;

  // coarsest scale 1/3, next 2/3, every finer scale and both refined maps 1
  static LossWeights defaults(int scales);
};

struct LossBreakdown {
  double total = 0.0;
  std::vector<double> scale_terms;  // unweighted
  double half_term = 0.0;
  double full_term = 0.0;
};

// Masked smooth-L1 between each output (upsampled to the target grid, values
// rescaled) and the target. If grads is given, each entry receives the
// weighted gradient at that output's native resolution.
LossBreakdown supervised_loss(const NetOutputs& out, const Tensor& target, const Tensor& mask,
                              const LossWeights& w, NetGrads* grads);

// mean absolute disparity error over mask
double end_point_error(const Tensor& pred, const Tensor& target, const Tensor& mask);

}  // namespace sflex
