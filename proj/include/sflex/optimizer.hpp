#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "sflex/nn.hpp"

namespace sflex {

// Adam that skips elements whose gradient is exactly zero. Single-path
// training touches only a slice of the shared weights per step; untouched
// elements keep their moments and simply miss that step. The step counter is
// global, as in the usual lazy variant.
class Adam {
 public:
  explicit Adam(double lr_ = 1e-3) : lr(lr_) {}

  void attach(const std::vector<Param*>& params);
  void zero_grad();
  void step();

  // move optimizer slots along with a physically reordered parameter axis
  void permute_slot(const std::string& name, int axis, const std::vector<int>& order);

  struct Slot {
    Tensor m, v;
  };

  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long long t = 0;

  std::unordered_map<std::string, Slot> slots;
  std::vector<Param*> params;
};

}  // namespace sflex
