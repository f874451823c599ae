#pragma once

#include <vector>

#include "sflex/arch_space.hpp"
#include "sflex/kernels.hpp"
#include "sflex/tensor.hpp"

namespace sflex {

// Levels come batch-stacked: rows [0,N) are left-view features, rows [N,2N)
// right-view. Volume s gets disparity_bins(dmax, s+1) correlation bins.
std::vector<Tensor> build_cost_volumes(const std::vector<Tensor>& levels, int dmax);

// gradients of the stacked levels given volume gradients
std::vector<Tensor> cost_volume_grads(const std::vector<Tensor>& levels,
                                      const std::vector<Tensor>& gvols);

}  // namespace sflex
