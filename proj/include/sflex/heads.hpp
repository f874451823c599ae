#pragma once

#include <string>
#include <vector>

#include "sflex/nn.hpp"

namespace sflex {

// Disparity from a cost volume: expectation over the softmax of the bins.
class RegressionHead {
 public:
  Tensor forward(const Tensor& vol, bool train);
  Tensor backward(const Tensor& gy);

 private:
  Tensor probs_, out_;
  bool live_ = false;
};

// Residual disparity refinement at a higher resolution. The incoming map is
// upsampled with its values rescaled, the right image warped by it, and a
// small dilated conv stack predicts a correction from
// [left, warped right, photometric error, disparity] (10 channels). The
// closing conv starts at zero, so at init this is a plain upsample. Output is
// clamped at zero.
class RefineModule {
 public:
  RefineModule() = default;
  RefineModule(const std::string& name, int channels, const std::vector<int>& mid_dilations);

  void init(Rng& rng);
  void collect(ParamRefs& r);

  // disp at a coarser grid, left/right already at the target resolution
  Tensor forward(const Tensor& disp, const Tensor& left, const Tensor& right, bool train);
  // returns the gradient for the incoming coarse map
  Tensor backward(const Tensor& gy);

  Conv2d conv_in;
  std::vector<Conv2d> mids;
  Conv2d conv_out;
  std::vector<BatchNorm> bns;

 private:
  std::vector<ReluOp> relus_;
  ReluOp clamp_;
  Tensor right_, upv_, sign_;
  int src_h_ = 0, src_w_ = 0;
  double vscale_ = 1.0;
  bool live_ = false;
};

// upsample a disparity map to (oh, ow), scaling values by the width ratio
Tensor upsample_disparity(const Tensor& disp, int oh, int ow);

}  // namespace sflex
