#pragma once

#include <string>
#include <vector>

#include "sflex/nn.hpp"

namespace sflex {

// Depthwise kernel bank with switchable size. The 7x7 weights are the only
// stored kernel; 5x5 and 3x3 are derived on the fly by cropping the center
// and pushing the crop through a learned linear map, the 3x3 chained off the
// derived 5x5. Both maps start as identity so every size initially equals a
// plain center crop, and they are shared across all channels of the layer.
class ElasticKernel {
 public:
  ElasticKernel() = default;
  ElasticKernel(std::string name, int channels);

  // [keep,1,k,k] kernel for the first `keep` channels
  Tensor derive(int k, int keep) const;

  // push the gradient of a derived kernel back onto full / t75 / t53
  void accumulate_grad(const Tensor& gk, int k, int keep);

  void init(Rng& rng);  // he on the 7x7 bank, transforms stay identity
  void collect(ParamRefs& r);
  void permute(const std::vector<int>& order);

  int channels() const { return channels_; }

  Param full;  // [c,1,7,7]
  Param t75;   // [25,25]
  Param t53;   // [9,9]

 private:
  int channels_ = 0;
};

// channel order by descending L1 mass of each output-channel row, ties keep
// ascending index
std::vector<int> rank_channels(const Tensor& w);

// Inverted residual block: 1x1 expand, depthwise k x k, 1x1 project, BN after
// each conv, relu after the first two, skip connection when the shapes let it.
// Width ratio picks a prefix of the expanded channels; kernel size picks a
// derived depthwise kernel. Trains on one (k, ratio) choice per call.
class ElasticBlock {
 public:
  ElasticBlock() = default;
  ElasticBlock(std::string name, int cin, int cout, int stride, int max_width);

  Tensor forward(const Tensor& x, int k, int width, bool train);
  Tensor backward(const Tensor& gy);

  void init(Rng& rng);
  void collect(ParamRefs& r);

  // physically reorder expanded channels by importance of the expand rows,
  // returning the applied order so optimizer slots can follow
  std::vector<int> sort_expanded_channels();

  // params whose given axis moves when the expanded channels are reordered
  struct PermutedParam {
    std::string name;
    int axis;
  };
  std::vector<PermutedParam> permuted_params() const;

  int expanded(int width) const { return width * cin_; }
  int cin() const { return cin_; }
  int cout() const { return cout_; }
  int stride() const { return stride_; }
  int max_width() const { return max_width_; }
  bool has_skip() const { return stride_ == 1 && cin_ == cout_; }

  Conv2d expand;     // cin -> e_max, 1x1, no bias
  BatchNorm bn1;     // e_max
  ElasticKernel dw;  // e_max channels
  BatchNorm bn2;     // e_max
  Conv2d project;    // e_max -> cout, 1x1, no bias
  BatchNorm bn3;     // cout

 private:
  int cin_ = 0, cout_ = 0, stride_ = 0, max_width_ = 0;

  // state of the last training forward
  struct Cache {
    int k = 0, keep = 0;
    bool skip = false;
    Tensor x;       // block input (for expand backward and skip)
    Tensor h1;      // post relu1
    Tensor h2;      // post relu2
    Tensor dwk;     // derived kernel used
    bool live = false;
  } cache_;
  ReluOp relu1_, relu2_;
};

}  // namespace sflex
