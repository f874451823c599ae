#pragma once

#include <string>
#include <vector>

#include "sflex/arch_space.hpp"
#include "sflex/nn.hpp"

namespace sflex {

// Within-scale aggregation: a residual bottleneck around a deformable 3x3
// whose offsets are predicted from the same features. Offset predictor and
// the closing 1x1 start at zero, so the module is an exact identity at init.
class ISAModule {
 public:
  ISAModule() = default;
  ISAModule(const std::string& name, int channels);

  void init(Rng& rng);
  void collect(ParamRefs& r);
  Tensor forward(const Tensor& x, bool train);
  Tensor backward(const Tensor& gy);

  Conv2d conv1;     // 1x1, BN+relu
  Conv2d off_conv;  // 3x3 -> 18 offset channels, zero init
  Param dweight;    // deformable 3x3 weight
  Conv2d conv2;     // 1x1 with bias, zero init, no BN
  BatchNorm bn1, bn2;

 private:
  ReluOp relu1_, relu2_;
  Tensor h1_, off_;
  bool live_ = false;
};

// One directed cross-scale connection k -> s (0-based scale ids, higher is
// coarser). Finer sources get a chain of stride-2 3x3 convs, coarser sources
// bilinear upsampling plus a 1x1. Plain convs with bias, no BN.
class CrossScalePath {
 public:
  CrossScalePath() = default;
  CrossScalePath(const std::string& name, int s, int k, int dk, int ds);

  void init(Rng& rng);
  void collect(ParamRefs& r);
  Tensor forward(const Tensor& x, int hs, int ws, bool train);
  Tensor backward(const Tensor& gy);

  std::vector<Conv2d> downs;
  Conv2d up;

 private:
  int s_ = 0, k_ = 0;
  std::vector<ReluOp> relus_;
  int in_h_ = 0, in_w_ = 0;
};

// Fuses all active scales: out_s = vol_s + sum over k != s of path(vol_k).
// Paths exist for every pair in the maximal space; a forward with fewer
// active scales leaves the rest untouched.
class CSAModule {
 public:
  CSAModule() = default;
  CSAModule(const std::string& name, const std::vector<int>& bins);

  void init(Rng& rng);
  void collect(ParamRefs& r);
  std::vector<Tensor> forward(const std::vector<Tensor>& vols, bool train);
  std::vector<Tensor> backward(const std::vector<Tensor>& gouts);

  CrossScalePath& path(int s, int k) { return paths_[(size_t)s * smax_ + k]; }
  const CrossScalePath& path(int s, int k) const { return paths_[(size_t)s * smax_ + k]; }

 private:
  int smax_ = 0;
  int active_ = 0;
  std::vector<CrossScalePath> paths_;  // row s, col k, diagonal unused
};

struct AAModule {
  std::vector<ISAModule> isa;  // one per scale
  CSAModule csa;
};

class AAStack {
 public:
  AAStack() = default;
  explicit AAStack(const SearchSpaceDef& space);

  void init(Rng& rng);
  void collect(ParamRefs& r);
  std::vector<Tensor> forward(std::vector<Tensor> vols, bool train);
  std::vector<Tensor> backward(std::vector<Tensor> gvols);

  std::vector<AAModule> modules;
  std::vector<long long> isa_calls;  // per scale, for structure checks

 private:
  int active_ = 0;
};

}  // namespace sflex
