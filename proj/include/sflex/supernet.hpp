#pragma once

#include <vector>

#include "sflex/aggregation.hpp"
#include "sflex/arch_space.hpp"
#include "sflex/cost_volume.hpp"
#include "sflex/extractor.hpp"
#include "sflex/heads.hpp"

namespace sflex {

struct NetOutputs {
  std::vector<Tensor> scales;  // regressed maps at native grid, values in grid units
  Tensor half;                 // refined, input/2 (refine_depth >= 1)
  Tensor full;                 // refined, input res (refine_depth >= 2)
  int refine_depth = 0;
};

struct NetGrads {
  std::vector<Tensor> scales;
  Tensor half, full;
};

// The whole weight-sharing network. Both views run the extractor as one
// stacked batch, correlation splits them back apart, and everything after
// the volumes is per-pair.
class Supernet {
 public:
  Supernet() = default;
  explicit Supernet(const SearchSpaceDef& sp);

  void init(uint64_t seed);
  void collect(ParamRefs& r);

  NetOutputs forward(const Tensor& left, const Tensor& right, const ArchConfig& cfg,
                     bool train);
  void backward(const NetGrads& g);

  // the map eval consumes: the finest refined output brought to (h, w)
  static Tensor full_res(const NetOutputs& out, int h, int w);

  SearchSpaceDef space;
  FeatureExtractor extractor;
  AAStack agg;
  std::vector<RegressionHead> heads;
  RefineModule refine_half, refine_full;

 private:
  struct {
    std::vector<Tensor> levels;
    int refine_depth = 0;
    bool live = false;
  } cache_;
};

}  // namespace sflex
