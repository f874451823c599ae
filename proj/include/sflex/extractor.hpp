#pragma once

#include <functional>
#include <vector>

#include "sflex/arch_space.hpp"
#include "sflex/elastic.hpp"

namespace sflex {

// Pyramid backbone. A stride-3 stem brings the input to 1/3 resolution, then
// one unit per pyramid level: the first block of units 1..U-1 halves the
// resolution, everything else keeps it. Level s therefore sits at
// 1/(3*2^s) with base_channels[s] channels. Only the first cfg.scale units
// run; the tail is never touched, which is what makes small-scale subnets
// cheap.
class FeatureExtractor {
 public:
  FeatureExtractor() = default;
  explicit FeatureExtractor(const SearchSpaceDef& space);

  void init(Rng& rng);
  void collect(ParamRefs& r);

  std::vector<Tensor> forward(const Tensor& x, const ArchConfig& cfg, bool train);
  Tensor backward(const std::vector<Tensor>& glevels);

  // called once when width becomes elastic
  void sort_all_expanded_channels(
      const std::function<void(const std::string&, int, const std::vector<int>&)>& moved);

  Conv2d stem;
  BatchNorm stem_bn;
  std::vector<std::vector<ElasticBlock>> units;

  // forward invocations per unit, for tests and sanity checks
  std::vector<long long> unit_calls;

 private:
  ReluOp stem_relu_;
  SearchSpaceDef space_;
  struct {
    int scale = 0;
    std::vector<int> depths;
  } last_;
};

}  // namespace sflex
