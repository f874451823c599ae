#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

#include "json.hpp"
#include "sflex/rng.hpp"

namespace sflex {

using bigint = boost::multiprecision::cpp_int;
using nlohmann::json;

// One point in the elastic search space. Vectors are per unit; the nested
// vectors carry one entry per active layer of that unit.
struct ArchConfig {
  std::vector<int> unit_depths;
  std::vector<std::vector<int>> layer_kernels;
  std::vector<std::vector<int>> layer_widths;
  int scale = 4;
  int refine_depth = 2;

  bool operator==(const ArchConfig&) const = default;

  json to_json() const;
  static ArchConfig from_json(const json& j);
  std::string brief() const;  // compact one-line form for logs
};

struct SearchSpaceDef {
  int num_units = 4;
  std::vector<int> kernel_choices{3, 5, 7};
  std::vector<int> width_choices{2, 4, 6, 8};
  std::vector<int> depth_choices{2, 3, 4};
  std::vector<int> scale_choices{2, 3, 4};
  std::vector<int> refine_choices{1, 2};

  // desk-scale plumbing the search space formula does not touch
  std::vector<int> base_channels{8, 16, 48, 160};
  int stem_channels = 8;
  int max_disparity = 24;
  int num_aa_modules = 3;
  int refine_channels_half = 16;
  int refine_channels_full = 6;

  int max_kernel() const { return kernel_choices.back(); }
  int max_width() const { return width_choices.back(); }
  int max_depth() const { return depth_choices.back(); }
  int max_scale() const { return scale_choices.back(); }
  int max_refine() const { return refine_choices.back(); }

  void validate() const;  // throws on malformed choice sets

  json to_json() const;
  static SearchSpaceDef from_json(const json& j);
};

// throws std::invalid_argument with a description of the first violation
void validate_config(const ArchConfig& cfg, const SearchSpaceDef& space);

ArchConfig maximal_config(const SearchSpaceDef& space);
ArchConfig minimal_config(const SearchSpaceDef& space);

// which elastic dimensions the sampler may vary; locked dims pin at max
struct SampleDims {
  bool kernel = false;
  bool depth = false;
  bool width = false;
  bool scale = false;
  bool refine = false;
  static SampleDims all() { return {true, true, true, true, true}; }
};

ArchConfig sample_uniform(const SearchSpaceDef& space, Rng& rng,
                          const SampleDims& dims = SampleDims::all());

// closed-form size of the (kernel, width, depth) space; scale and refine
// multiply in only when include_scale_refine is set
bigint count_architectures(const SearchSpaceDef& space, bool include_scale_refine = false);

struct CostEstimate {
  long long params = 0;
  long long macs = 0;
};

// accounting rule for a single (folded, biased) convolution
inline CostEstimate conv_cost(long long cin_per_group, long long cout, long long k,
                              long long oh, long long ow) {
  CostEstimate ce;
  ce.params = cout * cin_per_group * k * k + cout;
  ce.macs = cout * cin_per_group * k * k * oh * ow;
  return ce;
}

// shape-algebra walk over the standalone network a config extracts to;
// params counts folded conv weights + biases, macs counts multiply-accumulate
// ops of convolutions and the correlation layers at the given input size
CostEstimate estimate_cost(const ArchConfig& cfg, const SearchSpaceDef& space, int input_h,
                           int input_w);

// per-scale candidate count: ceil(dmax / (3 * 2^(s-1))), s is 1-based
int disparity_bins(int dmax, int scale_s);

}  // namespace sflex
