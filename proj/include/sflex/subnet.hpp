#pragma once

#include <string>
#include <vector>

#include "sflex/arch_space.hpp"
#include "sflex/kernels.hpp"
#include "sflex/supernet.hpp"
#include "sflex/tensor.hpp"

namespace sflex {

// One materialized convolution: normalization folded into the weights, every
// conv carrying a real bias.
struct FoldedConv {
  Tensor w;  // [cout, cin/groups, k, k]
  Tensor b;  // [cout]
  kern::ConvGeom geom{1, 0, 1, 1};

  Tensor run(const Tensor& x) const { return kern::conv2d(x, w, &b, geom); }
  long long params() const { return w.numel() + b.numel(); }
};

// A config frozen out of the shared weights: derived kernels materialized,
// widths sliced, depth/scale/refinement truncated. Runs standalone in eval
// mode with none of the elastic machinery.
class Subnet {
 public:
  struct Block {
    FoldedConv expand, dw, project;
    bool skip = false;
  };
  struct Isa {
    FoldedConv conv1, off;
    FoldedConv dconv;  // deformable 3x3, run through deform_conv3x3, not run()
    FoldedConv conv2;
  };
  struct Path {
    std::vector<FoldedConv> downs;  // k < s chain
    FoldedConv up;                  // k > s
    int s = 0, k = 0;
  };
  struct Aa {
    std::vector<Isa> isa;
    std::vector<Path> paths;  // all ordered pairs among the active scales
  };
  struct Refine {
    FoldedConv conv_in;
    std::vector<FoldedConv> mids;
    FoldedConv conv_out;
  };

  static Subnet extract(const Supernet& net, const ArchConfig& cfg);

  // full-resolution disparity for one pair
  Tensor forward(const Tensor& left, const Tensor& right) const;

  long long param_count() const;

  void save(const std::string& path) const;
  static Subnet load(const std::string& path);

  ArchConfig cfg;
  SearchSpaceDef space;  // kept so a saved file can be rebuilt shape-first
  int max_disparity = 0;
  FoldedConv stem;
  std::vector<std::vector<Block>> units;  // [scale][depth]
  std::vector<Aa> aa;
  std::vector<Refine> refines;  // half, then full
};

}  // namespace sflex
