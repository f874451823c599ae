#include "sflex/supernet.hpp"

#include <stdexcept>

namespace sflex {

Supernet::Supernet(const SearchSpaceDef& sp)
    : space(sp),
      extractor(sp),
      agg(sp),
      heads(sp.max_scale()),
      refine_half("refine_h", sp.refine_channels_half, {1, 2, 4}),
      refine_full("refine_f", sp.refine_channels_full, {1, 2}) {}

void Supernet::init(uint64_t seed) {
  Rng rng(seed);
  extractor.init(rng);
  agg.init(rng);
  refine_half.init(rng);
  refine_full.init(rng);
}

void Supernet::collect(ParamRefs& r) {
  extractor.collect(r);
  agg.collect(r);
  refine_half.collect(r);
  refine_full.collect(r);
}

NetOutputs Supernet::forward(const Tensor& left, const Tensor& right, const ArchConfig& cfg,
                             bool train) {
  if (!left.same_shape(right)) throw std::invalid_argument("view shapes differ");
  Tensor x = batch_concat(left, right);
  std::vector<Tensor> levels = extractor.forward(x, cfg, train);
  std::vector<Tensor> vols = build_cost_volumes(levels, space.max_disparity);
  vols = agg.forward(std::move(vols), train);

  NetOutputs out;
  out.refine_depth = cfg.refine_depth;
  out.scales.reserve(vols.size());
  for (size_t s = 0; s < vols.size(); ++s)
    out.scales.push_back(heads[s].forward(vols[s], train));

  const int H = left.h(), W = left.w();
  if (cfg.refine_depth >= 1) {
    Tensor lh = kern::bilinear_resize(left, H / 2, W / 2);
    Tensor rh = kern::bilinear_resize(right, H / 2, W / 2);
    out.half = refine_half.forward(out.scales[0], lh, rh, train);
  }
  if (cfg.refine_depth >= 2) out.full = refine_full.forward(out.half, left, right, train);

  if (train) {
    cache_.levels = std::move(levels);
    cache_.refine_depth = cfg.refine_depth;
    cache_.live = true;
  }
  return out;
}

void Supernet::backward(const NetGrads& g) {
  if (!cache_.live) throw std::runtime_error("net backward without forward");
  const int S = (int)cache_.levels.size();
  if ((int)g.scales.size() != S) throw std::invalid_argument("scale gradient count");

  std::vector<Tensor> gscales = g.scales;
  Tensor ghalf = g.half;
  if (cache_.refine_depth >= 2) {
    if (g.full.empty()) throw std::invalid_argument("missing full-res gradient");
    Tensor add = refine_full.backward(g.full);
    if (ghalf.empty()) ghalf = Tensor(add.shape());
    for (int64_t i = 0; i < add.numel(); ++i) ghalf[i] += add[i];
  }
  if (cache_.refine_depth >= 1) {
    if (ghalf.empty()) throw std::invalid_argument("missing half-res gradient");
    Tensor add = refine_half.backward(ghalf);
    for (int64_t i = 0; i < add.numel(); ++i) gscales[0][i] += add[i];
  }

  std::vector<Tensor> gvols(S);
  for (int s = 0; s < S; ++s) gvols[s] = heads[s].backward(gscales[s]);
  gvols = agg.backward(std::move(gvols));
  std::vector<Tensor> glevels = cost_volume_grads(cache_.levels, gvols);
  extractor.backward(glevels);
  cache_.live = false;
  cache_.levels.clear();
}

Tensor Supernet::full_res(const NetOutputs& out, int h, int w) {
  if (out.refine_depth >= 2) return out.full;
  if (out.refine_depth == 1) return upsample_disparity(out.half, h, w);
  return upsample_disparity(out.scales[0], h, w);
}

}  // namespace sflex
