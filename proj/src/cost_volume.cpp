#include "sflex/cost_volume.hpp"

#include <stdexcept>

namespace sflex {

std::vector<Tensor> build_cost_volumes(const std::vector<Tensor>& levels, int dmax) {
  std::vector<Tensor> vols;
  vols.reserve(levels.size());
  for (size_t s = 0; s < levels.size(); ++s) {
    const Tensor& lv = levels[s];
    if (lv.n() % 2 != 0) throw std::invalid_argument("stacked level batch must be even");
    const int n = lv.n() / 2;
    Tensor fl = batch_slice(lv, 0, n);
    Tensor fr = batch_slice(lv, n, 2 * n);
    vols.push_back(kern::correlation(fl, fr, disparity_bins(dmax, (int)s + 1)));
  }
  return vols;
}

std::vector<Tensor> cost_volume_grads(const std::vector<Tensor>& levels,
                                      const std::vector<Tensor>& gvols) {
  if (levels.size() != gvols.size()) throw std::invalid_argument("level/volume count mismatch");
  std::vector<Tensor> glevels;
  glevels.reserve(levels.size());
  for (size_t s = 0; s < levels.size(); ++s) {
    const int n = levels[s].n() / 2;
    Tensor fl = batch_slice(levels[s], 0, n);
    Tensor fr = batch_slice(levels[s], n, 2 * n);
    Tensor gfl(fl.shape()), gfr(fr.shape());
    kern::correlation_backward(fl, fr, gvols[s], &gfl, &gfr);
    glevels.push_back(batch_concat(gfl, gfr));
  }
  return glevels;
}

}  // namespace sflex
