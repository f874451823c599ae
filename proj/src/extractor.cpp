#include "sflex/extractor.hpp"

#include <stdexcept>

namespace sflex {

FeatureExtractor::FeatureExtractor(const SearchSpaceDef& space) : space_(space) {
  space.validate();
  stem = Conv2d("extractor.stem", 3, space.stem_channels, 3, 3, 0, 1, 1, false);
  stem_bn = BatchNorm("extractor.stem_bn", space.stem_channels);
  units.resize(space.num_units);
  unit_calls.assign(space.num_units, 0);
  for (int u = 0; u < space.num_units; ++u) {
    const int cout = space.base_channels[u];
    const int d = space.max_depth();
    units[u].reserve(d);
    for (int i = 0; i < d; ++i) {
      const int cin = i == 0 ? (u == 0 ? space.stem_channels : space.base_channels[u - 1]) : cout;
      const int stride = (i == 0 && u >= 1) ? 2 : 1;
      units[u].emplace_back("extractor.u" + std::to_string(u) + ".b" + std::to_string(i), cin,
                            cout, stride, space.max_width());
    }
  }
}

void FeatureExtractor::init(Rng& rng) {
  stem.init(rng);
  for (auto& unit : units)
    for (auto& blk : unit) blk.init(rng);
}

void FeatureExtractor::collect(ParamRefs& r) {
  stem.collect(r);
  stem_bn.collect(r);
  for (auto& unit : units)
    for (auto& blk : unit) blk.collect(r);
}

std::vector<Tensor> FeatureExtractor::forward(const Tensor& x, const ArchConfig& cfg,
                                              bool train) {
  validate_config(cfg, space_);
  if (x.c() != 3) throw std::invalid_argument("extractor wants 3 input channels");
  const int div = 3 * (1 << (cfg.scale - 1));
  if (x.h() % div != 0 || x.w() % div != 0)
    throw std::invalid_argument("input size must divide " + std::to_string(div));

  Tensor h = stem_relu_.forward(stem_bn.forward(stem.forward(x, train), train), train);
  std::vector<Tensor> levels;
  levels.reserve(cfg.scale);
  last_.depths.assign(cfg.scale, 0);
  for (int u = 0; u < cfg.scale; ++u) {
    const int d = cfg.unit_depths[u];
    for (int i = 0; i < d; ++i)
      h = units[u][i].forward(h, cfg.layer_kernels[u][i], cfg.layer_widths[u][i], train);
    levels.push_back(h);
    last_.depths[u] = d;
    unit_calls[u]++;
  }
  last_.scale = cfg.scale;
  return levels;
}

Tensor FeatureExtractor::backward(const std::vector<Tensor>& glevels) {
  const int S = last_.scale;
  if (S == 0 || (int)glevels.size() != S)
    throw std::runtime_error("extractor backward without matching forward");
  Tensor gcur = glevels[S - 1];
  for (int u = S - 1; u >= 0; --u) {
    for (int i = last_.depths[u] - 1; i >= 0; --i) gcur = units[u][i].backward(gcur);
    if (u > 0) {
      if (!gcur.same_shape(glevels[u - 1]))
        throw std::runtime_error("level gradient shape mismatch at unit " + std::to_string(u));
      for (int64_t j = 0; j < gcur.numel(); ++j) gcur[j] += glevels[u - 1][j];
    }
  }
  last_.scale = 0;
  return stem.backward(stem_bn.backward(stem_relu_.backward(gcur)));
}

void FeatureExtractor::sort_all_expanded_channels(
    const std::function<void(const std::string&, int, const std::vector<int>&)>& moved) {
  for (auto& unit : units)
    for (auto& blk : unit) {
      std::vector<int> order = blk.sort_expanded_channels();
      if (moved)
        for (const auto& pp : blk.permuted_params()) moved(pp.name, pp.axis, order);
    }
}

}  // namespace sflex
