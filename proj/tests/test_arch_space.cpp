#include <set>
#include <string>

#include "doctest.h"
#include "sflex/arch_space.hpp"

using namespace sflex;

namespace {

// independent brute-force enumeration of the (kernel, width, depth) space
long long enumerate_space(const SearchSpaceDef& s) {
  // per unit: sum over depths of (#kernel * #width)^depth, counted by
  // explicit digit odometer rather than the closed form
  long long per_unit = 0;
  for (int d : s.depth_choices) {
    // enumerate all (kernel, width) assignments for d layers
    std::vector<int> digits(d, 0);
    const int radix = static_cast<int>(s.kernel_choices.size() * s.width_choices.size());
    long long count = 0;
    while (true) {
      ++count;
      int i = 0;
      while (i < d && ++digits[i] == radix) digits[i++] = 0;
      if (i == d) break;
    }
    per_unit += count;
  }
  long long total = 1;
  for (int u = 0; u < s.num_units; ++u) total *= per_unit;
  return total;
}

}  // namespace

TEST_CASE("config validation accepts the extremes and rejects bad values") {
  SearchSpaceDef space;
  ArchConfig mx = maximal_config(space);
  ArchConfig mn = minimal_config(space);
  CHECK_NOTHROW(validate_config(mx, space));
  CHECK_NOTHROW(validate_config(mn, space));
  CHECK(mx.unit_depths == std::vector<int>{4, 4, 4, 4});
  CHECK(mn.scale == 2);

  ArchConfig bad = mx;
  bad.unit_depths[1] = 5;
  bad.layer_kernels[1].push_back(3);
  bad.layer_widths[1].push_back(4);
  CHECK_THROWS_WITH_AS(validate_config(bad, space), doctest::Contains("depth not in {2,3,4}"),
                       std::invalid_argument);

  ArchConfig mism = mx;
  mism.unit_depths[0] = 2;  // leaves 4 kernel entries in place
  CHECK_THROWS_WITH_AS(validate_config(mism, space), doctest::Contains("length mismatch"),
                       std::invalid_argument);

  ArchConfig badk = mx;
  badk.layer_kernels[2][1] = 4;
  CHECK_THROWS_WITH_AS(validate_config(badk, space), doctest::Contains("kernel not in"),
                       std::invalid_argument);

  ArchConfig bads = mx;
  bads.scale = 1;
  CHECK_THROWS_AS(validate_config(bads, space), std::invalid_argument);
}

TEST_CASE("config json schema round trips") {
  SearchSpaceDef space;
  Rng rng(3);
  for (int i = 0; i < 20; ++i) {
    ArchConfig c = sample_uniform(space, rng);
    const std::string text = c.to_json().dump();
    ArchConfig back = ArchConfig::from_json(json::parse(text));
    CHECK(back == c);
  }
  // exact key set of the schema
  json j = maximal_config(space).to_json();
  CHECK(j.contains("unit_depths"));
  CHECK(j.contains("layer_kernels"));
  CHECK(j.contains("layer_widths"));
  CHECK(j.contains("scale"));
  CHECK(j.contains("refine_depth"));
  CHECK(j.size() == 5);

  SearchSpaceDef s2 = SearchSpaceDef::from_json(space.to_json());
  CHECK(s2.base_channels == space.base_channels);
  CHECK(s2.max_disparity == space.max_disparity);
}

TEST_CASE("search space count matches the closed form and brute force") {
  SearchSpaceDef space;
  CHECK(count_architectures(space) == bigint("261245355410128896"));
  CHECK(count_architectures(space, true) ==
        bigint("261245355410128896") * 6);

  SearchSpaceDef reduced;
  reduced.num_units = 2;
  reduced.kernel_choices = {3, 5};
  reduced.width_choices = {2, 4};
  reduced.depth_choices = {1, 2};
  reduced.base_channels = {8, 16};
  reduced.scale_choices = {2};
  CHECK(count_architectures(reduced) == 400);
  CHECK(enumerate_space(reduced) == 400);

  SearchSpaceDef single;
  single.num_units = 1;
  single.kernel_choices = {3};
  single.width_choices = {2};
  single.depth_choices = {1};
  single.scale_choices = {1};
  single.base_channels = {8};
  CHECK(count_architectures(single) == 1);
}

TEST_CASE("uniform sampling is deterministic, valid and covers the space") {
  SearchSpaceDef space;
  Rng a(9), b(9);
  for (int i = 0; i < 10; ++i) CHECK(sample_uniform(space, a) == sample_uniform(space, b));

  // locked dimensions pin to the maximum
  Rng c(5);
  SampleDims kernel_only;
  kernel_only.kernel = true;
  for (int i = 0; i < 10; ++i) {
    ArchConfig cfg = sample_uniform(space, c, kernel_only);
    CHECK_NOTHROW(validate_config(cfg, space));
    CHECK(cfg.unit_depths == std::vector<int>{4, 4, 4, 4});
    CHECK(cfg.scale == 4);
    CHECK(cfg.refine_depth == 2);
    for (const auto& ws : cfg.layer_widths)
      for (int w : ws) CHECK(w == 8);
  }

  // free sampling eventually hits every choice of every dimension
  Rng d(7);
  std::set<int> kernels, widths, depths, scales, refines;
  for (int i = 0; i < 200; ++i) {
    ArchConfig cfg = sample_uniform(space, d);
    CHECK_NOTHROW(validate_config(cfg, space));
    for (int v : cfg.unit_depths) depths.insert(v);
    for (const auto& ks : cfg.layer_kernels) kernels.insert(ks.begin(), ks.end());
    for (const auto& ws : cfg.layer_widths) widths.insert(ws.begin(), ws.end());
    scales.insert(cfg.scale);
    refines.insert(cfg.refine_depth);
  }
  CHECK(kernels.size() == 3);
  CHECK(widths.size() == 4);
  CHECK(depths.size() == 3);
  CHECK(scales.size() == 3);
  CHECK(refines.size() == 2);
}

TEST_CASE("cost accounting rule matches the hand count") {
  const CostEstimate c = conv_cost(2, 3, 1, 4, 4);
  CHECK(c.params == 9);
  CHECK(c.macs == 96);
}

TEST_CASE("estimate_cost is monotone in every elastic dimension") {
  SearchSpaceDef space;
  const int H = 96, W = 144;
  ArchConfig base = minimal_config(space);
  const CostEstimate c0 = estimate_cost(base, space, H, W);
  CHECK(c0.params > 0);
  CHECK(c0.macs > 0);

  auto bumped = [&](auto mutate) {
    ArchConfig c = base;
    mutate(c);
    return estimate_cost(c, space, H, W);
  };

  CHECK(bumped([](ArchConfig& c) { c.layer_kernels[0][0] = 7; }).macs > c0.macs);
  CHECK(bumped([](ArchConfig& c) { c.layer_widths[0][0] = 8; }).macs > c0.macs);
  CHECK(bumped([](ArchConfig& c) {
          c.unit_depths[0] = 3;
          c.layer_kernels[0].push_back(3);
          c.layer_widths[0].push_back(2);
        }).macs > c0.macs);
  CHECK(bumped([](ArchConfig& c) { c.scale = 3; }).macs > c0.macs);
  CHECK(bumped([](ArchConfig& c) { c.refine_depth = 2; }).macs >
        estimate_cost([&] {
          ArchConfig c = base;
          c.refine_depth = 1;
          return c;
        }(), space, H, W).macs);

  const CostEstimate cmax = estimate_cost(maximal_config(space), space, H, W);
  CHECK(cmax.macs > c0.macs);
  CHECK(cmax.params > c0.params);
}

TEST_CASE("scale shrink cuts the mac count hard") {
  SearchSpaceDef space;
  ArchConfig s4 = maximal_config(space);
  ArchConfig s2 = s4;
  s2.scale = 2;
  const CostEstimate e4 = estimate_cost(s4, space, 96, 144);
  const CostEstimate e2 = estimate_cost(s2, space, 96, 144);
  CHECK(static_cast<double>(e2.macs) < 0.6 * static_cast<double>(e4.macs));
  MESSAGE("macs S=2 " << e2.macs << " vs S=4 " << e4.macs << " ratio "
                      << static_cast<double>(e2.macs) / e4.macs);
}

TEST_CASE("disparity bin schedule follows the resolution ladder") {
  CHECK(disparity_bins(24, 1) == 8);
  CHECK(disparity_bins(24, 2) == 4);
  CHECK(disparity_bins(24, 3) == 2);
  CHECK(disparity_bins(24, 4) == 1);
  CHECK(disparity_bins(192, 1) == 64);
  CHECK(disparity_bins(192, 4) == 8);
  CHECK(disparity_bins(8, 2) == 2);
}
