#include <doctest.h>

#include "sflex/cost_volume.hpp"
#include "sflex/extractor.hpp"
#include "test_util.hpp"

using namespace sflex;
using namespace sflex::testutil;

namespace {

SearchSpaceDef tiny_space() {
  SearchSpaceDef sp;
  sp.num_units = 2;
  sp.kernel_choices = {3, 5};
  sp.width_choices = {1, 2};
  sp.depth_choices = {1, 2};
  sp.scale_choices = {1, 2};
  sp.base_channels = {4, 6};
  sp.stem_channels = 4;
  sp.max_disparity = 6;
  return sp;
}

ArchConfig tiny_full() {
  ArchConfig cfg;
  cfg.unit_depths = {2, 2};
  cfg.layer_kernels = {{5, 5}, {5, 5}};
  cfg.layer_widths = {{2, 2}, {2, 2}};
  cfg.scale = 2;
  cfg.refine_depth = 2;
  return cfg;
}

}  // namespace

TEST_CASE("extractor level shapes and unit skip") {
  SearchSpaceDef sp;
  FeatureExtractor fx(sp);
  Rng rng(21);
  fx.init(rng);

  ArchConfig full = maximal_config(sp);
  Tensor x = random_tensor({2, 3, 48, 96}, rng);
  auto levels = fx.forward(x, full, false);
  REQUIRE(levels.size() == 4);
  CHECK(levels[0].shape() == std::vector<int>{2, 8, 16, 32});
  CHECK(levels[1].shape() == std::vector<int>{2, 16, 8, 16});
  CHECK(levels[2].shape() == std::vector<int>{2, 48, 4, 8});
  CHECK(levels[3].shape() == std::vector<int>{2, 160, 2, 4});
  CHECK(fx.unit_calls == std::vector<long long>{1, 1, 1, 1});

  ArchConfig s2 = full;
  s2.scale = 2;
  auto levels2 = fx.forward(x, s2, false);
  REQUIRE(levels2.size() == 2);
  // tail units never ran again
  CHECK(fx.unit_calls == std::vector<long long>{2, 2, 1, 1});
  // shared prefix computes the same features bit for bit
  CHECK(max_abs_diff(levels2[0], levels[0]) == 0.0);
  CHECK(max_abs_diff(levels2[1], levels[1]) == 0.0);
}

TEST_CASE("extractor rejects bad inputs") {
  SearchSpaceDef sp;
  FeatureExtractor fx(sp);
  Rng rng(22);
  fx.init(rng);
  ArchConfig full = maximal_config(sp);
  CHECK_THROWS(fx.forward(random_tensor({1, 4, 48, 96}, rng), full, false));
  CHECK_THROWS(fx.forward(random_tensor({1, 3, 50, 96}, rng), full, false));
}

TEST_CASE("gradients only land on the sampled structure") {
  SearchSpaceDef sp;
  FeatureExtractor fx(sp);
  Rng rng(23);
  fx.init(rng);

  ArchConfig cfg;
  cfg.unit_depths = {2, 2, 2, 2};
  cfg.layer_kernels = {{5, 5}, {5, 5}, {5, 5}, {5, 5}};
  cfg.layer_widths = {{2, 2}, {2, 2}, {2, 2}, {2, 2}};
  cfg.scale = 2;
  cfg.refine_depth = 2;

  Tensor x = random_tensor({2, 3, 24, 24}, rng);
  auto levels = fx.forward(x, cfg, true);
  std::vector<Tensor> gl;
  for (auto& l : levels) gl.push_back(Tensor::full(l.shape(), 0.3));
  fx.backward(gl);

  auto mass = [](const Tensor& t) {
    double m = 0;
    for (int64_t i = 0; i < t.numel(); ++i) m += std::abs(t[i]);
    return m;
  };

  CHECK(mass(fx.stem.w.g) > 0.0);
  CHECK(mass(fx.units[0][0].expand.w.g) > 0.0);
  CHECK(mass(fx.units[0][1].expand.w.g) > 0.0);
  // depth 2 leaves blocks 2,3 untouched; scale 2 leaves units 2,3 untouched
  CHECK(mass(fx.units[0][2].expand.w.g) == 0.0);
  CHECK(mass(fx.units[0][3].expand.w.g) == 0.0);
  CHECK(mass(fx.units[2][0].expand.w.g) == 0.0);
  CHECK(mass(fx.units[3][0].expand.w.g) == 0.0);
  // kernel 5 reaches t75 but never t53
  CHECK(mass(fx.units[1][0].dw.t75.g) > 0.0);
  CHECK(mass(fx.units[1][0].dw.t53.g) == 0.0);
  // width 2 on a 16-channel input: expand rows past 32 of unit1.b1 stay cold
  const auto& b = fx.units[1][1];
  const int keep = 2 * b.cin();
  double cold = 0;
  for (int64_t i = (int64_t)keep * b.cin(); i < b.expand.w.g.numel(); ++i)
    cold += std::abs(b.expand.w.g[i]);
  CHECK(cold == 0.0);
}

TEST_CASE("extractor gradients match finite differences") {
  SearchSpaceDef sp = tiny_space();
  FeatureExtractor fx(sp);
  Rng rng(24);
  fx.init(rng);
  ArchConfig cfg = tiny_full();

  Tensor x = random_tensor({2, 3, 12, 24}, rng, -1.0, 1.0);
  auto levels = fx.forward(x, cfg, true);
  REQUIRE(levels.size() == 2);
  std::vector<Tensor> proj;
  for (auto& l : levels) proj.push_back(random_tensor(l.shape(), rng));

  ParamRefs refs;
  fx.collect(refs);
  for (auto* p : refs.params) p->g.zero();

  auto run_loss = [&] {
    auto ls = fx.forward(x, cfg, true);
    double acc = 0;
    for (size_t s = 0; s < ls.size(); ++s) acc += project(ls[s], proj[s]);
    return acc;
  };

  std::vector<Tensor> gl;
  for (auto& p : proj) gl.push_back(p);
  fx.forward(x, cfg, true);
  Tensor gx = fx.backward(gl);

  check_grad_subset(run_loss, fx.stem.w.v, fx.stem.w.g, 15, rng, 5e-4);
  check_grad_subset(run_loss, fx.units[0][0].dw.full.v, fx.units[0][0].dw.full.g, 15, rng, 5e-4);
  check_grad_subset(run_loss, fx.units[0][0].dw.t75.v, fx.units[0][0].dw.t75.g, 10, rng, 5e-4);
  check_grad_subset(run_loss, fx.units[1][0].expand.w.v, fx.units[1][0].expand.w.g, 15, rng,
                    5e-4);
  check_grad_subset(run_loss, fx.units[1][1].project.w.v, fx.units[1][1].project.w.g, 15, rng,
                    5e-4);
  check_grad_subset(run_loss, fx.stem_bn.gamma.v, fx.stem_bn.gamma.g, 4, rng, 5e-4);
  check_grad_subset(run_loss, fx.units[1][1].bn3.beta.v, fx.units[1][1].bn3.beta.g, 4, rng,
                    5e-4);

  Rng pick(77);
  for (int s = 0; s < 12; ++s) {
    int64_t i = (int64_t)pick.uniform_int((int)x.numel());
    double save = x[i];
    const double h = 1e-6;
    x[i] = save + h;
    double lp = run_loss();
    x[i] = save - h;
    double lm = run_loss();
    x[i] = save;
    CHECK(grad_close(gx[i], (lp - lm) / (2 * h), 5e-4));
  }
}

TEST_CASE("cost volumes per scale: bins, values, linearity") {
  Rng rng(25);
  // two stacked levels, N=2 pairs
  std::vector<Tensor> levels;
  levels.push_back(random_tensor({4, 8, 8, 16}, rng));
  levels.push_back(random_tensor({4, 12, 4, 8}, rng));

  auto vols = build_cost_volumes(levels, 24);
  REQUIRE(vols.size() == 2);
  CHECK(vols[0].shape() == std::vector<int>{2, 8, 8, 16});  // ceil(24/3)
  CHECK(vols[1].shape() == std::vector<int>{2, 4, 4, 8});   // ceil(24/6)

  // hand-computed entry
  {
    const Tensor& lv = levels[0];
    int n = 1, d = 3, y = 2, x = 7;
    double acc = 0;
    for (int c = 0; c < 8; ++c) acc += lv.at(n, c, y, x) * lv.at(2 + n, c, y, x - d);
    CHECK(vols[0].at(n, d, y, x) == doctest::Approx(acc / 8).epsilon(1e-14));
  }

  // doubling the left half doubles the volume
  std::vector<Tensor> scaled = levels;
  for (int64_t i = 0; i < scaled[0].numel() / 2; ++i) scaled[0][i] *= 2.0;
  auto vols2 = build_cost_volumes({scaled[0]}, 24);
  for (int64_t i = 0; i < vols[0].numel(); ++i)
    CHECK(vols2[0][i] == doctest::Approx(2.0 * vols[0][i]).epsilon(1e-13));

  // grads round-trip through the stack/slice plumbing
  std::vector<Tensor> gv;
  for (auto& v : vols) gv.push_back(random_tensor(v.shape(), rng));
  auto gl = cost_volume_grads(levels, gv);
  REQUIRE(gl.size() == 2);
  CHECK(gl[0].same_shape(levels[0]));
  Tensor fl = batch_slice(levels[0], 0, 2), fr = batch_slice(levels[0], 2, 4);
  Tensor gfl(fl.shape()), gfr(fr.shape());
  kern::correlation_backward(fl, fr, gv[0], &gfl, &gfr);
  CHECK(max_abs_diff(batch_slice(gl[0], 0, 2), gfl) == 0.0);
  CHECK(max_abs_diff(batch_slice(gl[0], 2, 4), gfr) == 0.0);
}
