#include <doctest.h>

#include "sflex/loss.hpp"
#include "sflex/supernet.hpp"
#include "test_util.hpp"

using namespace sflex;
using namespace sflex::testutil;

namespace {

SearchSpaceDef net_tiny() {
  SearchSpaceDef sp;
  sp.num_units = 2;
  sp.kernel_choices = {3, 5};
  sp.width_choices = {1, 2};
  sp.depth_choices = {1, 2};
  sp.scale_choices = {1, 2};
  sp.refine_choices = {1, 2};
  sp.base_channels = {4, 6};
  sp.stem_channels = 4;
  sp.max_disparity = 6;
  sp.num_aa_modules = 1;
  sp.refine_channels_half = 4;
  sp.refine_channels_full = 3;
  return sp;
}

ArchConfig net_tiny_full() {
  ArchConfig cfg;
  cfg.unit_depths = {2, 2};
  cfg.layer_kernels = {{5, 5}, {5, 5}};
  cfg.layer_widths = {{2, 2}, {2, 2}};
  cfg.scale = 2;
  cfg.refine_depth = 2;
  return cfg;
}

double tensor_mass(const Tensor& t) {
  double m = 0;
  for (int64_t i = 0; i < t.numel(); ++i) m += std::abs(t[i]);
  return m;
}

}  // namespace

TEST_CASE("isa module is an exact identity at init") {
  Rng rng(31);
  ISAModule isa("isa", 6);
  isa.init(rng);
  Tensor x = random_tensor({2, 6, 5, 9}, rng);
  Tensor y = isa.forward(x, false);
  CHECK(max_abs_diff(y, x) == 0.0);
  Tensor yt = isa.forward(x, true);
  CHECK(max_abs_diff(yt, x) == 0.0);
}

TEST_CASE("isa gradients match finite differences") {
  Rng rng(32);
  ISAModule isa("isa", 4);
  isa.init(rng);
  // move away from the zero-init point so every path carries signal
  for (int64_t i = 0; i < isa.conv2.w.v.numel(); ++i) isa.conv2.w.v[i] = rng.gaussian(0, 0.2);
  for (int64_t i = 0; i < isa.off_conv.w.v.numel(); ++i)
    isa.off_conv.w.v[i] = rng.gaussian(0, 0.05);

  Tensor x = random_tensor({2, 4, 5, 6}, rng);
  Tensor y0 = isa.forward(x, true);
  Tensor proj = random_tensor(y0.shape(), rng);
  Tensor gx = isa.backward(proj);

  auto loss = [&] { return project(isa.forward(x, true), proj); };
  check_grad_subset(loss, isa.conv1.w.v, isa.conv1.w.g, 15, rng, 5e-4);
  check_grad_subset(loss, isa.dweight.v, isa.dweight.g, 15, rng, 5e-4);
  check_grad_subset(loss, isa.off_conv.w.v, isa.off_conv.w.g, 15, rng, 5e-4);
  check_grad_subset(loss, isa.off_conv.b.v, isa.off_conv.b.g, 6, rng, 5e-4);
  check_grad_subset(loss, isa.conv2.w.v, isa.conv2.w.g, 10, rng, 5e-4);
  check_grad_subset(loss, isa.bn1.gamma.v, isa.bn1.gamma.g, 4, rng, 5e-4);

  Rng pick(55);
  for (int s = 0; s < 10; ++s) {
    int64_t i = (int64_t)pick.uniform_int((int)x.numel());
    double save = x[i];
    const double h = 1e-6;
    x[i] = save + h;
    double lp = loss();
    x[i] = save - h;
    double lm = loss();
    x[i] = save;
    CHECK(grad_close(gx[i], (lp - lm) / (2 * h), 5e-4));
  }
}

TEST_CASE("csa with zeroed connections passes volumes through untouched") {
  Rng rng(33);
  std::vector<int> bins = {8, 4, 2, 1};
  CSAModule csa("csa", bins);
  csa.init(rng);
  for (int s = 0; s < 4; ++s)
    for (int k = 0; k < 4; ++k) {
      if (k == s) continue;
      auto& p = csa.path(s, k);
      for (auto& c : p.downs) {
        c.w.v.zero();
        c.b.v.zero();
      }
      if (k > s) {
        p.up.w.v.zero();
        p.up.b.v.zero();
      }
    }
  std::vector<Tensor> vols;
  vols.push_back(random_tensor({1, 8, 8, 16}, rng));
  vols.push_back(random_tensor({1, 4, 4, 8}, rng));
  vols.push_back(random_tensor({1, 2, 2, 4}, rng));
  vols.push_back(random_tensor({1, 1, 1, 2}, rng));
  auto outs = csa.forward(vols, false);
  for (int s = 0; s < 4; ++s) CHECK(max_abs_diff(outs[s], vols[s]) == 0.0);
}

TEST_CASE("csa gradients match finite differences") {
  Rng rng(34);
  std::vector<int> bins = {4, 2};
  CSAModule csa("csa", bins);
  csa.init(rng);
  std::vector<Tensor> vols;
  vols.push_back(random_tensor({2, 4, 4, 8}, rng));
  vols.push_back(random_tensor({2, 2, 2, 4}, rng));
  auto outs = csa.forward(vols, true);
  std::vector<Tensor> proj;
  for (auto& o : outs) proj.push_back(random_tensor(o.shape(), rng));
  auto gv = csa.backward(proj);

  auto loss = [&] {
    auto os = csa.forward(vols, true);
    double acc = 0;
    for (size_t i = 0; i < os.size(); ++i) acc += project(os[i], proj[i]);
    return acc;
  };
  auto& down = csa.path(1, 0).downs[0];
  auto& up = csa.path(0, 1).up;
  down.w.g.zero();
  down.b.g.zero();
  up.w.g.zero();
  up.b.g.zero();
  csa.forward(vols, true);
  csa.backward(proj);
  check_grad_subset(loss, down.w.v, down.w.g, 12, rng, 5e-4);
  check_grad_subset(loss, down.b.v, down.b.g, 2, rng, 5e-4);
  check_grad_subset(loss, up.w.v, up.w.g, 8, rng, 5e-4);

  // volume gradients
  Rng pick(56);
  for (int s = 0; s < 8; ++s) {
    int v = s % 2;
    int64_t i = (int64_t)pick.uniform_int((int)vols[v].numel());
    double save = vols[v][i];
    const double h = 1e-6;
    vols[v][i] = save + h;
    double lp = loss();
    vols[v][i] = save - h;
    double lm = loss();
    vols[v][i] = save;
    CHECK(grad_close(gv[v][i], (lp - lm) / (2 * h), 5e-4));
  }
}

TEST_CASE("aggregation stack runs only the active scales") {
  Rng rng(35);
  SearchSpaceDef sp;  // defaults: 4 scales, 3 modules
  AAStack agg(sp);
  agg.init(rng);
  std::vector<Tensor> vols;
  vols.push_back(random_tensor({1, 8, 8, 16}, rng));
  vols.push_back(random_tensor({1, 4, 4, 8}, rng));
  auto outs = agg.forward(vols, false);
  REQUIRE(outs.size() == 2);
  CHECK(outs[0].shape() == std::vector<int>{1, 8, 8, 16});
  CHECK(outs[1].shape() == std::vector<int>{1, 4, 4, 8});
  CHECK(agg.isa_calls == std::vector<long long>{3, 3, 0, 0});

  // perturbing everything that only serves scales 3 and 4 changes nothing
  std::vector<Tensor> before;
  for (auto& o : outs) before.push_back(o);
  Rng noise(36);
  for (auto& m : agg.modules) {
    ParamRefs r;
    m.isa[2].collect(r);
    m.isa[3].collect(r);
    for (int s = 0; s < 4; ++s)
      for (int k = 0; k < 4; ++k)
        if (k != s && (s >= 2 || k >= 2)) m.csa.path(s, k).collect(r);
    for (auto* p : r.params)
      for (int64_t i = 0; i < p->v.numel(); ++i) p->v[i] += noise.gaussian(0, 1.0);
  }
  auto after = agg.forward(vols, false);
  CHECK(max_abs_diff(after[0], before[0]) == 0.0);
  CHECK(max_abs_diff(after[1], before[1]) == 0.0);
}

TEST_CASE("refinement is a pure rescaled upsample at init") {
  Rng rng(37);
  RefineModule rf("rf", 4, {1, 2});
  rf.init(rng);
  Tensor disp = random_tensor({1, 1, 4, 8}, rng, 0.0, 2.0);
  Tensor left = random_tensor({1, 3, 8, 16}, rng);
  Tensor right = random_tensor({1, 3, 8, 16}, rng);
  Tensor out = rf.forward(disp, left, right, false);
  Tensor expect = upsample_disparity(disp, 8, 16);
  CHECK(max_abs_diff(out, expect) == 0.0);
}

TEST_CASE("refinement gradients match finite differences") {
  Rng rng(38);
  RefineModule rf("rf", 4, {1, 2});
  rf.init(rng);
  init_he_normal(rf.conv_out.w, 4 * 9, rng);
  for (int64_t i = 0; i < rf.conv_out.w.v.numel(); ++i) rf.conv_out.w.v[i] *= 0.3;

  Tensor disp = random_tensor({2, 1, 4, 6}, rng, 0.3, 2.7);
  Tensor left = random_tensor({2, 3, 8, 12}, rng);
  Tensor right = random_tensor({2, 3, 8, 12}, rng);

  Tensor out = rf.forward(disp, left, right, true);
  Tensor proj = random_tensor(out.shape(), rng);
  Tensor gdisp = rf.backward(proj);

  auto loss = [&] { return project(rf.forward(disp, left, right, true), proj); };
  check_grad_subset(loss, rf.conv_in.w.v, rf.conv_in.w.g, 12, rng, 1e-3);
  check_grad_subset(loss, rf.mids[0].w.v, rf.mids[0].w.g, 12, rng, 1e-3);
  check_grad_subset(loss, rf.conv_out.w.v, rf.conv_out.w.g, 10, rng, 1e-3);
  check_grad_subset(loss, rf.conv_out.b.v, rf.conv_out.b.g, 1, rng, 1e-3);
  check_grad_subset(loss, rf.bns[1].beta.v, rf.bns[1].beta.g, 4, rng, 1e-3);

  Rng pick(57);
  for (int s = 0; s < 12; ++s) {
    int64_t i = (int64_t)pick.uniform_int((int)disp.numel());
    double save = disp[i];
    const double h = 1e-5;
    disp[i] = save + h;
    double lp = loss();
    disp[i] = save - h;
    double lm = loss();
    disp[i] = save;
    CHECK(grad_close(gdisp[i], (lp - lm) / (2 * h), 1e-3));
  }
}

TEST_CASE("supernet output shapes and init behavior") {
  SearchSpaceDef sp;  // desk defaults
  Supernet net(sp);
  net.init(401);
  Rng rng(41);
  Tensor left = random_tensor({1, 3, 48, 96}, rng, 0.0, 1.0);
  Tensor right = random_tensor({1, 3, 48, 96}, rng, 0.0, 1.0);

  ArchConfig cfg = maximal_config(sp);
  NetOutputs out = net.forward(left, right, cfg, false);
  REQUIRE(out.scales.size() == 4);
  CHECK(out.scales[0].shape() == std::vector<int>{1, 1, 16, 32});
  CHECK(out.scales[1].shape() == std::vector<int>{1, 1, 8, 16});
  CHECK(out.scales[2].shape() == std::vector<int>{1, 1, 4, 8});
  CHECK(out.scales[3].shape() == std::vector<int>{1, 1, 2, 4});
  CHECK(out.half.shape() == std::vector<int>{1, 1, 24, 48});
  CHECK(out.full.shape() == std::vector<int>{1, 1, 48, 96});

  // zero-init residual refinements: both stages are plain upsamples at init
  CHECK(max_abs_diff(out.half, upsample_disparity(out.scales[0], 24, 48)) == 0.0);
  CHECK(max_abs_diff(out.full, upsample_disparity(out.half, 48, 96)) == 0.0);
  CHECK(max_abs_diff(Supernet::full_res(out, 48, 96), out.full) == 0.0);

  // refine_depth 1 stops at the half map
  ArchConfig cfg1 = cfg;
  cfg1.refine_depth = 1;
  NetOutputs out1 = net.forward(left, right, cfg1, false);
  CHECK(out1.full.empty());
  Tensor fr = Supernet::full_res(out1, 48, 96);
  CHECK(fr.shape() == std::vector<int>{1, 1, 48, 96});
  CHECK(max_abs_diff(fr, upsample_disparity(out1.half, 48, 96)) == 0.0);

  // disparities out of the softmax are nonnegative and bounded by the bins
  for (int64_t i = 0; i < out.scales[0].numel(); ++i) {
    CHECK(out.scales[0][i] >= 0.0);
    CHECK(out.scales[0][i] <= 7.0);
  }
}

TEST_CASE("loss defaults and unit-term total") {
  LossWeights w4 = LossWeights::defaults(4);
  REQUIRE(w4.scale_w.size() == 4);
  CHECK(w4.scale_w[0] == 1.0);
  CHECK(w4.scale_w[1] == 1.0);
  CHECK(w4.scale_w[2] == doctest::Approx(2.0 / 3.0));
  CHECK(w4.scale_w[3] == doctest::Approx(1.0 / 3.0));
  CHECK(w4.half_w == 1.0);
  CHECK(w4.full_w == 1.0);

  // craft outputs whose every term equals exactly 1, weights then sum to 5
  const int H = 24, W = 48;
  NetOutputs out;
  out.refine_depth = 2;
  for (int s = 0; s < 4; ++s) {
    const int hs = H / (3 << s) > 0 ? H / (3 << s) : 1;
    const int ws = W / (3 << s) > 0 ? W / (3 << s) : 1;
    const double vs = static_cast<double>(W) / ws;
    out.scales.push_back(Tensor::full({1, 1, hs, ws}, 1.5 / vs));
  }
  out.half = Tensor::full({1, 1, H / 2, W / 2}, 0.75);
  out.full = Tensor::full({1, 1, H, W}, 1.5);
  Tensor target({1, 1, H, W});
  Tensor mask = Tensor::full({1, 1, H, W}, 1.0);

  LossBreakdown br = supervised_loss(out, target, mask, w4, nullptr);
  for (int s = 0; s < 4; ++s) CHECK(br.scale_terms[s] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(br.half_term == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(br.full_term == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(br.total == doctest::Approx(5.0).epsilon(1e-12));

  // refine depth 1: the full-res term drops
  NetOutputs out1 = out;
  out1.refine_depth = 1;
  out1.full = Tensor();
  LossBreakdown br1 = supervised_loss(out1, target, mask, w4, nullptr);
  CHECK(br1.total == doctest::Approx(4.0).epsilon(1e-12));
}

TEST_CASE("loss gradients match finite differences") {
  Rng rng(42);
  const int H = 12, W = 18;
  NetOutputs out;
  out.refine_depth = 2;
  out.scales.push_back(random_tensor({1, 1, 4, 6}, rng, 0.0, 3.0));
  out.scales.push_back(random_tensor({1, 1, 2, 3}, rng, 0.0, 2.0));
  out.half = random_tensor({1, 1, 6, 9}, rng, 0.0, 4.0);
  out.full = random_tensor({1, 1, H, W}, rng, 0.0, 6.0);
  Tensor target = random_tensor({1, 1, H, W}, rng, 0.0, 6.0);
  Tensor mask({1, 1, H, W});
  for (int64_t i = 0; i < mask.numel(); ++i) mask[i] = rng.uniform() < 0.8 ? 1.0 : 0.0;

  LossWeights w = LossWeights::defaults(2);
  NetGrads g;
  LossBreakdown br = supervised_loss(out, target, mask, w, &g);
  CHECK(br.total > 0.0);

  auto fd_check = [&](Tensor& t, const Tensor& gt, int samples, Rng& pick) {
    for (int s = 0; s < samples; ++s) {
      int64_t i = (int64_t)pick.uniform_int((int)t.numel());
      double save = t[i];
      const double h = 1e-6;
      t[i] = save + h;
      double lp = supervised_loss(out, target, mask, w, nullptr).total;
      t[i] = save - h;
      double lm = supervised_loss(out, target, mask, w, nullptr).total;
      t[i] = save;
      CHECK(grad_close(gt[i], (lp - lm) / (2 * h), 1e-4));
    }
  };
  Rng pick(58);
  fd_check(out.scales[0], g.scales[0], 10, pick);
  fd_check(out.scales[1], g.scales[1], 6, pick);
  fd_check(out.half, g.half, 10, pick);
  fd_check(out.full, g.full, 10, pick);
}

TEST_CASE("supernet end to end gradient check") {
  SearchSpaceDef sp = net_tiny();
  Supernet net(sp);
  net.init(402);
  Rng rng(43);
  const int H = 12, W = 24;
  Tensor left = random_tensor({1, 3, H, W}, rng, 0.0, 1.0);
  Tensor right = random_tensor({1, 3, H, W}, rng, 0.0, 1.0);
  Tensor target = random_tensor({1, 1, H, W}, rng, 0.0, 4.0);
  Tensor mask = Tensor::full({1, 1, H, W}, 1.0);
  ArchConfig cfg = net_tiny_full();
  LossWeights w = LossWeights::defaults(2);

  // roughen the zero-init layers so every gradient path is live
  for (auto& m : net.agg.modules)
    for (auto& isa : m.isa) {
      for (int64_t i = 0; i < isa.conv2.w.v.numel(); ++i)
        isa.conv2.w.v[i] = rng.gaussian(0, 0.2);
      for (int64_t i = 0; i < isa.off_conv.w.v.numel(); ++i)
        isa.off_conv.w.v[i] = rng.gaussian(0, 0.02);
    }
  for (RefineModule* rf : {&net.refine_half, &net.refine_full}) {
    init_he_normal(rf->conv_out.w, rf->conv_out.cin() * 9, rng);
    for (int64_t i = 0; i < rf->conv_out.w.v.numel(); ++i) rf->conv_out.w.v[i] *= 0.2;
  }

  auto run = [&] {
    NetOutputs out = net.forward(left, right, cfg, true);
    return supervised_loss(out, target, mask, w, nullptr).total;
  };

  ParamRefs refs;
  net.collect(refs);
  for (auto* p : refs.params) p->g.zero();
  NetOutputs out = net.forward(left, right, cfg, true);
  NetGrads g;
  supervised_loss(out, target, mask, w, &g);
  net.backward(g);

  check_grad_subset(run, net.extractor.stem.w.v, net.extractor.stem.w.g, 8, rng, 2e-3, 1e-5);
  check_grad_subset(run, net.extractor.units[0][0].dw.full.v,
                    net.extractor.units[0][0].dw.full.g, 8, rng, 2e-3, 1e-5);
  check_grad_subset(run, net.extractor.units[1][0].expand.w.v,
                    net.extractor.units[1][0].expand.w.g, 8, rng, 2e-3, 1e-5);
  check_grad_subset(run, net.agg.modules[0].isa[0].dweight.v,
                    net.agg.modules[0].isa[0].dweight.g, 8, rng, 2e-3, 1e-5);
  check_grad_subset(run, net.agg.modules[0].csa.path(1, 0).downs[0].w.v,
                    net.agg.modules[0].csa.path(1, 0).downs[0].w.g, 6, rng, 2e-3, 1e-5);
  check_grad_subset(run, net.refine_half.conv_in.w.v, net.refine_half.conv_in.w.g, 8, rng,
                    2e-3, 1e-5);
  check_grad_subset(run, net.refine_full.conv_out.w.v, net.refine_full.conv_out.w.g, 6, rng,
                    2e-3, 1e-5);

  // a couple of params that the sampled structure never touches stay zero
  CHECK(tensor_mass(net.extractor.units[0][0].dw.t53.g) == 0.0);
  CHECK(tensor_mass(net.agg.modules[0].isa[1].conv1.w.g) > 0.0);
}
