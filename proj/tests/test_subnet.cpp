#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>

#include "sflex/checkpoint.hpp"
#include "sflex/subnet.hpp"
#include "test_util.hpp"

using namespace sflex;
using namespace sflex::testutil;

namespace {

SearchSpaceDef sub_tiny() {
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

// a couple of training forwards so the running statistics leave their init
// values and the fold has something real to absorb
void warm_stats(Supernet& net, Rng& rng, int h, int w) {
  const ArchConfig cfg = maximal_config(net.space);
  for (int i = 0; i < 2; ++i) {
    Tensor l = random_tensor({1, 3, h, w}, rng, 0.0, 1.0);
    Tensor r = random_tensor({1, 3, h, w}, rng, 0.0, 1.0);
    net.forward(l, r, cfg, true);
  }
}

// zero-init convs would hide wiring mistakes behind exact zeros
void jitter_params(Supernet& net, Rng& rng) {
  ParamRefs refs;
  net.collect(refs);
  for (Param* p : refs.params)
    for (int64_t i = 0; i < p->v.numel(); ++i) p->v[i] += rng.uniform(-0.05, 0.05);
}

double max_rel_err(const Tensor& a, const Tensor& b) {
  REQUIRE(a.same_shape(b));
  double worst = 0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    const double d = std::abs(a[i] - b[i]) / (1e-6 + std::max(std::abs(a[i]), std::abs(b[i])));
    worst = std::max(worst, d);
  }
  return worst;
}

Tensor super_eval(Supernet& net, const Tensor& l, const Tensor& r, const ArchConfig& cfg) {
  NetOutputs out = net.forward(l, r, cfg, false);
  return Supernet::full_res(out, l.h(), l.w());
}

std::string tmp_file(const char* stem) {
  return (std::filesystem::temp_directory_path() / stem).string();
}

}  // namespace

TEST_CASE("extracted maximal config matches the supernet") {
  const SearchSpaceDef sp = sub_tiny();
  Supernet net(sp);
  net.init(71);
  Rng rng(72);
  jitter_params(net, rng);
  warm_stats(net, rng, 24, 36);

  const ArchConfig cfg = maximal_config(sp);
  Tensor l = random_tensor({1, 3, 24, 36}, rng, 0.0, 1.0);
  Tensor r = random_tensor({1, 3, 24, 36}, rng, 0.0, 1.0);
  Tensor want = super_eval(net, l, r, cfg);

  Subnet sub = Subnet::extract(net, cfg);
  Tensor got = sub.forward(l, r);
  CHECK(max_rel_err(want, got) < 1e-5);

  CHECK(sub.param_count() == estimate_cost(cfg, sp, 24, 36).params);
  // parameter totals never depend on the input size
  CHECK(sub.param_count() == estimate_cost(cfg, sp, 48, 72).params);
}

TEST_CASE("extracted random configs match the supernet") {
  const SearchSpaceDef sp = sub_tiny();
  Supernet net(sp);
  net.init(73);
  Rng rng(74);
  jitter_params(net, rng);
  warm_stats(net, rng, 24, 36);

  Tensor l = random_tensor({1, 3, 24, 36}, rng, 0.0, 1.0);
  Tensor r = random_tensor({1, 3, 24, 36}, rng, 0.0, 1.0);

  for (int trial = 0; trial < 6; ++trial) {
    const ArchConfig cfg = sample_uniform(sp, rng);
    CAPTURE(trial);
    CAPTURE(cfg.brief());
    Tensor want = super_eval(net, l, r, cfg);
    Subnet sub = Subnet::extract(net, cfg);
    CHECK(max_rel_err(want, sub.forward(l, r)) < 1e-5);
    CHECK(sub.param_count() == estimate_cost(cfg, sp, 24, 36).params);
  }
}

TEST_CASE("full-size maximal extraction lines up with the cost model") {
  const SearchSpaceDef sp;  // stock desk sizing
  Supernet net(sp);
  net.init(75);
  Rng rng(76);

  const ArchConfig cfg = maximal_config(sp);
  Tensor l = random_tensor({1, 3, 48, 72}, rng, 0.0, 1.0);
  Tensor r = random_tensor({1, 3, 48, 72}, rng, 0.0, 1.0);
  Tensor want = super_eval(net, l, r, cfg);

  Subnet sub = Subnet::extract(net, cfg);
  CHECK(max_rel_err(want, sub.forward(l, r)) < 1e-5);
  CHECK(sub.param_count() == estimate_cost(cfg, sp, 48, 72).params);

  const ArchConfig small = minimal_config(sp);
  Subnet sub2 = Subnet::extract(net, small);
  CHECK(sub2.param_count() == estimate_cost(small, sp, 48, 72).params);
  CHECK(sub2.param_count() < sub.param_count());
}

TEST_CASE("extraction is idempotent and the file round trips") {
  const SearchSpaceDef sp = sub_tiny();
  Supernet net(sp);
  net.init(77);
  Rng rng(78);
  jitter_params(net, rng);
  warm_stats(net, rng, 24, 36);

  ArchConfig cfg = maximal_config(sp);
  cfg.refine_depth = 1;
  Subnet a = Subnet::extract(net, cfg);
  Subnet b = Subnet::extract(net, cfg);

  const std::string pa = tmp_file("sub_a.bin"), pb = tmp_file("sub_b.bin");
  a.save(pa);
  b.save(pb);
  std::ifstream fa(pa, std::ios::binary), fb(pb, std::ios::binary);
  std::string ba((std::istreambuf_iterator<char>(fa)), {});
  std::string bb((std::istreambuf_iterator<char>(fb)), {});
  CHECK(ba == bb);

  Subnet c = Subnet::load(pa);
  CHECK(c.cfg == a.cfg);
  CHECK(c.param_count() == a.param_count());
  Tensor l = random_tensor({1, 3, 24, 36}, rng, 0.0, 1.0);
  Tensor r = random_tensor({1, 3, 24, 36}, rng, 0.0, 1.0);
  CHECK(max_abs_diff(a.forward(l, r), c.forward(l, r)) == 0.0);
  std::remove(pa.c_str());
  std::remove(pb.c_str());
}

TEST_CASE("subnet files reject foreign or damaged bundles") {
  const SearchSpaceDef sp = sub_tiny();
  const std::string path = tmp_file("sub_bad.bin");

  SUBCASE("wrong kind") {
    json meta;
    meta["kind"] = "something-else";
    write_bundle(path, meta, {});
    CHECK_THROWS_AS(Subnet::load(path), std::runtime_error);
  }

  SUBCASE("missing tensor") {
    Supernet net(sp);
    net.init(79);
    Subnet sub = Subnet::extract(net, minimal_config(sp));
    sub.save(path);
    std::map<std::string, Tensor> blobs;
    json meta = read_bundle(path, &blobs);
    blobs.erase("stem.b");
    std::vector<NamedTensor> rest;
    for (auto& [n, t] : blobs) rest.push_back({n, t});
    write_bundle(path, meta, rest);
    CHECK_THROWS_WITH_AS(Subnet::load(path), doctest::Contains("missing tensor"),
                         std::runtime_error);
  }
  std::remove(path.c_str());
}
