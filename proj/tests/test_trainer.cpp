#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "sflex/trainer.hpp"
#include "test_util.hpp"

using namespace sflex;
using namespace sflex::testutil;

namespace {

SearchSpaceDef train_tiny() {
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

// one shared micro dataset per binary run
const std::string& dataset_root() {
  static std::string root = [] {
    auto p = std::filesystem::temp_directory_path() / "sflex_trainer_ds";
    std::filesystem::remove_all(p);
    generate_dataset(p.string(), 2, 1, 24, 48, 6, 123);
    return p.string();
  }();
  return root;
}

bool params_equal(TrainSession& a, TrainSession& b) {
  if (a.refs.params.size() != b.refs.params.size()) return false;
  for (size_t i = 0; i < a.refs.params.size(); ++i)
    if (max_abs_diff(a.refs.params[i]->v, b.refs.params[i]->v) != 0.0) return false;
  for (size_t i = 0; i < a.refs.stats.size(); ++i)
    if (a.refs.stats[i]->v != b.refs.stats[i]->v) return false;
  return true;
}

std::string tmp_ckpt(const char* stem) {
  return (std::filesystem::temp_directory_path() / stem).string();
}

}  // namespace

TEST_CASE("stage names, dims and presets line up") {
  for (int i = 0; i < kNumStages; ++i) {
    const Stage s = static_cast<Stage>(i);
    CHECK(stage_from_name(stage_name(s)) == s);
  }
  CHECK_THROWS_AS(stage_from_name("bogus"), std::invalid_argument);

  const SampleDims none = stage_dims(Stage::full);
  CHECK_FALSE(none.kernel);
  CHECK_FALSE(none.refine);
  const SampleDims k = stage_dims(Stage::kernel);
  CHECK(k.kernel);
  CHECK_FALSE(k.depth);
  const SampleDims w = stage_dims(Stage::width);
  CHECK(w.kernel);
  CHECK(w.depth);
  CHECK(w.width);
  CHECK_FALSE(w.scale);
  const SampleDims r = stage_dims(Stage::refine);
  CHECK(r.kernel);
  CHECK(r.depth);
  CHECK(r.width);
  CHECK(r.scale);
  CHECK(r.refine);

  const auto desk = desk_schedule();
  REQUIRE(desk.size() == kNumStages);
  CHECK(desk[0].stage == Stage::full);
  CHECK(desk[0].epochs == 6);
  CHECK(desk[0].lr0 == 1e-3);
  for (int i = 1; i < kNumStages; ++i) {
    CHECK(desk[i].stage == static_cast<Stage>(i));
    CHECK(desk[i].epochs == 2);
    CHECK(desk[i].lr0 == 5e-4);
  }
  const auto paper = paper_schedule();
  CHECK(paper[0].epochs == 64);
  CHECK(paper[5].epochs == 25);
  CHECK(schedule_preset("desk").size() == kNumStages);
  CHECK(schedule_preset("paper-schedule")[1].lr0 == 5e-4);
  CHECK_THROWS_AS(schedule_preset("nope"), std::invalid_argument);
}

TEST_CASE("learning rate halves at two fifths and four fifths") {
  StageSchedule s{Stage::full, 25, 1.0};
  CHECK(stage_lr(s, 0) == 1.0);
  CHECK(stage_lr(s, 9) == 1.0);
  CHECK(stage_lr(s, 10) == 0.5);
  CHECK(stage_lr(s, 19) == 0.5);
  CHECK(stage_lr(s, 20) == 0.25);
  CHECK(stage_lr(s, 24) == 0.25);

  StageSchedule t{Stage::kernel, 5, 8.0};
  CHECK(stage_lr(t, 0) == 8.0);
  CHECK(stage_lr(t, 1) == 8.0);
  CHECK(stage_lr(t, 2) == 4.0);
  CHECK(stage_lr(t, 4) == 2.0);
}

TEST_CASE("fresh sessions train deterministically") {
  StereoFolder train(dataset_root(), "train");
  StereoFolder val(dataset_root(), "val");

  auto a = TrainSession::fresh(train_tiny(), 5);
  auto b = TrainSession::fresh(train_tiny(), 5);
  const StageSchedule sched{Stage::full, 1, 1e-3};
  auto ra = run_stage(*a, sched, train, &val);
  auto rb = run_stage(*b, sched, train, &val);

  REQUIRE(ra.size() == 1);
  CHECK(ra[0].epoch == 1);
  CHECK(ra[0].lr == 1e-3);
  CHECK(std::isfinite(ra[0].loss));
  CHECK(std::isfinite(ra[0].epe));
  CHECK(ra[0].loss == rb[0].loss);
  CHECK(ra[0].epe == rb[0].epe);
  CHECK(params_equal(*a, *b));
  CHECK(a->st.step == train.size());
  CHECK(a->opt.t == train.size());
}

TEST_CASE("row epe is nan without a validation split") {
  StereoFolder train(dataset_root(), "train");
  auto s = TrainSession::fresh(train_tiny(), 6);
  auto rows = run_stage(*s, {Stage::full, 1, 1e-3}, train, nullptr);
  REQUIRE(rows.size() == 1);
  CHECK(std::isnan(rows[0].epe));
}

TEST_CASE("stage order is enforced") {
  StereoFolder train(dataset_root(), "train");
  auto s = TrainSession::fresh(train_tiny(), 7);

  run_stage(*s, {Stage::full, 1, 1e-3}, train, nullptr);
  run_stage(*s, {Stage::kernel, 1, 5e-4}, train, nullptr);

  SUBCASE("repeating a finished stage") {
    CHECK_THROWS_WITH_AS(run_stage(*s, {Stage::kernel, 1, 5e-4}, train, nullptr),
                         doctest::Contains("already complete"), StageOrderError);
  }
  SUBCASE("skipping ahead") {
    CHECK_THROWS_WITH_AS(run_stage(*s, {Stage::width, 1, 5e-4}, train, nullptr),
                         doctest::Contains("cannot enter"), StageOrderError);
  }
  SUBCASE("going backwards") {
    CHECK_THROWS_AS(run_stage(*s, {Stage::full, 1, 1e-3}, train, nullptr), StageOrderError);
  }
  SUBCASE("next stage is fine") {
    auto rows = run_stage(*s, {Stage::depth, 1, 5e-4}, train, nullptr);
    CHECK(rows.size() == 1);
    CHECK(s->st.stage == static_cast<int>(Stage::depth));
  }
}

TEST_CASE("zero epochs is a no-op") {
  StereoFolder train(dataset_root(), "train");
  auto s = TrainSession::fresh(train_tiny(), 8);
  const long long step0 = s->st.step;
  auto rows = run_stage(*s, {Stage::kernel, 0, 5e-4}, train, nullptr);
  CHECK(rows.empty());
  CHECK(s->st.step == step0);
  CHECK(s->st.stage == 0);
}

TEST_CASE("early stages keep the locked dimensions at their maximum") {
  StereoFolder train(dataset_root(), "train");
  auto s = TrainSession::fresh(train_tiny(), 9);
  const long long n = train.size();

  run_stage(*s, {Stage::full, 1, 1e-3}, train, nullptr);
  CHECK(s->net.extractor.unit_calls[0] == n);
  CHECK(s->net.extractor.unit_calls[1] == n);

  // kernel, depth and width stages sample those axes but scale stays pinned,
  // so every unit still runs for every sample
  run_stage(*s, {Stage::kernel, 1, 5e-4}, train, nullptr);
  run_stage(*s, {Stage::depth, 1, 5e-4}, train, nullptr);
  run_stage(*s, {Stage::width, 1, 5e-4}, train, nullptr);
  CHECK(s->net.extractor.unit_calls[0] == 4 * n);
  CHECK(s->net.extractor.unit_calls[1] == 4 * n);

  // once scale unlocks the tail unit can be skipped
  run_stage(*s, {Stage::scale, 1, 5e-4}, train, nullptr);
  CHECK(s->net.extractor.unit_calls[0] == 5 * n);
  CHECK(s->net.extractor.unit_calls[1] >= 4 * n);
  CHECK(s->net.extractor.unit_calls[1] <= 5 * n);
}

TEST_CASE("divergence guard throws before the step is taken") {
  StereoFolder train(dataset_root(), "train");
  auto s = TrainSession::fresh(train_tiny(), 10);
  TrainOptions topt;
  topt.diverge_threshold = 1e-12;
  CHECK_THROWS_AS(run_stage(*s, {Stage::full, 1, 1e-3}, train, nullptr, topt),
                  DivergenceError);
  CHECK(s->st.step == 0);
}

TEST_CASE("log callback sees every epoch row") {
  StereoFolder train(dataset_root(), "train");
  auto s = TrainSession::fresh(train_tiny(), 11);
  TrainOptions topt;
  std::vector<double> lrs;
  topt.log = [&](const TrainLogRow& r) { lrs.push_back(r.lr); };
  auto rows = run_stage(*s, {Stage::full, 5, 1e-3}, train, nullptr, topt);
  REQUIRE(rows.size() == 5);
  REQUIRE(lrs.size() == 5);
  CHECK(lrs[0] == 1e-3);
  CHECK(lrs[1] == 1e-3);
  CHECK(lrs[2] == 5e-4);
  CHECK(lrs[3] == 5e-4);
  CHECK(lrs[4] == 2.5e-4);
  for (size_t i = 0; i < rows.size(); ++i) CHECK(rows[i].lr == lrs[i]);
}

TEST_CASE("entering the width stage keeps the maximal function intact") {
  StereoFolder train(dataset_root(), "train");
  auto s = TrainSession::fresh(train_tiny(), 12);
  run_stage(*s, {Stage::full, 1, 1e-3}, train, nullptr);

  StereoSample smp = train.get(0);
  const ArchConfig cfg = maximal_config(s->space);
  NetOutputs o0 = s->net.forward(smp.left, smp.right, cfg, false);
  Tensor before = Supernet::full_res(o0, smp.left.h(), smp.left.w());

  // the reorder run_stage performs on entry, without the training epochs
  s->net.extractor.sort_all_expanded_channels(
      [&](const std::string& name, int axis, const std::vector<int>& order) {
        s->opt.permute_slot(name, axis, order);
      });

  NetOutputs o1 = s->net.forward(smp.left, smp.right, cfg, false);
  Tensor after = Supernet::full_res(o1, smp.left.h(), smp.left.w());
  CHECK(max_abs_diff(before, after) < 1e-9);
}

TEST_CASE("checkpoint resume continues bit exactly") {
  StereoFolder train(dataset_root(), "train");
  const std::string ck0 = tmp_ckpt("resume0.ckpt"), ck1 = tmp_ckpt("resume1.ckpt");

  auto a = TrainSession::fresh(train_tiny(), 13);
  run_stage(*a, {Stage::full, 1, 1e-3}, train, nullptr);
  run_stage(*a, {Stage::kernel, 1, 5e-4}, train, nullptr);
  run_stage(*a, {Stage::depth, 1, 5e-4}, train, nullptr);
  a->save(ck0);

  // straight: two width epochs in one go
  run_stage(*a, {Stage::width, 2, 5e-4}, train, nullptr);

  // split: one epoch, checkpoint, resume, finish the stage
  auto b = TrainSession::resume(ck0);
  run_stage(*b, {Stage::width, 1, 5e-4}, train, nullptr);
  b->save(ck1);
  auto c = TrainSession::resume(ck1);
  run_stage(*c, {Stage::width, 2, 5e-4}, train, nullptr);

  CHECK(params_equal(*a, *c));
  CHECK(a->st.step == c->st.step);
  CHECK(a->st.epoch == c->st.epoch);
  CHECK(a->opt.t == c->opt.t);
  CHECK(a->rng.state_str() == c->rng.state_str());
  for (const auto& [name, slot] : a->opt.slots) {
    auto it = c->opt.slots.find(name);
    REQUIRE(it != c->opt.slots.end());
    CHECK(max_abs_diff(slot.m, it->second.m) == 0.0);
    CHECK(max_abs_diff(slot.v, it->second.v) == 0.0);
  }
  std::remove(ck0.c_str());
  std::remove(ck1.c_str());
}

TEST_CASE("eval epe reports per sample values") {
  StereoFolder val(dataset_root(), "val");
  auto s = TrainSession::fresh(train_tiny(), 14);
  std::vector<double> per;
  const double mean = eval_epe(s->net, val, maximal_config(s->space), &per);
  REQUIRE((int)per.size() == val.size());
  double acc = 0;
  for (double v : per) {
    CHECK(std::isfinite(v));
    CHECK(v >= 0.0);
    acc += v;
  }
  CHECK(mean == doctest::Approx(acc / per.size()).epsilon(1e-12));
}
