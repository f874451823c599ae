#include "sflex/trainer.hpp"

#include <cmath>
#include <limits>

namespace sflex {

const char* stage_name(Stage s) {
  switch (s) {
    case Stage::full: return "full";
    case Stage::kernel: return "kernel";
    case Stage::depth: return "depth";
    case Stage::width: return "width";
    case Stage::scale: return "scale";
    case Stage::refine: return "refine";
  }
  return "?";
}

Stage stage_from_name(const std::string& name) {
  for (int i = 0; i < kNumStages; ++i)
    if (name == stage_name(static_cast<Stage>(i))) return static_cast<Stage>(i);
  throw std::invalid_argument("unknown stage: " + name);
}

SampleDims stage_dims(Stage s) {
  SampleDims d;
  const int idx = static_cast<int>(s);
  d.kernel = idx >= static_cast<int>(Stage::kernel);
  d.depth = idx >= static_cast<int>(Stage::depth);
  d.width = idx >= static_cast<int>(Stage::width);
  d.scale = idx >= static_cast<int>(Stage::scale);
  d.refine = idx >= static_cast<int>(Stage::refine);
  return d;
}

std::vector<StageSchedule> desk_schedule() {
  std::vector<StageSchedule> v;
  v.push_back({Stage::full, 6, 1e-3});
  for (int i = 1; i < kNumStages; ++i) v.push_back({static_cast<Stage>(i), 2, 5e-4});
  return v;
}

std::vector<StageSchedule> paper_schedule() {
  std::vector<StageSchedule> v;
  v.push_back({Stage::full, 64, 1e-3});
  for (int i = 1; i < kNumStages; ++i) v.push_back({static_cast<Stage>(i), 25, 5e-4});
  return v;
}

std::vector<StageSchedule> schedule_preset(const std::string& name) {
  if (name == "desk") return desk_schedule();
  if (name == "paper-schedule") return paper_schedule();
  throw std::invalid_argument("unknown preset: " + name);
}

double stage_lr(const StageSchedule& sched, int epoch) {
  const int d1 = sched.epochs * 2 / 5;
  const int d2 = sched.epochs * 4 / 5;
  double lr = sched.lr0;
  if (d1 > 0 && epoch >= d1) lr *= 0.5;
  if (d2 > d1 && epoch >= d2) lr *= 0.5;
  return lr;
}

std::unique_ptr<TrainSession> TrainSession::fresh(const SearchSpaceDef& space,
                                                  uint64_t seed) {
  auto s = std::unique_ptr<TrainSession>(new TrainSession());
  s->space = space;
  s->net = Supernet(space);
  s->net.init(seed);
  s->net.collect(s->refs);
  s->opt.attach(s->refs.params);
  s->rng.reseed(seed + 1);
  s->st = TrainState{};
  return s;
}

std::unique_ptr<TrainSession> TrainSession::resume(const std::string& ckpt_path) {
  auto s = std::unique_ptr<TrainSession>(new TrainSession());
  s->space = read_checkpoint_space(ckpt_path);
  s->net = Supernet(s->space);
  s->net.collect(s->refs);
  s->opt.attach(s->refs.params);
  s->st = load_train_checkpoint(ckpt_path, s->refs, &s->opt);
  s->rng.set_state_str(s->st.rng_state);
  return s;
}

void TrainSession::save(const std::string& path) {
  st.rng_state = rng.state_str();
  save_train_checkpoint(path, space, refs, &opt, st);
}

double eval_epe(Supernet& net, const StereoFolder& data, const ArchConfig& cfg,
                std::vector<double>* per_sample) {
  if (per_sample) per_sample->clear();
  double acc = 0;
  for (int i = 0; i < data.size(); ++i) {
    StereoSample smp = data.get(i);
    NetOutputs out = net.forward(smp.left, smp.right, cfg, false);
    const Tensor pred =
        Supernet::full_res(out, smp.disp.shape()[2], smp.disp.shape()[3]);
    const double e = end_point_error(pred, smp.disp, smp.mask);
    if (per_sample) per_sample->push_back(e);
    acc += e;
  }
  return acc / data.size();
}

namespace {

void shuffle(std::vector<int>& v, Rng& rng) {
  for (int i = static_cast<int>(v.size()) - 1; i > 0; --i)
    std::swap(v[i], v[rng.uniform_int(i + 1)]);
}

}  // namespace

std::vector<TrainLogRow> run_stage(TrainSession& s, const StageSchedule& sched,
                                   const StereoFolder& train, const StereoFolder* val,
                                   const TrainOptions& opt) {
  const int target = static_cast<int>(sched.stage);
  if (sched.epochs <= 0) return {};

  const bool advancing = s.st.stage == target - 1;
  const bool resuming = s.st.stage == target && s.st.epoch < sched.epochs;
  if (!advancing && !resuming) {
    if (s.st.stage == target)
      throw StageOrderError(std::string("stage ") + stage_name(sched.stage) +
                            " already complete");
    throw StageOrderError(std::string("cannot enter stage ") + stage_name(sched.stage) +
                          " from stage " + stage_name(static_cast<Stage>(s.st.stage)));
  }
  if (advancing) {
    s.st.stage = target;
    s.st.epoch = 0;
    if (sched.stage == Stage::width) {
      // one-time importance reorder so width cuts keep the heavy channels
      s.net.extractor.sort_all_expanded_channels(
          [&](const std::string& name, int axis, const std::vector<int>& order) {
            s.opt.permute_slot(name, axis, order);
          });
    }
  }

  const SampleDims dims = stage_dims(sched.stage);
  const ArchConfig max_cfg = maximal_config(s.space);
  std::vector<TrainLogRow> rows;

  for (int epoch = s.st.epoch; epoch < sched.epochs; ++epoch) {
    const double lr = stage_lr(sched, epoch);
    s.opt.lr = lr;

    std::vector<int> order(train.size());
    for (int i = 0; i < train.size(); ++i) order[i] = i;
    shuffle(order, s.rng);

    double loss_sum = 0;
    for (int idx : order) {
      StereoSample smp = train.get(idx);
      const ArchConfig cfg =
          sched.stage == Stage::full ? max_cfg : sample_uniform(s.space, s.rng, dims);

      s.opt.zero_grad();
      NetOutputs out = s.net.forward(smp.left, smp.right, cfg, true);
      NetGrads grads;
      const LossBreakdown lb = supervised_loss(
          out, smp.disp, smp.mask, LossWeights::defaults(cfg.scale), &grads);
      if (!std::isfinite(lb.total) || lb.total > opt.diverge_threshold)
        throw DivergenceError("training diverged: loss " + std::to_string(lb.total) +
                              " at step " + std::to_string(s.st.step));
      s.net.backward(grads);
      s.opt.step();
      s.st.step++;
      loss_sum += lb.total;
    }
    s.st.epoch = epoch + 1;

    TrainLogRow row;
    row.stage = sched.stage;
    row.epoch = s.st.epoch;
    row.lr = lr;
    row.loss = loss_sum / train.size();
    row.epe = val ? eval_epe(s.net, *val, max_cfg) : std::numeric_limits<double>::quiet_NaN();
    if (opt.log) opt.log(row);
    rows.push_back(row);
  }
  return rows;
}

}  // namespace sflex
