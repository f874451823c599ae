#pragma once

#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "sflex/checkpoint.hpp"
#include "sflex/data.hpp"
#include "sflex/loss.hpp"
#include "sflex/optimizer.hpp"
#include "sflex/supernet.hpp"

namespace sflex {

// Shrink schedule positions. Every stage keeps the dimensions unlocked by the
// stages before it, so the sampler's freedom grows one axis at a time.
enum class Stage { full = 0, kernel, depth, width, scale, refine };
constexpr int kNumStages = 6;

const char* stage_name(Stage s);
Stage stage_from_name(const std::string& name);  // throws on unknown name
SampleDims stage_dims(Stage s);

struct StageSchedule {
  Stage stage = Stage::full;
  int epochs = 0;
  double lr0 = 1e-3;
};

// named presets; index by static_cast<int>(Stage)
std::vector<StageSchedule> desk_schedule();
std::vector<StageSchedule> paper_schedule();
std::vector<StageSchedule> schedule_preset(const std::string& name);  // throws on unknown

// learning rate for a 0-based epoch: halved at 2/5 and 4/5 of the stage
double stage_lr(const StageSchedule& sched, int epoch);

struct TrainLogRow {
  Stage stage = Stage::full;
  int epoch = 0;  // 1-based within the stage
  double lr = 0.0;
  double loss = 0.0;
  double epe = 0.0;  // validation, maximal config; nan when no val split given
};

struct TrainOptions {
  double diverge_threshold = 1e3;
  std::function<void(const TrainLogRow&)> log;
};

struct StageOrderError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Everything one training run owns. Param refs point into the net, so the
// session is pinned in place once built.
class TrainSession {
 public:
  TrainSession(const TrainSession&) = delete;
  TrainSession& operator=(const TrainSession&) = delete;

  static std::unique_ptr<TrainSession> fresh(const SearchSpaceDef& space, uint64_t seed);
  static std::unique_ptr<TrainSession> resume(const std::string& ckpt_path);
  void save(const std::string& path);

  SearchSpaceDef space;
  Supernet net;
  ParamRefs refs;
  Adam opt;
  Rng rng;
  TrainState st;

 private:
  TrainSession() = default;
};

// Runs one stage of the schedule until st.epoch reaches sched.epochs.
// Entering a stage requires the previous stage as the checkpoint position;
// re-entering the current stage is allowed only while it has epochs left.
// Entering the width stage reorders channels by importance once, moving the
// optimizer slots along.
std::vector<TrainLogRow> run_stage(TrainSession& s, const StageSchedule& sched,
                                   const StereoFolder& train, const StereoFolder* val,
                                   const TrainOptions& opt = {});

// mean EPE of the config over a split; per_sample optionally receives each value
double eval_epe(Supernet& net, const StereoFolder& data, const ArchConfig& cfg,
                std::vector<double>* per_sample = nullptr);

}  // namespace sflex
