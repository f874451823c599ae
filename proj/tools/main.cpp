#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "sflex/deploy.hpp"
#include "sflex/subnet.hpp"
#include "sflex/trainer.hpp"
#include "svg_scatter.hpp"

using namespace sflex;
namespace fs = std::filesystem;

namespace {

constexpr int kOk = 0, kUsage = 2, kStageOrder = 3, kInfeasible = 4;

// desk and paper-schedule come from the trainer; smoke is a one-epoch
// pipeline pass for CI and quick checks
std::vector<StageSchedule> preset_schedule(const std::string& name) {
  if (name == "smoke") {
    std::vector<StageSchedule> v;
    v.push_back({Stage::full, 1, 1e-3});
    for (int i = 1; i < kNumStages; ++i) v.push_back({static_cast<Stage>(i), 1, 5e-4});
    return v;
  }
  return schedule_preset(name);
}

json row_json(const TrainLogRow& r) {
  json j;
  j["stage"] = stage_name(r.stage);
  j["epoch"] = r.epoch;
  j["lr"] = r.lr;
  j["loss"] = r.loss;
  if (std::isnan(r.epe))
    j["epe"] = nullptr;
  else
    j["epe"] = r.epe;
  return j;
}

ArchConfig config_from_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read config file " + path);
  return ArchConfig::from_json(json::parse(f));
}

void write_config_file(const std::string& path, const ArchConfig& cfg) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << cfg.to_json().dump(2) << "\n";
}

bool has_split(const std::string& root, const char* split) {
  return fs::is_directory(fs::path(root) / split);
}

double subnet_split_epe(const Subnet& sub, const StereoFolder& ds, std::vector<double>* per) {
  double acc = 0;
  for (int i = 0; i < ds.size(); ++i) {
    StereoSample s = ds.get(i);
    const double e = end_point_error(sub.forward(s.left, s.right), s.disp, s.mask);
    if (per) per->push_back(e);
    acc += e;
  }
  return acc / ds.size();
}

struct TrainFullArgs {
  std::string data, out, preset = "desk", log;
  uint64_t seed = 1;
  int epochs = -1;
  int dmax = 24;
};

int cmd_train_full(const TrainFullArgs& a) {
  SearchSpaceDef space;
  space.max_disparity = a.dmax;
  auto sess = TrainSession::fresh(space, a.seed);

  StereoFolder train(a.data, "train");
  std::optional<StereoFolder> val;
  if (has_split(a.data, "val")) val.emplace(a.data, "val");

  StageSchedule sched = preset_schedule(a.preset)[0];
  if (a.epochs >= 0) sched.epochs = a.epochs;

  std::ofstream logf(a.log.empty() ? a.out + ".log.jsonl" : a.log, std::ios::trunc);
  TrainOptions topt;
  topt.log = [&](const TrainLogRow& r) {
    const std::string line = row_json(r).dump();
    std::cout << line << "\n";
    logf << line << "\n";
  };
  run_stage(*sess, sched, train, val ? &*val : nullptr, topt);
  sess->save(a.out);

  json done;
  done["checkpoint"] = a.out;
  done["stage"] = stage_name(static_cast<Stage>(sess->st.stage));
  done["steps"] = sess->st.step;
  std::cout << done.dump() << "\n";
  return kOk;
}

struct ShrinkArgs {
  std::string ckpt, data, out, stage, preset = "desk", log;
  bool all = false;
  int epochs = -1;
};

int cmd_shrink(const ShrinkArgs& a) {
  if (a.all == !a.stage.empty())
    throw std::runtime_error("pass exactly one of --stage or --all");
  auto sess = TrainSession::resume(a.ckpt);

  StereoFolder train(a.data, "train");
  std::optional<StereoFolder> val;
  if (has_split(a.data, "val")) val.emplace(a.data, "val");

  const std::string out = a.out.empty() ? a.ckpt : a.out;
  std::ofstream logf(a.log.empty() ? out + ".log.jsonl" : a.log, std::ios::trunc);
  TrainOptions topt;
  topt.log = [&](const TrainLogRow& r) {
    const std::string line = row_json(r).dump();
    std::cout << line << "\n";
    logf << line << "\n";
  };

  const auto scheds = preset_schedule(a.preset);
  std::vector<Stage> stages;
  if (a.all)
    for (int i = 1; i < kNumStages; ++i) stages.push_back(static_cast<Stage>(i));
  else
    stages.push_back(stage_from_name(a.stage));

  for (Stage st : stages) {
    StageSchedule sched = scheds[static_cast<int>(st)];
    if (a.epochs >= 0) sched.epochs = a.epochs;
    run_stage(*sess, sched, train, val ? &*val : nullptr, topt);
  }
  sess->save(out);

  json done;
  done["checkpoint"] = out;
  done["stage"] = stage_name(static_cast<Stage>(sess->st.stage));
  done["steps"] = sess->st.step;
  std::cout << done.dump() << "\n";
  return kOk;
}

struct ExtractArgs {
  std::string ckpt, config, out, data, profiles, scatter;
  int viz = 2;
  int reps = 5, warmup = 1;
};

int cmd_extract(const ExtractArgs& a) {
  auto sess = TrainSession::resume(a.ckpt);
  const ArchConfig cfg =
      a.config.empty() ? maximal_config(sess->space) : config_from_file(a.config);
  Subnet sub = Subnet::extract(sess->net, cfg);
  sub.save(a.out);

  int h = 96, w = 144;
  std::optional<StereoFolder> val;
  if (!a.data.empty()) {
    val.emplace(a.data, has_split(a.data, "val") ? "val" : "train");
    if (val->size() > 0) {
      StereoSample s0 = val->get(0);
      h = s0.left.h();
      w = s0.left.w();
    }
  }

  const double lat = measure_latency_ms(sub, h, w, a.reps, a.warmup);

  json out;
  out["subnet"] = a.out;
  out["config"] = cfg.to_json();
  out["params"] = sub.param_count();
  out["macs"] = estimate_cost(cfg, sess->space, h, w).macs;
  out["latency_ms"] = lat;
  out["epe"] = nullptr;

  if (val) {
    std::vector<double> per;
    const double mean = subnet_split_epe(sub, *val, &per);
    out["epe"] = mean;

    const fs::path vdir = a.out + "_viz";
    fs::create_directories(vdir);
    const double dmax = sess->space.max_disparity;
    for (int i = 0; i < std::min(a.viz, val->size()); ++i) {
      StereoSample s = val->get(i);
      Tensor pred = sub.forward(s.left, s.right);
      Tensor gt(s.disp.shape());
      for (int64_t j = 0; j < gt.numel(); ++j) gt[j] = s.mask[j] > 0 ? s.disp[j] : 0.0;
      char name[32];
      std::snprintf(name, sizeof name, "pred_%03d.png", i);
      write_png((vdir / name).string(), colorize(pred, dmax));
      std::snprintf(name, sizeof name, "gt_%03d.png", i);
      write_png((vdir / name).string(), colorize(gt, dmax));
    }
    out["viz"] = vdir.string();

    const std::string spath = a.scatter.empty() ? a.out + ".svg" : a.scatter;
    std::vector<plot::Pt> under, subject{{lat, mean}};
    if (!a.profiles.empty())
      for (const auto& r : read_profiles(a.profiles)) under.push_back({r.latency_ms, r.epe});
    plot::write_scatter_svg(spath, "accuracy vs latency", "latency [ms]", "EPE [px]", under,
                            subject);
    out["scatter"] = spath;
  }
  std::cout << out.dump() << "\n";
  return kOk;
}

struct EvalArgs {
  std::string data, split = "val", subnet, ckpt, config, out;
};

int cmd_eval(const EvalArgs& a) {
  if (a.subnet.empty() == a.ckpt.empty())
    throw std::runtime_error("pass exactly one of --subnet or --ckpt");
  StereoFolder ds(a.data, a.split);

  std::vector<double> per;
  double mean = 0;
  if (!a.subnet.empty()) {
    mean = subnet_split_epe(Subnet::load(a.subnet), ds, &per);
  } else {
    auto sess = TrainSession::resume(a.ckpt);
    const ArchConfig cfg =
        a.config.empty() ? maximal_config(sess->space) : config_from_file(a.config);
    mean = eval_epe(sess->net, ds, cfg, &per);
  }

  std::ostringstream table;
  table << "sample\tepe\n";
  for (size_t i = 0; i < per.size(); ++i) table << i << "\t" << per[i] << "\n";
  table << "mean\t" << mean << "\n";
  std::cout << table.str();
  if (!a.out.empty()) {
    std::ofstream f(a.out, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + a.out);
    f << table.str();
  }

  json j;
  j["mean_epe"] = mean;
  j["count"] = per.size();
  std::cout << j.dump() << "\n";
  return kOk;
}

struct ProfileArgs {
  std::string ckpt, data, out;
  int count = 8, reps = 20, warmup = 3;
  uint64_t seed = 1;
};

int cmd_profile(const ProfileArgs& a) {
  auto sess = TrainSession::resume(a.ckpt);
  StereoFolder val(a.data, has_split(a.data, "val") ? "val" : "train");

  Rng rng(a.seed);
  ProfileOptions popt;
  popt.reps = a.reps;
  popt.warmup = a.warmup;

  std::vector<ProfileRecord> recs;
  recs.reserve(a.count);
  for (int i = 0; i < a.count; ++i) {
    const ArchConfig cfg = sample_uniform(sess->space, rng);
    ProfileRecord rec = profile_subnet(Subnet::extract(sess->net, cfg), val, popt);
    std::cout << rec.to_json().dump() << "\n";
    recs.push_back(std::move(rec));
  }
  write_profiles(a.out, recs);
  return kOk;
}

struct SelectArgs {
  std::string profiles, out;
  double budget = 0;
  bool front_only = false;
};

int cmd_select(const SelectArgs& a) {
  std::vector<ProfileRecord> recs = read_profiles(a.profiles);
  if (a.front_only) recs = pareto(recs);
  const int idx = select_budget(recs, a.budget);
  if (idx < 0)
    throw InfeasibleError("no feasible subnet within " + std::to_string(a.budget) + " ms");
  std::cout << recs[idx].to_json().dump() << "\n";
  if (!a.out.empty()) write_config_file(a.out, recs[idx].config);
  return kOk;
}

struct SearchArgs {
  std::string ckpt, data, out, proxy = "macs";
  double budget = 0;
  int iters = 50;
  uint64_t seed = 1;
};

int cmd_search(const SearchArgs& a) {
  auto sess = TrainSession::resume(a.ckpt);
  StereoFolder val(a.data, has_split(a.data, "val") ? "val" : "train");

  SearchOptions so;
  so.iters = a.iters;
  so.seed = a.seed;
  so.proxy = a.proxy;
  so.budget = a.budget;
  if (val.size() > 0) {
    StereoSample s0 = val.get(0);
    so.input_h = s0.left.h();
    so.input_w = s0.left.w();
  }
  so.log = [](int it, double best, const ArchConfig&) {
    json j;
    j["iter"] = it;
    j["best_epe"] = best;
    std::cout << j.dump() << "\n";
  };

  SearchResult res = search_configs(sess->net, val, so);
  json j;
  j["config"] = res.best.to_json();
  j["epe"] = res.best_epe;
  j["cost"] = res.best_cost;
  j["proxy"] = a.proxy;
  std::cout << j.dump() << "\n";
  if (!a.out.empty()) write_config_file(a.out, res.best);
  return kOk;
}

struct GenDataArgs {
  std::string out;
  int train = 8, val = 2, height = 96, width = 144;
  double dmax = 24;
  uint64_t seed = 1;
};

int cmd_gen_data(const GenDataArgs& a) {
  generate_dataset(a.out, a.train, a.val, a.height, a.width, a.dmax, a.seed);
  json j;
  j["root"] = a.out;
  j["train"] = a.train;
  j["val"] = a.val;
  j["height"] = a.height;
  j["width"] = a.width;
  j["dmax"] = a.dmax;
  std::cout << j.dump() << "\n";
  return kOk;
}

struct SampleConfigsArgs {
  std::string out;
  int count = 10;
  uint64_t seed = 1;
};

int cmd_sample_configs(const SampleConfigsArgs& a) {
  fs::create_directories(a.out);
  SearchSpaceDef space;
  Rng rng(a.seed);
  for (int i = 0; i < a.count; ++i) {
    const ArchConfig cfg = sample_uniform(space, rng);
    char name[32];
    std::snprintf(name, sizeof name, "cfg_%03d.json", i);
    write_config_file((fs::path(a.out) / name).string(), cfg);
    std::cout << cfg.brief() << "\n";
  }
  return kOk;
}

int cmd_space_count() {
  SearchSpaceDef space;
  json j;
  j["kernel_width_depth"] = count_architectures(space, false).str();
  j["with_scale_refine"] = count_architectures(space, true).str();
  std::cout << j.dump() << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"elastic stereo network workbench: train once, extract many"};
  app.require_subcommand(1);
  int rc = kOk;

  TrainFullArgs tf;
  auto* tfc = app.add_subcommand("train-full", "train the maximal network");
  tfc->add_option("--data", tf.data, "dataset root with train/ and val/")->required();
  tfc->add_option("--out", tf.out, "checkpoint to write")->required();
  tfc->add_option("--preset", tf.preset, "schedule preset: desk, paper-schedule, smoke");
  tfc->add_option("--seed", tf.seed, "init and sampling seed");
  tfc->add_option("--epochs", tf.epochs, "override the preset's epoch count");
  tfc->add_option("--dmax", tf.dmax, "maximum disparity of the space");
  tfc->add_option("--log", tf.log, "jsonl log path (default <out>.log.jsonl)");
  tfc->callback([&] { rc = cmd_train_full(tf); });

  ShrinkArgs sh;
  auto* shc = app.add_subcommand("shrink", "run progressive shrink stages");
  shc->add_option("--ckpt", sh.ckpt, "checkpoint to resume")->required();
  shc->add_option("--data", sh.data, "dataset root")->required();
  shc->add_option("--out", sh.out, "checkpoint to write (default: --ckpt)");
  shc->add_option("--stage", sh.stage, "kernel, depth, width, scale or refine");
  shc->add_flag("--all", sh.all, "run every remaining stage in order");
  shc->add_option("--preset", sh.preset, "schedule preset: desk, paper-schedule, smoke");
  shc->add_option("--epochs", sh.epochs, "override epochs per stage");
  shc->add_option("--log", sh.log, "jsonl log path");
  shc->callback([&] { rc = cmd_shrink(sh); });

  ExtractArgs ex;
  auto* exc = app.add_subcommand("extract", "freeze one config into a standalone net");
  exc->add_option("--ckpt", ex.ckpt, "checkpoint to extract from")->required();
  exc->add_option("--out", ex.out, "subnet file to write")->required();
  exc->add_option("--config", ex.config, "config json (default: maximal)");
  exc->add_option("--data", ex.data, "dataset root for accuracy and renders");
  exc->add_option("--profiles", ex.profiles, "jsonl underlay for the scatter plot");
  exc->add_option("--scatter", ex.scatter, "svg path (default <out>.svg)");
  exc->add_option("--viz", ex.viz, "how many samples to render");
  exc->add_option("--reps", ex.reps, "latency repetitions");
  exc->callback([&] { rc = cmd_extract(ex); });

  EvalArgs ev;
  auto* evc = app.add_subcommand("eval", "per-sample accuracy over a split");
  evc->add_option("--data", ev.data, "dataset root")->required();
  evc->add_option("--split", ev.split, "train or val");
  evc->add_option("--subnet", ev.subnet, "standalone net file");
  evc->add_option("--ckpt", ev.ckpt, "checkpoint (runs the shared weights)");
  evc->add_option("--config", ev.config, "config json for --ckpt (default: maximal)");
  evc->add_option("--out", ev.out, "write the table here too");
  evc->callback([&] { rc = cmd_eval(ev); });

  ProfileArgs pf;
  auto* pfc = app.add_subcommand("profile", "time and score sampled configs");
  pfc->add_option("--ckpt", pf.ckpt, "checkpoint to extract from")->required();
  pfc->add_option("--data", pf.data, "dataset root")->required();
  pfc->add_option("--out", pf.out, "jsonl output")->required();
  pfc->add_option("--count", pf.count, "how many configs to sample");
  pfc->add_option("--seed", pf.seed, "sampling seed");
  pfc->add_option("--reps", pf.reps, "latency repetitions");
  pfc->add_option("--warmup", pf.warmup, "warmup runs before timing");
  pfc->callback([&] { rc = cmd_profile(pf); });

  SelectArgs se;
  auto* sec = app.add_subcommand("select", "pick the best profiled config in budget");
  sec->add_option("--profiles", se.profiles, "jsonl from profile")->required();
  sec->add_option("--budget", se.budget, "latency budget in ms")->required();
  sec->add_option("--out", se.out, "write the chosen config json");
  sec->add_flag("--front-only", se.front_only, "restrict to the pareto front");
  sec->callback([&] { rc = cmd_select(se); });

  SearchArgs sr;
  auto* src = app.add_subcommand("search", "hill-climb configs under a cost budget");
  src->add_option("--ckpt", sr.ckpt, "checkpoint to search over")->required();
  src->add_option("--data", sr.data, "dataset root")->required();
  src->add_option("--budget", sr.budget, "cost budget (macs or ms, per --proxy)")->required();
  src->add_option("--proxy", sr.proxy, "cost proxy: macs or latency");
  src->add_option("--iters", sr.iters, "mutation steps");
  src->add_option("--seed", sr.seed, "search seed");
  src->add_option("--out", sr.out, "write the best config json");
  src->callback([&] { rc = cmd_search(sr); });

  GenDataArgs gd;
  auto* gdc = app.add_subcommand("gen-data", "synthesize a random-dot stereo dataset");
  gdc->add_option("--out", gd.out, "dataset root to create")->required();
  gdc->add_option("--train", gd.train, "training samples");
  gdc->add_option("--val", gd.val, "validation samples");
  gdc->add_option("--height", gd.height, "image height (multiple of 24)");
  gdc->add_option("--width", gd.width, "image width (multiple of 24)");
  gdc->add_option("--dmax", gd.dmax, "disparity ceiling");
  gdc->add_option("--seed", gd.seed, "generator seed");
  gdc->callback([&] { rc = cmd_gen_data(gd); });

  SampleConfigsArgs sc;
  auto* scc = app.add_subcommand("sample-configs", "write uniform config samples");
  scc->add_option("--out", sc.out, "directory for cfg_NNN.json")->required();
  scc->add_option("--count", sc.count, "how many");
  scc->add_option("--seed", sc.seed, "sampling seed");
  scc->callback([&] { rc = cmd_sample_configs(sc); });

  app.add_subcommand("space-count", "closed-form size of the config space")
      ->callback([&] { rc = cmd_space_count(); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int c = app.exit(e);
    return c == 0 ? kOk : kUsage;
  } catch (const StageOrderError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kStageOrder;
  } catch (const InfeasibleError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInfeasible;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }
  return rc;
}
