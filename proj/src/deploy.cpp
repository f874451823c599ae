#include "sflex/deploy.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <stdexcept>

#include "sflex/loss.hpp"

namespace sflex {

json ProfileRecord::to_json() const {
  json j;
  j["config"] = config.to_json();
  j["latency_ms"] = latency_ms;
  j["epe"] = epe;
  j["macs"] = macs;
  return j;
}

ProfileRecord ProfileRecord::from_json(const json& j) {
  ProfileRecord r;
  r.config = ArchConfig::from_json(j.at("config"));
  r.latency_ms = j.at("latency_ms").get<double>();
  r.epe = j.at("epe").get<double>();
  r.macs = j.at("macs").get<long long>();
  return r;
}

double measure_latency_ms(const Subnet& sub, int h, int w, int reps, int warmup) {
  if (reps < 1) throw std::invalid_argument("latency reps must be positive");
  Rng rng(42);
  Tensor l({1, 3, h, w}), r({1, 3, h, w});
  for (int64_t i = 0; i < l.numel(); ++i) l[i] = rng.uniform(0.0, 1.0);
  for (int64_t i = 0; i < r.numel(); ++i) r[i] = rng.uniform(0.0, 1.0);

  for (int i = 0; i < warmup; ++i) sub.forward(l, r);
  std::vector<double> ms(reps);
  for (int i = 0; i < reps; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    Tensor out = sub.forward(l, r);
    const auto t1 = std::chrono::steady_clock::now();
    ms[i] = std::chrono::duration<double, std::milli>(t1 - t0).count();
  }
  std::nth_element(ms.begin(), ms.begin() + reps / 2, ms.end());
  return ms[reps / 2];
}

ProfileRecord profile_subnet(const Subnet& sub, const StereoFolder& data,
                             const ProfileOptions& opt) {
  if (data.size() < 1) throw std::invalid_argument("empty profiling split");
  StereoSample first = data.get(0);
  const int h = first.left.h(), w = first.left.w();

  ProfileRecord rec;
  rec.config = sub.cfg;
  rec.macs = estimate_cost(sub.cfg, sub.space, h, w).macs;
  rec.latency_ms = measure_latency_ms(sub, h, w, opt.reps, opt.warmup);

  double acc = 0;
  for (int i = 0; i < data.size(); ++i) {
    StereoSample smp = data.get(i);
    acc += end_point_error(sub.forward(smp.left, smp.right), smp.disp, smp.mask);
  }
  rec.epe = acc / data.size();
  return rec;
}

void write_profiles(const std::string& path, const std::vector<ProfileRecord>& recs) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path);
  for (const auto& r : recs) f << r.to_json().dump() << "\n";
}

std::vector<ProfileRecord> read_profiles(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read " + path);
  std::vector<ProfileRecord> recs;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    recs.push_back(ProfileRecord::from_json(json::parse(line)));
  }
  return recs;
}

std::vector<ProfileRecord> pareto(const std::vector<ProfileRecord>& recs) {
  std::vector<ProfileRecord> uniq;
  for (const auto& r : recs) {
    bool seen = false;
    for (const auto& u : uniq)
      if (u.config == r.config) {
        seen = true;
        break;
      }
    if (!seen) uniq.push_back(r);
  }

  std::vector<ProfileRecord> front;
  for (size_t i = 0; i < uniq.size(); ++i) {
    bool dominated = false;
    for (size_t j = 0; j < uniq.size() && !dominated; ++j) {
      if (j == i) continue;
      const bool leq = uniq[j].latency_ms <= uniq[i].latency_ms && uniq[j].epe <= uniq[i].epe;
      const bool strict =
          uniq[j].latency_ms < uniq[i].latency_ms || uniq[j].epe < uniq[i].epe;
      dominated = leq && strict;
    }
    if (!dominated) front.push_back(uniq[i]);
  }
  std::sort(front.begin(), front.end(), [](const ProfileRecord& a, const ProfileRecord& b) {
    if (a.latency_ms != b.latency_ms) return a.latency_ms < b.latency_ms;
    if (a.epe != b.epe) return a.epe < b.epe;
    return a.macs < b.macs;
  });
  return front;
}

int select_budget(const std::vector<ProfileRecord>& recs, double budget_ms) {
  int best = -1;
  for (size_t i = 0; i < recs.size(); ++i) {
    if (recs[i].latency_ms > budget_ms) continue;
    if (best < 0) {
      best = (int)i;
      continue;
    }
    const ProfileRecord& b = recs[best];
    const ProfileRecord& r = recs[i];
    const bool better = r.epe < b.epe ||
                        (r.epe == b.epe && (r.latency_ms < b.latency_ms ||
                                            (r.latency_ms == b.latency_ms && r.macs < b.macs)));
    if (better) best = (int)i;
  }
  return best;
}

namespace {

template <typename T>
T pick(const std::vector<T>& v, Rng& rng) {
  return v[rng.uniform_int((int)v.size())];
}

// resample one dimension at one site
ArchConfig mutate(const ArchConfig& c, const SearchSpaceDef& sp, Rng& rng) {
  ArchConfig m = c;
  switch (rng.uniform_int(5)) {
    case 0: {
      const int u = rng.uniform_int(sp.num_units);
      m.layer_kernels[u][rng.uniform_int(m.unit_depths[u])] = pick(sp.kernel_choices, rng);
      break;
    }
    case 1: {
      const int u = rng.uniform_int(sp.num_units);
      m.layer_widths[u][rng.uniform_int(m.unit_depths[u])] = pick(sp.width_choices, rng);
      break;
    }
    case 2: {
      const int u = rng.uniform_int(sp.num_units);
      const int d = pick(sp.depth_choices, rng);
      const int old = m.unit_depths[u];
      m.unit_depths[u] = d;
      m.layer_kernels[u].resize(d);
      m.layer_widths[u].resize(d);
      for (int i = old; i < d; ++i) {
        m.layer_kernels[u][i] = pick(sp.kernel_choices, rng);
        m.layer_widths[u][i] = pick(sp.width_choices, rng);
      }
      break;
    }
    case 3:
      m.scale = pick(sp.scale_choices, rng);
      break;
    default:
      m.refine_depth = pick(sp.refine_choices, rng);
      break;
  }
  return m;
}

double subnet_epe(const Subnet& sub, const StereoFolder& val) {
  double acc = 0;
  for (int i = 0; i < val.size(); ++i) {
    StereoSample smp = val.get(i);
    acc += end_point_error(sub.forward(smp.left, smp.right), smp.disp, smp.mask);
  }
  return acc / val.size();
}

}  // namespace

SearchResult search_configs(const Supernet& net, const StereoFolder& val,
                            const SearchOptions& opt) {
  if (opt.proxy != "macs" && opt.proxy != "latency")
    throw std::invalid_argument("unknown cost proxy: " + opt.proxy);
  if (val.size() < 1) throw std::invalid_argument("empty validation split");

  auto cost_of = [&](const ArchConfig& cfg) {
    if (opt.proxy == "macs")
      return (double)estimate_cost(cfg, net.space, opt.input_h, opt.input_w).macs;
    Subnet sub = Subnet::extract(net, cfg);
    return measure_latency_ms(sub, opt.input_h, opt.input_w, opt.lat_reps, 1);
  };

  const ArchConfig smallest = minimal_config(net.space);
  const double floor_cost = cost_of(smallest);
  if (floor_cost > opt.budget)
    throw InfeasibleError("budget " + std::to_string(opt.budget) +
                          " below the smallest config's " + opt.proxy + " cost " +
                          std::to_string(floor_cost));

  Rng rng(opt.seed);
  SearchResult res;
  res.best = smallest;
  res.best_cost = floor_cost;
  for (int tries = 0; tries < 64; ++tries) {
    ArchConfig cand = sample_uniform(net.space, rng);
    const double c = cost_of(cand);
    if (c <= opt.budget) {
      res.best = cand;
      res.best_cost = c;
      break;
    }
  }
  res.best_epe = subnet_epe(Subnet::extract(net, res.best), val);

  for (int it = 0; it < opt.iters; ++it) {
    const ArchConfig cand = mutate(res.best, net.space, rng);
    const double c = cost_of(cand);
    if (c <= opt.budget) {
      const double e = subnet_epe(Subnet::extract(net, cand), val);
      if (e < res.best_epe) {
        res.best = cand;
        res.best_epe = e;
        res.best_cost = c;
      }
    }
    res.trace.push_back(res.best_epe);
    if (opt.log) opt.log(it, res.best_epe, res.best);
  }
  return res;
}

}  // namespace sflex
