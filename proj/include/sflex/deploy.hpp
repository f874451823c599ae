#pragma once

#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "sflex/data.hpp"
#include "sflex/subnet.hpp"
#include "sflex/supernet.hpp"

namespace sflex {

// one profiled deployment candidate
struct ProfileRecord {
  ArchConfig config;
  double latency_ms = 0.0;
  double epe = 0.0;
  long long macs = 0;

  json to_json() const;
  static ProfileRecord from_json(const json& j);
};

// median wall time of a forward pass at (h, w), measured back to back on one
// core after a few warmup runs
double measure_latency_ms(const Subnet& sub, int h, int w, int reps = 20, int warmup = 3);

struct ProfileOptions {
  int reps = 20;
  int warmup = 3;
};

// latency on the split's input size, accuracy over the whole split
ProfileRecord profile_subnet(const Subnet& sub, const StereoFolder& data,
                             const ProfileOptions& opt = {});

// JSONL, one record per line
void write_profiles(const std::string& path, const std::vector<ProfileRecord>& recs);
std::vector<ProfileRecord> read_profiles(const std::string& path);

// non-dominated records under (latency, epe), duplicates of the same config
// dropped, sorted by latency ascending (so accuracy is non-increasing)
std::vector<ProfileRecord> pareto(const std::vector<ProfileRecord>& recs);

// best accuracy within the latency budget; ties prefer lower latency, then
// fewer macs. Returns -1 when nothing fits.
int select_budget(const std::vector<ProfileRecord>& recs, double budget_ms);

// no config can meet the requested budget
struct InfeasibleError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SearchOptions {
  int iters = 50;
  uint64_t seed = 1;
  std::string proxy = "macs";  // "macs" or "latency"
  double budget = 0.0;         // macs count or milliseconds, per proxy
  int input_h = 96;
  int input_w = 144;
  int lat_reps = 5;  // latency proxy only
  std::function<void(int, double, const ArchConfig&)> log;  // iter, best epe, best
};

struct SearchResult {
  ArchConfig best;
  double best_epe = 0.0;
  double best_cost = 0.0;
  std::vector<double> trace;  // incumbent epe after each iteration
};

// single-mutation hill climb over the config space: stay within the budget,
// accept only strict accuracy improvements. Deterministic for a given seed.
SearchResult search_configs(const Supernet& net, const StereoFolder& val,
                            const SearchOptions& opt);

}  // namespace sflex
