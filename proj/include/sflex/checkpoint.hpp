#pragma once

#include <map>
#include <string>
#include <vector>

#include "sflex/arch_space.hpp"
#include "sflex/nn.hpp"
#include "sflex/optimizer.hpp"

namespace sflex {

// Binary bundle: a json header plus named raw double arrays, written and read
// bit for bit. Both the training checkpoints and extracted subnet files use
// this container with different header kinds.
struct NamedTensor {
  std::string name;
  Tensor t;
};

void write_bundle(const std::string& path, const json& meta,
                  const std::vector<NamedTensor>& blobs);
json read_bundle(const std::string& path, std::map<std::string, Tensor>* blobs);

// where training stands, for resuming and for stage-order enforcement
struct TrainState {
  int stage = 0;        // index into the shrink stage sequence
  int epoch = 0;        // epochs completed within the stage
  long long step = 0;   // optimizer steps overall
  std::string rng_state;

  json to_json() const;
  static TrainState from_json(const json& j);
};

void save_train_checkpoint(const std::string& path, const SearchSpaceDef& space,
                           ParamRefs& refs, const Adam* opt, const TrainState& st);

// header peek so the caller can build the net before loading tensors
SearchSpaceDef read_checkpoint_space(const std::string& path);

// fills refs (names and shapes must match the file) and optionally the
// optimizer; returns the stored state
TrainState load_train_checkpoint(const std::string& path, ParamRefs& refs, Adam* opt);

}  // namespace sflex
