// Copyright 2026 The prosoflow Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef PROSOFLOW_CHECKPOINT_HPP_
#define PROSOFLOW_CHECKPOINT_HPP_

#include <array>
#include <string>
#include <vector>

#include "prosoflow/common.hpp"
#include "prosoflow/nn.hpp"
#include "prosoflow/rng.hpp"

namespace prosoflow {

// Versioned binary tensor container with an FNV-1a integrity footer.
// Raw little-endian doubles give bit-exact round trips.
struct Container {
  std::string kind;
  std::uint32_t version = 1;
  std::string meta_json;
  struct Tensor {
    std::string name;
    Mat value;
  };
  std::vector<Tensor> tensors;

  const Mat* find(const std::string& name) const;
  void add(const std::string& name, Mat value);
};

void write_container(const std::string& path, const Container& c);
// Throws IoError on missing/truncated/corrupt files; ValidationError names
// both versions on a mismatch.
Container read_container(const std::string& path, const std::string& kind,
                         std::uint32_t version);

// Full training state: parameters, Adam moments, step counter, rng state.
struct TrainState {
  nn::ParamStore* params = nullptr;
  nn::Adam* opt = nullptr;
  Rng* rng = nullptr;
  long long step = 0;
};

void save_checkpoint(const std::string& path, const std::string& kind,
                     const TrainState& state, const std::string& meta_json);
// Loads into the given stores; parameter names and shapes must match.
// Returns the stored step counter and meta.
struct LoadedCheckpoint {
  long long step = 0;
  std::string meta_json;
};
LoadedCheckpoint load_checkpoint(const std::string& path,
                                 const std::string& kind, TrainState state);

inline constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace prosoflow

#endif  // PROSOFLOW_CHECKPOINT_HPP_
