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

#ifndef PROSOFLOW_PIPELINE_HPP_
#define PROSOFLOW_PIPELINE_HPP_

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "prosoflow/config.hpp"
#include "prosoflow/eval.hpp"
#include "prosoflow/inference.hpp"

namespace prosoflow {

// Run-directory layout shared by all stages.
struct RunPaths {
  std::string run_dir;
  explicit RunPaths(std::string dir) : run_dir(std::move(dir)) {}
  std::string checkpoints_dir() const { return run_dir + "/checkpoints"; }
  std::string stage1_ckpt() const { return checkpoints_dir() + "/stage1.ckpt"; }
  std::string duration_ckpt() const { return checkpoints_dir() + "/duration.ckpt"; }
  std::string stage2_ckpt() const { return checkpoints_dir() + "/stage2.ckpt"; }
  std::string latents_dir() const { return run_dir + "/latents"; }
  std::string latent_cache() const { return latents_dir() + "/cache.bin"; }
  std::string logs_dir() const { return run_dir + "/logs"; }
  std::string audio_dir() const { return run_dir + "/audio"; }
  std::string config_copy() const { return run_dir + "/config.cfg"; }
};

// Append-only experiment log (one JSON record per line, monotone step).
class ExperimentLog {
 public:
  ExperimentLog(const std::string& path, bool truncate);
  void append(long long step, const std::string& payload_json,
              std::uint64_t rng_digest);

 private:
  std::string path_;
  long long last_step_ = -1;
};

void run_prepare_data(const std::string& out_dir, int n_speakers,
                      int utterances_per_speaker, std::uint64_t seed);

struct StageProgress {
  long long step = 0;
  double loss = 0.0;
};
using ProgressFn = std::function<void(const StageProgress&)>;

void run_train_stage1(const RunConfig& cfg, const std::string& data_dir,
                      const std::string& run_dir, long long steps, bool resume,
                      const ProgressFn& progress = nullptr);
void run_train_duration(const RunConfig& cfg, const std::string& data_dir,
                        const std::string& run_dir, long long steps, bool resume,
                        const ProgressFn& progress = nullptr);
void run_export_latents(const RunConfig& cfg, const std::string& data_dir,
                        const std::string& run_dir);
void run_train_stage2(const RunConfig& cfg, const std::string& data_dir,
                      const std::string& run_dir, long long steps, bool resume,
                      const ProgressFn& progress = nullptr);

// Loads all checkpoints from the run dir into a fresh bundle. Stage 2 is
// optional when require_predictor is false.
std::unique_ptr<ModelBundle> load_bundle(const RunConfig& cfg,
                                         const std::string& data_dir,
                                         const std::string& run_dir,
                                         bool require_predictor);

Corpus load_corpus(const RunConfig& cfg, const std::string& data_dir);

struct FptGateMetrics {
  double duration_r = 0.0;
  double f0_offset_r = 0.0;
  double speaker_probe_accuracy = 0.0;
  double leakage_accuracy = 0.0;
  double leakage_chance = 0.0;
  double self_reconstruction_mel_l1 = 0.0;
  int n_pairs = 0;
  int n_f0_words = 0;
};

// Objective transfer gates on a corpus with generation ground truth.
FptGateMetrics evaluate_fpt_gates(ModelBundle& bundle, const Corpus& corpus,
                                  const std::vector<WordProsodyTruth>& truth,
                                  const std::string& run_dir, int max_pairs,
                                  std::uint64_t seed);

void run_evaluate(const RunConfig& cfg, const std::string& data_dir,
                  const std::string& run_dir, const std::string& out_path,
                  int max_pairs);

}  // namespace prosoflow

#endif  // PROSOFLOW_PIPELINE_HPP_
