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

#ifndef PROSOFLOW_CONFIG_HPP_
#define PROSOFLOW_CONFIG_HPP_

#include <string>

#include "prosoflow/acoustic.hpp"
#include "prosoflow/duration.hpp"
#include "prosoflow/predictor.hpp"

namespace prosoflow {

// Flat key = value run configuration. Core hyperparameters default to the
// published values; everything else is an artifact-scale decision.
struct RunConfig {
  // Core model hyperparameters.
  int speaker_dim = 192;   // E
  int z_dim = 4;           // U
  int zd_dim = 2;          // U^D
  int flow_steps = 12;     // K
  double lambda_f = 4.0;
  double lambda_p = 45.0;
  double alpha = 1e-3;
  int chunk_samples = 19200;  // M

  // Reference training scale, recorded for completeness; smoke runs override
  // the step counts on the command line.
  int epochs_stage1 = 440;
  int batch_stage1 = 84;
  int epochs_stage2 = 106;
  int batch_stage2 = 128;

  // Mel analysis.
  int mel_n_fft = 1024;
  int mel_hop = 256;
  int mel_bands = 80;
  double mel_fmax = 12000.0;

  // Architecture widths.
  int phoneme_vocab = 64;
  int enc_dim = 48;
  int spk_proj_dim = 16;
  int ref_hidden = 48;
  int dec_hidden = 64;
  int gen_channels = 64;
  int mpd_channels = 8;
  int mrd_channels = 8;
  int dur_hidden = 32;
  int dur_phoneme_emb = 16;
  int ctx_dim = 48;
  int ctx_heads = 4;
  int ctx_layers = 2;
  int cond_dim = 48;
  int coupling_hidden = 48;
  int vocab_buckets = 256;

  // Optimization.
  double lr_g = 1e-3;
  double lr_d = 1e-3;
  double lr_duration = 1e-3;
  double lr_flow = 1e-3;
  int batch_size = 4;
  int duration_batch = 8;
  int flow_batch = 8;
  double alpha_d = 1e-3;
  int kl_warmup_steps = 200;
  long long steps_stage1 = 2000;
  long long steps_duration = 1500;
  long long steps_stage2 = 1500;
  int checkpoint_every = 500;

  // Inference & windows.
  double tau = 1.0;
  int window_min_words = 72;
  int window_max_words = 95;

  std::uint64_t seed = 1;

  void validate() const;  // throws ValidationError naming the field

  MelConfig mel() const;
  AcousticConfig acoustic() const;
  DiscriminatorConfig discriminators() const;
  DurationConfig duration() const;
  PredictorConfig predictor() const;
  LossWeights weights() const;
};

// Parses "key = value" lines ('#' comments). Unknown keys are errors.
RunConfig load_config(const std::string& path);
RunConfig parse_config_text(const std::string& text);
void save_config(const RunConfig& cfg, const std::string& path);

}  // namespace prosoflow

#endif  // PROSOFLOW_CONFIG_HPP_
