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

#ifndef PROSOFLOW_EVAL_HPP_
#define PROSOFLOW_EVAL_HPP_

#include <optional>
#include <string>
#include <vector>

#include "prosoflow/corpus.hpp"

namespace prosoflow {

// Frame-synchronous F0 track (one value per mel frame start).
struct F0Track {
  std::vector<double> f0_hz;
  std::vector<bool> voiced;
};

// Normalized-autocorrelation pitch with 25 ms windows and parabolic lag
// refinement. The smallest lag within 2% of the global peak wins, which
// keeps period multiples from causing octave drops.
F0Track extract_f0(const std::vector<double>& waveform, int sample_rate,
                   int hop, double fmin_hz = 70.0, double fmax_hz = 500.0);

struct ProsodyFeatures {
  std::vector<std::optional<double>> f0_hz;  // empty optional: unvoiced word
  std::vector<double> log_energy;
  std::vector<double> duration_frames;

  int n_words() const { return static_cast<int>(duration_frames.size()); }
};

ProsodyFeatures extract_prosody_features(const std::vector<double>& waveform,
                                         const FrameToWordAlignment& alignment,
                                         const MelConfig& cfg);

struct SimilarityResult {
  bool ok = false;
  std::string note;
  double r_f0 = 0.0;
  double r_energy = 0.0;
  double r_duration = 0.0;
  int n_f0_words = 0;
};

// Pearson correlations over words; words without F0 on either side are
// skipped for the F0 component. Fewer than 3 comparable words is
// insufficient data.
SimilarityResult prosody_similarity(const ProsodyFeatures& source,
                                    const ProsodyFeatures& output);

double pearson(const std::vector<double>& a, const std::vector<double>& b);

struct LabeledWave {
  const std::vector<double>* waveform;
  int label;
};

struct ProbeResult {
  double accuracy = 0.0;
  int n_eval = 0;
  int n_classes = 0;
  double chance() const { return n_classes > 0 ? 1.0 / n_classes : 0.0; }
};

// Multinomial logistic probe over long-term average spectrum bands plus mean
// F0. Trained on the train set, scored on the eval set.
ProbeResult speaker_probe(const std::vector<LabeledWave>& train,
                          const std::vector<LabeledWave>& eval_set,
                          int n_classes, const MelConfig& cfg);

// Linear probe on latent vectors; accuracy near chance indicates
// speaker-independent latents. Deterministic 80/20 split by seed.
ProbeResult latent_leakage_probe(const std::vector<std::pair<Vec, int>>& examples,
                                 int n_classes, std::uint64_t seed);

// Mean absolute difference between two log-mel matrices, trimmed to the
// shorter frame count.
double mel_l1(const Mat& reference, const Mat& synthesized);

}  // namespace prosoflow

#endif  // PROSOFLOW_EVAL_HPP_
