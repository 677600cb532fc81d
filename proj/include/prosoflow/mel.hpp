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

#ifndef PROSOFLOW_MEL_HPP_
#define PROSOFLOW_MEL_HPP_

#include <vector>

#include "prosoflow/common.hpp"

namespace prosoflow {

struct MelConfig {
  int sample_rate = 24000;
  int n_fft = 1024;
  int hop = 256;
  int window = 1024;
  int bands = 80;
  double fmin = 0.0;
  double fmax = 12000.0;
  double log_floor = 1e-5;  // amplitude floor before the log

  void validate() const;
};

// Log-amplitude mel frames, stored bands x T_mel (one column per frame).
struct MelSpectrogram {
  Mat frames;
  MelConfig config;

  int n_frames() const { return static_cast<int>(frames.cols()); }
};

// Triangular mel filterbank, bands x (n_fft/2 + 1).
Mat mel_filterbank(const MelConfig& cfg);

// Analysis frames start at t*hop (no centering); the tail is zero-padded so
// that T_mel == ceil(T / hop) exactly.
MelSpectrogram extract_mel(const std::vector<double>& waveform,
                           const MelConfig& cfg);

int num_mel_frames(std::size_t n_samples, const MelConfig& cfg);

}  // namespace prosoflow

#endif  // PROSOFLOW_MEL_HPP_
