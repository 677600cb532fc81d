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

#ifndef PROSOFLOW_AUDIO_HPP_
#define PROSOFLOW_AUDIO_HPP_

#include <string>
#include <vector>

namespace prosoflow {

// Mono 16-bit PCM WAV. Samples are doubles in [-1, 1]; writing quantizes
// with round-to-nearest, so write -> read round-trips bit-exactly at the
// 16-bit grid.
struct WavData {
  int sample_rate = 0;
  std::vector<double> samples;
};

WavData read_wav(const std::string& path);
void write_wav(const std::string& path, const std::vector<double>& samples,
               int sample_rate);

}  // namespace prosoflow

#endif  // PROSOFLOW_AUDIO_HPP_
