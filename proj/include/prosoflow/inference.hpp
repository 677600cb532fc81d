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

#ifndef PROSOFLOW_INFERENCE_HPP_
#define PROSOFLOW_INFERENCE_HPP_

#include <memory>
#include <string>
#include <vector>

#include "prosoflow/acoustic.hpp"
#include "prosoflow/duration.hpp"
#include "prosoflow/predictor.hpp"

namespace prosoflow {

// The three models plus their parameter stores, loaded together for
// inference. Construction wires the same architectures the trainers build,
// so checkpoints restore bit-exactly.
struct ModelBundle {
  AcousticConfig acoustic_cfg;
  DurationConfig duration_cfg;
  PredictorConfig predictor_cfg;
  nn::ParamStore acoustic_params, duration_params, predictor_params;
  AcousticModel acoustic;
  DurationModel duration;
  SpeakerTable duration_speakers;  // the duration model's own table
  ProsodyPredictor predictor;
  bool has_predictor = false;

  ModelBundle(const AcousticConfig& acfg, const DurationConfig& dcfg,
              const PredictorConfig& pcfg, std::vector<std::string> speakers,
              std::uint64_t init_seed, bool with_predictor = true);
  ModelBundle(const ModelBundle&) = delete;
  ModelBundle& operator=(const ModelBundle&) = delete;
};

struct SynthesisDiagnostics {
  Mat z;                        // word latents used below the seam
  Mat zd;
  std::vector<int> durations;   // quantized frames per phoneme
  std::vector<int> speaker_lookups_below_seam;
};

struct SynthesisResult {
  std::vector<double> waveform;
  SynthesisDiagnostics diagnostics;
};

struct FptOptions {
  bool copy_source_durations = false;
  bool sample_latents = false;  // default: posterior means
  std::uint64_t seed = 0;
};

// Fine-grained prosody transfer: latents come from the source utterance via
// both reference encoders (source speaker identity); everything below the
// seam is conditioned on the target speaker only.
SynthesisResult infer_fpt(ModelBundle& bundle, const Utterance& source,
                          const std::string& target_speaker,
                          const FptOptions& opts = {});

struct TtsOptions {
  double tau = 1.0;
  std::uint64_t seed = 0;
  int min_window_words = 72;
  int max_window_words = 95;
};

// Long-context TTS: FlowCat-style sampling of (Z, Z^D) over the window of
// the target sentence, then the same path as FPT below the latent seam.
SynthesisResult infer_tts(ModelBundle& bundle, const Corpus& corpus,
                          const std::string& doc_id, int sentence_index,
                          const std::string& speaker,
                          const TtsOptions& opts = {});

// The seam itself: synthesis from explicit word latents. Both inference
// modes call this; oracle-latent TTS therefore equals FPT self-transfer.
SynthesisResult synthesize_with_latents(ModelBundle& bundle,
                                        const std::vector<int>& phonemes,
                                        const std::vector<int>& phoneme_to_word,
                                        const std::string& target_speaker,
                                        const Mat& z, const Mat& zd,
                                        const std::vector<int>* fixed_durations);

struct SynthesisRequest {
  std::string mode;    // "fpt" or "tts"
  std::string source;  // utterance id (fpt)
  std::string doc;     // document id (tts)
  int sentence = 0;
  std::string speaker;
  double tau = 1.0;
  std::uint64_t seed = 0;
  std::string output_path;
};

struct RequestReport {
  std::string output_path;
  bool ok = false;
  std::string error;
  double z_norm = 0.0;
  double zd_norm = 0.0;
  int total_frames = 0;
  std::size_t n_samples = 0;
  double wall_ms = 0.0;
};

// Runs every request, writing one WAV per success. Failures are recorded
// per request; the return value is false if any failed.
bool batch_synthesize(ModelBundle& bundle, const Corpus& corpus,
                      const std::vector<SynthesisRequest>& requests,
                      std::vector<RequestReport>* reports);

std::vector<SynthesisRequest> load_request_manifest(const std::string& path);
void write_request_reports(const std::vector<RequestReport>& reports,
                           const std::string& path);

}  // namespace prosoflow

#endif  // PROSOFLOW_INFERENCE_HPP_
