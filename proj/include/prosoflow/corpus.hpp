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

#ifndef PROSOFLOW_CORPUS_HPP_
#define PROSOFLOW_CORPUS_HPP_

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "prosoflow/common.hpp"
#include "prosoflow/mel.hpp"
#include "prosoflow/rng.hpp"

namespace prosoflow {

struct Utterance {
  std::string id;
  std::string audio_path;
  std::vector<double> waveform;       // 24 kHz mono
  std::string text;                   // space-separated word tokens
  std::string speaker_id;
  std::vector<int> phonemes;          // P symbol ids
  std::vector<int> phoneme_durations; // P durations in mel frames
  std::vector<int> phoneme_to_word;   // P word indices, non-decreasing
  std::string split;                  // train / val / test, may be empty
  std::string doc;                    // document id for long-context windows

  int n_phonemes() const { return static_cast<int>(phonemes.size()); }
  int n_words() const {
    return phoneme_to_word.empty() ? 0 : phoneme_to_word.back() + 1;
  }
  int duration_total() const;

  // Frame count usable for alignment: min(ceil(T/hop), sum d). The two may
  // legitimately differ by one frame; larger gaps are validation errors.
  int effective_frames(const MelConfig& cfg) const;

  // Throws ValidationError naming the offending field.
  void validate(const MelConfig& cfg) const;
};

struct FrameToWordAlignment {
  // Per word: [start_frame, end_frame), contiguous and non-overlapping.
  std::vector<std::pair<int, int>> word_spans;

  int n_frames() const {
    return word_spans.empty() ? 0 : word_spans.back().second;
  }
};

// Word spans from cumulative phoneme durations. Spans partition [0, sum d).
FrameToWordAlignment frame_alignment(const std::vector<int>& phoneme_durations,
                                     const std::vector<int>& phoneme_to_word);

// Alignment clipped to the utterance's effective frame count.
FrameToWordAlignment utterance_alignment(const Utterance& utt,
                                         const MelConfig& cfg);

struct Corpus {
  std::vector<Utterance> utterances;
  MelConfig mel_config;

  std::vector<int> indices_of_split(const std::string& split) const;
  // Document id -> utterance indices in manifest order.
  std::map<std::string, std::vector<int>> documents() const;
};

// Line-delimited JSON records with fields: audio, text, speaker, phonemes,
// durations, word_map, and optional split/doc. Audio paths are resolved
// relative to the manifest's directory. Loads and validates waveforms.
Corpus load_manifest(const std::string& path,
                     const MelConfig& cfg = MelConfig{});

void save_manifest(const Corpus& corpus, const std::string& path);

// Deterministic per-speaker split assignment for records without labels.
// Exact largest-remainder counts, e.g. 10 utterances -> (7, 1, 2).
void assign_splits(Corpus& corpus, int train = 7, int val = 1, int test = 2);

struct SyntheticCorpusSpec {
  int n_speakers = 4;
  std::vector<double> base_f0_hz;       // defaults spaced >= 20 Hz apart
  std::vector<double> spectral_tilt;    // harmonic rolloff, nats per harmonic
  int vocabulary_size = 60;
  int n_phoneme_types = 16;
  int utterances_per_speaker = 40;
  int sentence_min_words = 4;
  int sentence_max_words = 6;
  int phonemes_per_word_min = 2;
  int phonemes_per_word_max = 3;
  int base_duration_min_frames = 6;
  int base_duration_max_frames = 10;
  int doc_min_sentences = 10;
  int doc_max_sentences = 18;
  double pitch_offset_semitones = 3.0;  // per-word offset ~ U(-x, x)
  double energy_scale_min = 0.6;
  double energy_scale_max = 1.5;
  double duration_scale_min = 0.7;
  double duration_scale_max = 1.5;
  std::uint64_t seed = 1;

  void validate() const;
};

// Per-word generation targets, the objective ground truth for transfer tests.
struct WordProsodyTruth {
  std::string utterance_id;
  int word = 0;
  double pitch_offset_semitones = 0.0;
  double energy_scale = 1.0;
  double duration_scale = 1.0;
  double f0_hz = 0.0;
};

struct SyntheticCorpus {
  Corpus corpus;
  std::vector<WordProsodyTruth> truth;
  std::vector<double> speaker_base_f0;
};

// Harmonic-tone corpus with explicit per-word prosody ground truth. Word w of
// speaker s is rendered at F0 = base_f0[s] * 2^(offset_w / 12) with amplitude
// scaled by energy_scale_w and durations by duration_scale_w. Deterministic
// in (spec, seed). If out_dir is given, writes WAVs, manifest.jsonl and
// prosody_truth.jsonl there.
SyntheticCorpus generate_synthetic_corpus(const SyntheticCorpusSpec& spec,
                                          std::uint64_t seed,
                                          const std::string& out_dir = "");

std::vector<WordProsodyTruth> load_prosody_truth(const std::string& path);

struct ChunkSelection {
  int frame_start = 0;
  int frame_count = 0;
  std::size_t sample_start = 0;
  std::size_t sample_count = 0;
};

// Uniform frame-aligned window of M samples. Requires T >= M; shorter
// utterances must be padded (or skipped) by the caller before sampling.
ChunkSelection sample_chunk(const Utterance& utt, int chunk_samples,
                            const MelConfig& cfg, Rng& rng);

}  // namespace prosoflow

#endif  // PROSOFLOW_CORPUS_HPP_
