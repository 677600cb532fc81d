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

#ifndef PROSOFLOW_ACOUSTIC_HPP_
#define PROSOFLOW_ACOUSTIC_HPP_

#include <string>
#include <utility>
#include <vector>

#include "prosoflow/corpus.hpp"
#include "prosoflow/duration.hpp"
#include "prosoflow/nn.hpp"

namespace prosoflow {

struct AcousticConfig {
  MelConfig mel;
  int phoneme_vocab = 64;
  int enc_dim = 48;        // phoneme encoding width
  int speaker_dim = 192;   // E
  int z_dim = 4;           // U
  int spk_proj_dim = 16;
  int ref_hidden = 48;
  int dec_hidden = 64;
  int gen_channels = 64;   // vocoder width after the input projection
  std::vector<int> upsample_rates = {8, 8, 2, 2};  // product must equal hop
};

struct DiscriminatorConfig {
  std::vector<int> periods = {2, 3, 5, 7, 11};
  std::vector<std::pair<int, int>> resolutions = {
      {512, 128}, {1024, 256}, {2048, 512}};  // (n_fft, hop)
  int mpd_channels = 8;
  int mrd_channels = 8;
};

struct LossWeights {
  double lambda_f = 4.0;
  double lambda_p = 45.0;
  double alpha = 1e-3;
};

// Learned speaker embedding lookup. Lookups can be traced, which is how the
// "target identity only below the reference encoders" property is checked.
class SpeakerTable {
 public:
  SpeakerTable() = default;
  SpeakerTable(nn::ParamStore& ps, std::vector<std::string> speaker_ids, int dim);

  int index_of(const std::string& speaker_id) const;
  ad::Var lookup(int index) const;
  Vec embedding_value(int index) const { return lookup_table_->val.col(index); }
  const std::vector<std::string>& ids() const { return ids_; }
  int dim() const { return static_cast<int>(lookup_table_->val.rows()); }
  void set_trace(std::vector<int>* sink) { trace_ = sink; }

 private:
  std::vector<std::string> ids_;
  ad::Var lookup_table_;  // dim x n_speakers
  mutable std::vector<int>* trace_ = nullptr;
};

// Frame-level index maps from per-phoneme durations.
std::vector<int> frame_phoneme_index(const std::vector<int>& durations,
                                     int limit = -1);
std::vector<int> frame_word_index(const std::vector<int>& durations,
                                  const std::vector<int>& phoneme_to_word,
                                  int limit = -1);

// End-to-end generator: phoneme encoder, upsampler, conditional variational
// reference encoder, NAR decoder and waveform generator, all under one
// parameter store (theta and phi).
class AcousticModel {
 public:
  AcousticModel() = default;
  AcousticModel(nn::ParamStore& ps, const AcousticConfig& cfg,
                std::vector<std::string> speaker_ids);

  const AcousticConfig& config() const { return cfg_; }
  SpeakerTable& speakers() { return speakers_; }
  const SpeakerTable& speakers() const { return speakers_; }

  // P x enc_dim phoneme encodings (speaker independent).
  ad::Var encode_phonemes(const std::vector<int>& phonemes) const;

  // Replicates encodings per duration: enc_dim x sum(d).
  static ad::Var upsample(const ad::Var& encodings,
                          const std::vector<int>& durations);

  // q_phi over word latents from the utterance mel and speaker. With
  // pooling_only the sequence encoder is bypassed by a pointwise projection,
  // making word posteriors depend only on their own frames.
  PosteriorVars reference_encode(const Mat& mel_frames,
                                 const std::vector<std::pair<int, int>>& word_spans,
                                 const ad::Var& speaker,
                                 bool pooling_only = false) const;

  // Intermediate representation B, 80 x T. Word latents are broadcast to
  // their frames before decoding; frame/phoneme position features break the
  // frame-translation symmetry so the generator can hold phase progressions
  // that are incommensurate with the frame grid.
  ad::Var decode(const ad::Var& frame_encodings, const ad::Var& speaker,
                 const ad::Var& z, const std::vector<int>& frame_word,
                 const std::vector<int>& frame_phoneme) const;

  static Mat frame_position_features(const std::vector<int>& frame_phoneme);
  static constexpr int kPositionDims = 13;

  // Waveform from B rows; output length is exactly hop * frames.
  ad::Var vocode(const ad::Var& b) const;

 private:
  AcousticConfig cfg_;
  SpeakerTable speakers_;
  nn::Embedding phoneme_emb_;
  nn::Conv1d enc_conv1_, enc_conv2_;
  nn::Linear ref_spk_proj_;
  nn::Conv1d ref_conv1_, ref_conv2_;
  nn::Linear ref_pointwise_;  // ablation path
  nn::Linear ref_mu_, ref_log_sigma_;
  nn::Linear dec_spk_proj_;
  nn::Conv1d dec_conv1_, dec_conv2_;
  nn::Linear dec_out_;
  nn::Conv1d gen_pre_;
  struct ResBlock {
    nn::Snake s1, s2;
    nn::Conv1d c1, c2;
  };
  struct GenStage {
    nn::Snake s_in;
    nn::ConvT1d up;
    // Wide dilated blocks give the sample-rate layers enough receptive
    // field to hold periodicity that is incommensurate with the frame grid.
    ResBlock rb7, rb11;
  };
  std::vector<GenStage> gen_stages_;
  nn::Snake gen_post_snake_;
  nn::Conv1d gen_post_;
};

struct DiscriminatorOutput {
  ad::Var score;
  std::vector<ad::Var> features;  // ordered intermediate maps, |D_k| entries
};

// 5 multi-period + 3 multi-resolution discriminators under one store (eta).
class DiscriminatorSet {
 public:
  DiscriminatorSet() = default;
  DiscriminatorSet(nn::ParamStore& ps, const DiscriminatorConfig& cfg);

  int count() const;
  // One entry per discriminator; waveform is 1 x M. When expected_samples
  // is nonnegative, other lengths are rejected.
  std::vector<DiscriminatorOutput> forward(const ad::Var& waveform,
                                           int expected_samples = -1) const;

 private:
  DiscriminatorConfig cfg_;
  struct Mpd {
    int period = 2;
    nn::Conv1d c1, c2, c3, score;
  };
  struct Mrd {
    int n_fft = 1024, hop = 256;
    nn::Conv2d c1, c2, c3, score;
  };
  std::vector<Mpd> mpds_;
  std::vector<Mrd> mrds_;
};

// ---- Loss algebra over score/feature lists ----

// sum_k mean((D_k(x') - 1)^2)
ad::Var adv_generator_loss(const std::vector<DiscriminatorOutput>& fake);
// sum_k mean((D_k(x) - 1)^2 + D_k(x')^2)
ad::Var adv_discriminator_loss(const std::vector<DiscriminatorOutput>& real,
                               const std::vector<DiscriminatorOutput>& fake);
// sum_k (1/|D_k|) sum_i L1(D_k^i(x), D_k^i(x')); real features are detached.
ad::Var feature_matching_loss(const std::vector<DiscriminatorOutput>& real,
                              const std::vector<DiscriminatorOutput>& fake);
// L1 between log-mel of the generated chunk and the reference chunk mel,
// restricted to the first valid_frames columns.
ad::Var mel_loss(const ad::Var& fake_waveform, const Mat& real_log_mel,
                 const MelConfig& mel, int valid_frames);

struct Stage1LossBreakdown {
  double adv_g = 0, adv_d = 0, feat = 0, mel = 0, kl = 0;
  double total_g = 0, total_d = 0;
};

// Precomputed per-utterance training inputs.
struct TrainItem {
  std::string utterance_id;
  int speaker_index = 0;
  std::vector<int> phonemes;
  std::vector<int> phoneme_to_word;
  std::vector<double> padded_wave;  // zero-padded to at least chunk size
  int valid_samples = 0;
  Mat mel_full;                              // reference-encoder input
  Mat log_mel_padded;                        // mel of the padded waveform
  std::vector<std::pair<int, int>> word_spans;
  std::vector<int> frame_phoneme, frame_word;
  int n_words = 0;
};

TrainItem prepare_train_item(const Utterance& utt, const SpeakerTable& speakers,
                             const AcousticConfig& cfg, int chunk_samples);

struct ChunkPlan {
  ChunkSelection sel;
  Mat eps;  // z_dim x W reparameterization noise
};

class Stage1Trainer {
 public:
  Stage1Trainer(AcousticModel* model, nn::ParamStore* gen_params,
                DiscriminatorSet* disc, nn::ParamStore* disc_params,
                const LossWeights& weights, int chunk_samples,
                double lr_g = 1e-3, double lr_d = 1e-3);

  // One discriminator update then one generator update, deterministic given
  // the trainer's rng state.
  Stage1LossBreakdown step(const std::vector<const TrainItem*>& batch);

  // Generator-side total loss on a fixed plan (gradient-check entry point).
  ad::Var build_generator_total(const std::vector<const TrainItem*>& batch,
                                const std::vector<ChunkPlan>& plans,
                                Stage1LossBreakdown* breakdown) const;
  ad::Var build_discriminator_total(const std::vector<const TrainItem*>& batch,
                                    const std::vector<ChunkPlan>& plans,
                                    Stage1LossBreakdown* breakdown) const;

  std::vector<ChunkPlan> draw_plans(const std::vector<const TrainItem*>& batch);

  Rng& rng() { return rng_; }
  nn::Adam& opt_g() { return opt_g_; }
  nn::Adam& opt_d() { return opt_d_; }
  long long step_count() const { return step_count_; }
  void set_step_count(long long s) { step_count_ = s; }
  const LossWeights& weights() const { return weights_; }
  // Linear KL warm-up over the first n steps (0 disables it).
  void set_kl_warmup(int n_steps) { kl_warmup_steps_ = n_steps; }

 private:
  double effective_alpha() const;
  AcousticModel* model_;
  nn::ParamStore* gen_params_;
  DiscriminatorSet* disc_;
  nn::ParamStore* disc_params_;
  LossWeights weights_;
  int chunk_samples_;
  nn::Adam opt_g_, opt_d_;
  Rng rng_;
  long long step_count_ = 0;
  int kl_warmup_steps_ = 0;
};

// Full-utterance synthesis below the latent seam: shared by both inference
// modes and by reconstruction metrics.
std::vector<double> synthesize_from_latents(const AcousticModel& model,
                                            const std::vector<int>& phonemes,
                                            const std::vector<int>& phoneme_to_word,
                                            int speaker_index, const Mat& z,
                                            const std::vector<int>& durations);

}  // namespace prosoflow

#endif  // PROSOFLOW_ACOUSTIC_HPP_
