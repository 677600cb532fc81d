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

#ifndef PROSOFLOW_DURATION_HPP_
#define PROSOFLOW_DURATION_HPP_

#include <string>
#include <vector>

#include "prosoflow/corpus.hpp"
#include "prosoflow/nn.hpp"

namespace prosoflow {

// Word spans over the phoneme axis from a non-decreasing word map.
std::vector<std::pair<int, int>> word_phoneme_spans(
    const std::vector<int>& phoneme_to_word);

struct DurationConfig {
  int phoneme_vocab = 64;
  int zd_dim = 2;
  int speaker_dim = 192;
  int spk_proj_dim = 8;
  int hidden = 32;
  int phoneme_emb_dim = 16;
  double kl_weight = 1e-3;  // weight on the posterior KL in the ELBO
};

struct PosteriorVars {
  ad::Var mu;
  ad::Var log_sigma;
};

// Word-level duration-prosody VAE plus the per-phoneme duration decoder.
// Log-duration domain means log(1 + frames) throughout, so zero-duration
// phonemes stay finite; the decoder's frame output is expm1 of its
// log-domain prediction.
class DurationModel {
 public:
  DurationModel() = default;
  DurationModel(nn::ParamStore& ps, const DurationConfig& cfg);

  const DurationConfig& config() const { return cfg_; }

  // q_psi(Z^D | durations, c): per-word posterior, zd_dim x W.
  PosteriorVars reference_encode(const std::vector<int>& phoneme_durations,
                                 const std::vector<int>& phoneme_to_word,
                                 const ad::Var& speaker) const;

  // r_theta: per-phoneme log(1+frames) predictions, 1 x P.
  ad::Var predict_log_durations(const std::vector<int>& phonemes,
                                const ad::Var& speaker, const ad::Var& zd,
                                const std::vector<int>& phoneme_to_word) const;

  // Positive frame counts from a log-domain prediction.
  static std::vector<double> to_frames(const Mat& log_durations);

 private:
  DurationConfig cfg_;
  nn::Linear spk_proj_enc_, spk_proj_dec_;
  nn::Conv1d enc_conv1_, enc_conv2_;
  nn::Linear head_mu_, head_log_sigma_;
  nn::Embedding phoneme_emb_;
  nn::Conv1d dec_conv1_, dec_conv2_;
  nn::Linear dec_out_;
};

struct DurationLosses {
  double nll = 0;
  double kl = 0;
  double total = 0;
  ad::Var total_var;
};

// nll: mean squared error in the log-duration domain; kl: closed-form
// Gaussian KL to N(0, I); total = nll + kl_weight * kl.
DurationLosses duration_losses(const ad::Var& pred_log_durations,
                               const std::vector<int>& target_durations,
                               const PosteriorVars& posterior,
                               double kl_weight);

// Round-half-up with a floor of one frame per phoneme; optional
// largest-remainder correction so the total hits target_total exactly
// (when target_total >= P).
std::vector<int> quantize_durations(const std::vector<double>& durations,
                                    int target_total = -1);

}  // namespace prosoflow

#endif  // PROSOFLOW_DURATION_HPP_
