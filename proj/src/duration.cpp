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

#include "prosoflow/duration.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace prosoflow {

using namespace prosoflow::ad;

std::vector<std::pair<int, int>> word_phoneme_spans(
    const std::vector<int>& phoneme_to_word) {
  std::vector<std::pair<int, int>> spans;
  int prev = -1;
  for (std::size_t p = 0; p < phoneme_to_word.size(); ++p) {
    const int w = phoneme_to_word[p];
    if (w < prev) throw ValidationError("word map is decreasing");
    while (prev < w) {
      spans.emplace_back(static_cast<int>(p), static_cast<int>(p));
      ++prev;
    }
    spans.back().second = static_cast<int>(p) + 1;
  }
  return spans;
}

DurationModel::DurationModel(nn::ParamStore& ps, const DurationConfig& cfg)
    : cfg_(cfg) {
  spk_proj_enc_ = nn::Linear(ps, "dur.enc.spk", cfg.speaker_dim, cfg.spk_proj_dim);
  enc_conv1_ = nn::Conv1d(ps, "dur.enc.conv1", 1 + cfg.spk_proj_dim, cfg.hidden, 3);
  enc_conv2_ = nn::Conv1d(ps, "dur.enc.conv2", cfg.hidden, cfg.hidden, 3);
  head_mu_ = nn::Linear(ps, "dur.enc.mu", cfg.hidden, cfg.zd_dim);
  head_log_sigma_ = nn::Linear(ps, "dur.enc.log_sigma", cfg.hidden, cfg.zd_dim,
                               /*zero_init=*/true);
  phoneme_emb_ = nn::Embedding(ps, "dur.dec.phoneme", cfg.phoneme_vocab,
                               cfg.phoneme_emb_dim);
  spk_proj_dec_ = nn::Linear(ps, "dur.dec.spk", cfg.speaker_dim, cfg.spk_proj_dim);
  dec_conv1_ = nn::Conv1d(ps, "dur.dec.conv1",
                          cfg.phoneme_emb_dim + cfg.spk_proj_dim + cfg.zd_dim,
                          cfg.hidden, 3);
  dec_conv2_ = nn::Conv1d(ps, "dur.dec.conv2", cfg.hidden, cfg.hidden, 3);
  dec_out_ = nn::Linear(ps, "dur.dec.out", cfg.hidden, 1);
}

PosteriorVars DurationModel::reference_encode(
    const std::vector<int>& phoneme_durations,
    const std::vector<int>& phoneme_to_word, const Var& speaker) const {
  if (phoneme_durations.empty())
    throw ValidationError("duration reference encoder: empty utterance");
  if (phoneme_durations.size() != phoneme_to_word.size())
    throw ValidationError("duration reference encoder: word map length mismatch");
  const int p = static_cast<int>(phoneme_durations.size());
  Mat logd(1, p);
  for (int i = 0; i < p; ++i) {
    if (phoneme_durations[i] < 0)
      throw ValidationError("duration reference encoder: negative duration");
    logd(0, i) = std::log1p(static_cast<double>(phoneme_durations[i]));
  }
  Var spk = spk_proj_enc_.forward(speaker);
  Var h = concat_rows({constant(logd), broadcast_col(spk, p)});
  h = tanh_v(enc_conv1_.forward(h));
  h = tanh_v(enc_conv2_.forward(h));
  Var pooled = segment_mean_cols(h, word_phoneme_spans(phoneme_to_word));
  return {head_mu_.forward(pooled), head_log_sigma_.forward(pooled)};
}

Var DurationModel::predict_log_durations(
    const std::vector<int>& phonemes, const Var& speaker, const Var& zd,
    const std::vector<int>& phoneme_to_word) const {
  if (phonemes.size() != phoneme_to_word.size())
    throw ValidationError("duration decoder: word map length mismatch");
  const auto spans = word_phoneme_spans(phoneme_to_word);
  if (zd->val.cols() != static_cast<Eigen::Index>(spans.size()))
    throw ValidationError("duration decoder: Z^D has " +
                          std::to_string(zd->val.cols()) + " words, expected " +
                          std::to_string(spans.size()));
  const int p = static_cast<int>(phonemes.size());
  Var emb = phoneme_emb_.forward(phonemes);
  Var spk = spk_proj_dec_.forward(speaker);
  Var z_per_phoneme = gather_cols(zd, std::vector<int>(phoneme_to_word.begin(),
                                                       phoneme_to_word.end()));
  Var h = concat_rows({emb, broadcast_col(spk, p), z_per_phoneme});
  h = tanh_v(dec_conv1_.forward(h));
  h = tanh_v(dec_conv2_.forward(h));
  return dec_out_.forward(h);
}

std::vector<double> DurationModel::to_frames(const Mat& log_durations) {
  std::vector<double> out(static_cast<std::size_t>(log_durations.cols()));
  for (Eigen::Index i = 0; i < log_durations.cols(); ++i)
    out[static_cast<std::size_t>(i)] =
        std::max(std::expm1(log_durations(0, i)), 0.05);
  return out;
}

DurationLosses duration_losses(const Var& pred_log_durations,
                               const std::vector<int>& target_durations,
                               const PosteriorVars& posterior,
                               double kl_weight) {
  if (pred_log_durations->val.cols() !=
      static_cast<Eigen::Index>(target_durations.size()))
    throw ValidationError("duration_losses: prediction/target length mismatch");
  Mat target(1, static_cast<Eigen::Index>(target_durations.size()));
  for (std::size_t i = 0; i < target_durations.size(); ++i)
    target(0, static_cast<Eigen::Index>(i)) =
        std::log1p(static_cast<double>(target_durations[i]));
  Var nll = mean_sq(sub(pred_log_durations, constant(target)));
  Var kl = nn::gaussian_kl(posterior.mu, posterior.log_sigma);
  Var total = add(nll, scale(kl, kl_weight));
  DurationLosses out;
  out.nll = nll->val(0, 0);
  out.kl = kl->val(0, 0);
  out.total = total->val(0, 0);
  out.total_var = total;
  if (!std::isfinite(out.total))
    throw TrainingError("duration loss is not finite");
  return out;
}

std::vector<int> quantize_durations(const std::vector<double>& durations,
                                    int target_total) {
  const int p = static_cast<int>(durations.size());
  std::vector<int> q(p);
  std::vector<double> remainder(p);
  int total = 0;
  for (int i = 0; i < p; ++i) {
    if (durations[i] <= 0)
      throw ValidationError("quantize_durations: durations must be positive");
    const double shifted = durations[i] + 0.5;
    q[i] = std::max(1, static_cast<int>(std::floor(shifted)));
    remainder[i] = shifted - std::floor(shifted);
    total += q[i];
  }
  if (target_total < 0 || total == target_total) return q;
  std::vector<int> order(p);
  std::iota(order.begin(), order.end(), 0);
  if (total < target_total) {
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return remainder[a] > remainder[b];
    });
    int need = target_total - total;
    for (int pass = 0; need > 0; ++pass)
      for (int i = 0; i < p && need > 0; ++i, --need) ++q[order[i]];
  } else {
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return remainder[a] < remainder[b];
    });
    int excess = total - target_total;
    bool progress = true;
    while (excess > 0 && progress) {
      progress = false;
      for (int i = 0; i < p && excess > 0; ++i) {
        if (q[order[i]] > 1) {
          --q[order[i]];
          --excess;
          progress = true;
        }
      }
    }
    // target below the one-frame floor is unattainable; keep the floor
  }
  return q;
}

}  // namespace prosoflow
