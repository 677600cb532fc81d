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

#include "prosoflow/acoustic.hpp"

#include <algorithm>
#include <cmath>

namespace prosoflow {

using namespace prosoflow::ad;

SpeakerTable::SpeakerTable(nn::ParamStore& ps,
                           std::vector<std::string> speaker_ids, int dim)
    : ids_(std::move(speaker_ids)) {
  if (ids_.empty()) throw ValidationError("SpeakerTable: no speakers");
  Rng rng(fnv1a64("speaker-table"));
  lookup_table_ = ps.add("spk.table",
                         rng.normal_mat(dim, static_cast<int>(ids_.size()),
                                        1.0 / std::sqrt(dim)));
}

int SpeakerTable::index_of(const std::string& speaker_id) const {
  for (std::size_t i = 0; i < ids_.size(); ++i)
    if (ids_[i] == speaker_id) return static_cast<int>(i);
  throw ValidationError("unknown speaker '" + speaker_id + "'");
}

Var SpeakerTable::lookup(int index) const {
  if (index < 0 || index >= static_cast<int>(ids_.size()))
    throw ValidationError("speaker index out of range");
  if (trace_) trace_->push_back(index);
  return gather_cols(lookup_table_, {index});
}

std::vector<int> frame_phoneme_index(const std::vector<int>& durations,
                                     int limit) {
  std::vector<int> out;
  for (std::size_t p = 0; p < durations.size(); ++p) {
    if (durations[p] < 0) throw ValidationError("negative duration");
    for (int f = 0; f < durations[p]; ++f) out.push_back(static_cast<int>(p));
  }
  if (limit >= 0 && static_cast<int>(out.size()) > limit) out.resize(limit);
  return out;
}

std::vector<int> frame_word_index(const std::vector<int>& durations,
                                  const std::vector<int>& phoneme_to_word,
                                  int limit) {
  std::vector<int> out;
  for (std::size_t p = 0; p < durations.size(); ++p)
    for (int f = 0; f < durations[p]; ++f) out.push_back(phoneme_to_word[p]);
  if (limit >= 0 && static_cast<int>(out.size()) > limit) out.resize(limit);
  return out;
}

AcousticModel::AcousticModel(nn::ParamStore& ps, const AcousticConfig& cfg,
                             std::vector<std::string> speaker_ids)
    : cfg_(cfg) {
  int factor = 1;
  for (const int r : cfg.upsample_rates) factor *= r;
  if (factor != cfg.mel.hop)
    throw ValidationError("upsample rates must multiply to the mel hop");

  speakers_ = SpeakerTable(ps, std::move(speaker_ids), cfg.speaker_dim);
  phoneme_emb_ = nn::Embedding(ps, "enc.phoneme", cfg.phoneme_vocab, cfg.enc_dim);
  enc_conv1_ = nn::Conv1d(ps, "enc.conv1", cfg.enc_dim, cfg.enc_dim, 5);
  enc_conv2_ = nn::Conv1d(ps, "enc.conv2", cfg.enc_dim, cfg.enc_dim, 5);

  ref_spk_proj_ = nn::Linear(ps, "ref.spk", cfg.speaker_dim, cfg.spk_proj_dim);
  const int ref_in = cfg.mel.bands + cfg.spk_proj_dim;
  ref_conv1_ = nn::Conv1d(ps, "ref.conv1", ref_in, cfg.ref_hidden, 5);
  ref_conv2_ = nn::Conv1d(ps, "ref.conv2", cfg.ref_hidden, cfg.ref_hidden, 5, 1,
                          4, 2);
  ref_pointwise_ = nn::Linear(ps, "ref.pointwise", ref_in, cfg.ref_hidden);
  ref_mu_ = nn::Linear(ps, "ref.mu", cfg.ref_hidden, cfg.z_dim);
  ref_log_sigma_ = nn::Linear(ps, "ref.log_sigma", cfg.ref_hidden, cfg.z_dim,
                              /*zero_init=*/true);

  dec_spk_proj_ = nn::Linear(ps, "dec.spk", cfg.speaker_dim, cfg.spk_proj_dim);
  const int dec_in =
      cfg.enc_dim + cfg.z_dim + cfg.spk_proj_dim + kPositionDims;
  dec_conv1_ = nn::Conv1d(ps, "dec.conv1", dec_in, cfg.dec_hidden, 5);
  dec_conv2_ = nn::Conv1d(ps, "dec.conv2", cfg.dec_hidden, cfg.dec_hidden, 5, 1,
                          4, 2);
  dec_out_ = nn::Linear(ps, "dec.out", cfg.dec_hidden, cfg.mel.bands);

  gen_pre_ = nn::Conv1d(ps, "gen.pre", cfg.mel.bands, cfg.gen_channels, 7);
  int ch = cfg.gen_channels;
  for (std::size_t i = 0; i < cfg.upsample_rates.size(); ++i) {
    const int out_ch = std::max(4, ch / 2);
    GenStage st;
    const std::string base = "gen.stage" + std::to_string(i);
    st.s_in = nn::Snake(ps, base + ".s_in", ch);
    st.up = nn::ConvT1d(ps, base + ".up", ch, out_ch, cfg.upsample_rates[i]);
    auto make_rb = [&](const std::string& name, int k, int d1, int d2) {
      ResBlock rb;
      rb.s1 = nn::Snake(ps, name + ".s1", out_ch);
      rb.c1 = nn::Conv1d(ps, name + ".c1", out_ch, out_ch, k, 1, -1, d1);
      rb.s2 = nn::Snake(ps, name + ".s2", out_ch);
      rb.c2 = nn::Conv1d(ps, name + ".c2", out_ch, out_ch, k, 1, -1, d2);
      return rb;
    };
    st.rb7 = make_rb(base + ".rb7", 7, 1, 3);
    st.rb11 = make_rb(base + ".rb11", 11, 1, 5);
    gen_stages_.push_back(std::move(st));
    ch = out_ch;
  }
  gen_post_snake_ = nn::Snake(ps, "gen.post_snake", ch);
  gen_post_ = nn::Conv1d(ps, "gen.post", ch, 1, 7);
}

Var AcousticModel::encode_phonemes(const std::vector<int>& phonemes) const {
  if (phonemes.empty()) throw ValidationError("encode_phonemes: empty input");
  Var h = phoneme_emb_.forward(phonemes);
  h = tanh_v(enc_conv1_.forward(h));
  return tanh_v(enc_conv2_.forward(h));
}

Var AcousticModel::upsample(const Var& encodings,
                            const std::vector<int>& durations) {
  if (static_cast<Eigen::Index>(durations.size()) != encodings->val.cols())
    throw ValidationError("upsample: durations length != phoneme count");
  return gather_cols(encodings, frame_phoneme_index(durations));
}

PosteriorVars AcousticModel::reference_encode(
    const Mat& mel_frames, const std::vector<std::pair<int, int>>& word_spans,
    const Var& speaker, bool pooling_only) const {
  if (word_spans.empty())
    throw ValidationError("reference encoder: utterance has no words");
  const int t = static_cast<int>(mel_frames.cols());
  Var spk = ref_spk_proj_.forward(speaker);
  Var h = concat_rows({constant(mel_frames), broadcast_col(spk, t)});
  if (pooling_only) {
    h = tanh_v(ref_pointwise_.forward(h));
  } else {
    h = tanh_v(ref_conv1_.forward(h));
    h = tanh_v(ref_conv2_.forward(h));
  }
  Var pooled = segment_mean_cols(h, word_spans);
  return {ref_mu_.forward(pooled), ref_log_sigma_.forward(pooled)};
}

Mat AcousticModel::frame_position_features(const std::vector<int>& frame_phoneme) {
  constexpr double kTwoPi = 6.283185307179586;
  const int t = static_cast<int>(frame_phoneme.size());
  Mat pos(kPositionDims, t);
  // Phoneme-relative ramp.
  int seg_start = 0;
  for (int i = 0; i < t; ++i) {
    if (i > 0 && frame_phoneme[i] != frame_phoneme[i - 1]) seg_start = i;
    int seg_end = i;
    while (seg_end + 1 < t && frame_phoneme[seg_end + 1] == frame_phoneme[i])
      ++seg_end;
    const int len = seg_end - seg_start + 1;
    pos(0, i) = len > 1 ? 2.0 * (i - seg_start) / (len - 1) - 1.0 : 0.0;
  }
  // Absolute-frame sinusoids; the short periods let the decoder express
  // beat patterns against the frame grid.
  const double periods[6] = {2, 3, 5, 8, 16, 32};
  for (int k = 0; k < 6; ++k) {
    for (int i = 0; i < t; ++i) {
      pos(1 + 2 * k, i) = std::sin(kTwoPi * i / periods[k]);
      pos(2 + 2 * k, i) = std::cos(kTwoPi * i / periods[k]);
    }
  }
  return pos;
}

Var AcousticModel::decode(const Var& frame_encodings, const Var& speaker,
                          const Var& z, const std::vector<int>& frame_word,
                          const std::vector<int>& frame_phoneme) const {
  const int t = static_cast<int>(frame_encodings->val.cols());
  if (static_cast<int>(frame_word.size()) != t ||
      static_cast<int>(frame_phoneme.size()) != t)
    throw ValidationError("decode: frame map length mismatch");
  for (const int w : frame_word)
    if (w < 0 || w >= z->val.cols())
      throw ValidationError("decode: Z row count does not cover the alignment");
  Var zb = gather_cols(z, frame_word);
  Var spk = dec_spk_proj_.forward(speaker);
  Var h = concat_rows({frame_encodings, zb, broadcast_col(spk, t),
                       constant(frame_position_features(frame_phoneme))});
  h = tanh_v(dec_conv1_.forward(h));
  h = tanh_v(dec_conv2_.forward(h));
  return dec_out_.forward(h);
}

Var AcousticModel::vocode(const Var& b) const {
  if (b->val.rows() != cfg_.mel.bands)
    throw ValidationError("vocode: expected " + std::to_string(cfg_.mel.bands) +
                          " input rows");
  Var h = gen_pre_.forward(b);
  for (const auto& st : gen_stages_) {
    h = st.up.forward(st.s_in.forward(h));
    for (const auto* rb : {&st.rb7, &st.rb11}) {
      Var r = rb->c1.forward(rb->s1.forward(h));
      r = rb->c2.forward(rb->s2.forward(r));
      h = add(h, r);
    }
  }
  return tanh_v(gen_post_.forward(gen_post_snake_.forward(h)));
}

DiscriminatorSet::DiscriminatorSet(nn::ParamStore& ps,
                                   const DiscriminatorConfig& cfg)
    : cfg_(cfg) {
  const int c = cfg.mpd_channels;
  for (std::size_t i = 0; i < cfg.periods.size(); ++i) {
    Mpd d;
    d.period = cfg.periods[i];
    const std::string base = "mpd" + std::to_string(i);
    d.c1 = nn::Conv1d(ps, base + ".c1", 1, c, 5, 3, 2);
    d.c2 = nn::Conv1d(ps, base + ".c2", c, 2 * c, 5, 3, 2);
    d.c3 = nn::Conv1d(ps, base + ".c3", 2 * c, 2 * c, 5, 3, 2);
    d.score = nn::Conv1d(ps, base + ".score", 2 * c, 1, 3, 1, 1);
    mpds_.push_back(std::move(d));
  }
  const int m = cfg.mrd_channels;
  for (std::size_t i = 0; i < cfg.resolutions.size(); ++i) {
    Mrd d;
    d.n_fft = cfg.resolutions[i].first;
    d.hop = cfg.resolutions[i].second;
    const std::string base = "mrd" + std::to_string(i);
    d.c1 = nn::Conv2d(ps, base + ".c1", 1, m, 3, 3, 1, 2, 1, 1);
    d.c2 = nn::Conv2d(ps, base + ".c2", m, m, 3, 3, 2, 2, 1, 1);
    d.c3 = nn::Conv2d(ps, base + ".c3", m, m, 3, 3, 1, 2, 1, 1);
    d.score = nn::Conv2d(ps, base + ".score", m, 1, 3, 3, 1, 1, 1, 1);
    mrds_.push_back(std::move(d));
  }
}

int DiscriminatorSet::count() const {
  return static_cast<int>(mpds_.size() + mrds_.size());
}

std::vector<DiscriminatorOutput> DiscriminatorSet::forward(
    const Var& waveform, int expected_samples) const {
  if (waveform->val.rows() != 1)
    throw ValidationError("discriminators expect a 1 x M waveform");
  const int m = static_cast<int>(waveform->val.cols());
  if (expected_samples >= 0 && m != expected_samples)
    throw ValidationError("discriminators expect " +
                          std::to_string(expected_samples) + " samples, got " +
                          std::to_string(m));
  std::vector<DiscriminatorOutput> out;

  for (const auto& d : mpds_) {
    const int p = d.period;
    const int frames = (m + p - 1) / p;
    Var padded = waveform;
    if (frames * p != m) {
      Mat zeros = Mat::Zero(1, frames * p - m);
      padded = concat_cols({waveform, constant(zeros)});
    }
    std::vector<Var> l1s, l2s, l3s, scores;
    for (int q = 0; q < p; ++q) {
      std::vector<int> idx(frames);
      for (int f = 0; f < frames; ++f) idx[f] = q + f * p;
      Var phase = gather_cols(padded, idx);
      Var h1 = leaky_relu(d.c1.forward(phase));
      Var h2 = leaky_relu(d.c2.forward(h1));
      Var h3 = leaky_relu(d.c3.forward(h2));
      Var sc = d.score.forward(h3);
      l1s.push_back(h1);
      l2s.push_back(h2);
      l3s.push_back(h3);
      scores.push_back(sc);
    }
    DiscriminatorOutput o;
    o.features = {concat_rows(l1s), concat_rows(l2s), concat_rows(l3s)};
    o.score = concat_rows(scores);
    o.features.push_back(o.score);
    out.push_back(std::move(o));
  }

  for (const auto& d : mrds_) {
    Var mag = stft_magnitude(waveform, d.n_fft, d.hop);
    Var img = spec_to_image(log_v(add_scalar(mag, 1e-4)));
    auto act = [](const Var& v) {
      Var out = leaky_relu(v);
      out->img_h = v->img_h;
      out->img_w = v->img_w;
      return out;
    };
    Var h1 = act(d.c1.forward(img));
    Var h2 = act(d.c2.forward(h1));
    Var h3 = act(d.c3.forward(h2));
    Var sc = d.score.forward(h3);
    DiscriminatorOutput o;
    o.features = {h1, h2, h3, sc};
    o.score = sc;
    out.push_back(std::move(o));
  }
  return out;
}

Var adv_generator_loss(const std::vector<DiscriminatorOutput>& fake) {
  Var total;
  for (const auto& d : fake) {
    Var term = mean_sq(add_scalar(d.score, -1.0));
    total = total ? add(total, term) : term;
  }
  return total;
}

Var adv_discriminator_loss(const std::vector<DiscriminatorOutput>& real,
                           const std::vector<DiscriminatorOutput>& fake) {
  if (real.size() != fake.size())
    throw ValidationError("adv_discriminator_loss: discriminator count mismatch");
  Var total;
  for (std::size_t k = 0; k < real.size(); ++k) {
    Var term = add(mean_sq(add_scalar(real[k].score, -1.0)),
                   mean_sq(fake[k].score));
    total = total ? add(total, term) : term;
  }
  return total;
}

Var feature_matching_loss(const std::vector<DiscriminatorOutput>& real,
                          const std::vector<DiscriminatorOutput>& fake) {
  if (real.size() != fake.size())
    throw ValidationError("feature_matching_loss: discriminator count mismatch");
  Var total;
  for (std::size_t k = 0; k < real.size(); ++k) {
    if (real[k].features.size() != fake[k].features.size())
      throw ValidationError("feature_matching_loss: layer count mismatch");
    Var per_disc;
    for (std::size_t i = 0; i < real[k].features.size(); ++i) {
      Var term = mean_abs(sub(stop_grad(real[k].features[i]), fake[k].features[i]));
      per_disc = per_disc ? add(per_disc, term) : term;
    }
    per_disc = scale(per_disc, 1.0 / static_cast<double>(real[k].features.size()));
    total = total ? add(total, per_disc) : per_disc;
  }
  return total;
}

Var mel_loss(const Var& fake_waveform, const Mat& real_log_mel,
             const MelConfig& mel, int valid_frames) {
  Var mag = stft_magnitude(fake_waveform, mel.n_fft, mel.hop);
  Var fake_mel = log_v(add_scalar(
      matmul(constant(mel_filterbank(mel)), mag), mel.log_floor));
  if (valid_frames <= 0)
    throw ValidationError("mel_loss: no valid frames");
  if (valid_frames > fake_mel->val.cols() || valid_frames > real_log_mel.cols())
    throw ValidationError("mel_loss: valid frame range out of bounds");
  Var fake_valid = slice_cols(fake_mel, 0, valid_frames);
  Mat real_valid = real_log_mel.leftCols(valid_frames);
  return mean_abs(sub(fake_valid, constant(real_valid)));
}

TrainItem prepare_train_item(const Utterance& utt, const SpeakerTable& speakers,
                             const AcousticConfig& cfg, int chunk_samples) {
  TrainItem item;
  item.utterance_id = utt.id;
  item.speaker_index = speakers.index_of(utt.speaker_id);
  item.phonemes = utt.phonemes;
  item.phoneme_to_word = utt.phoneme_to_word;
  item.valid_samples = static_cast<int>(utt.waveform.size());
  item.padded_wave = utt.waveform;
  if (static_cast<int>(item.padded_wave.size()) < chunk_samples)
    item.padded_wave.resize(chunk_samples, 0.0);

  item.mel_full = extract_mel(utt.waveform, cfg.mel).frames;
  const int t_eff = utt.effective_frames(cfg.mel);
  item.mel_full.conservativeResize(Eigen::NoChange, t_eff);
  item.log_mel_padded = extract_mel(item.padded_wave, cfg.mel).frames;

  auto alignment = utterance_alignment(utt, cfg.mel);
  item.word_spans = alignment.word_spans;
  item.frame_phoneme = frame_phoneme_index(utt.phoneme_durations, t_eff);
  item.frame_word = frame_word_index(utt.phoneme_durations, utt.phoneme_to_word, t_eff);
  item.n_words = utt.n_words();
  return item;
}

Stage1Trainer::Stage1Trainer(AcousticModel* model, nn::ParamStore* gen_params,
                             DiscriminatorSet* disc, nn::ParamStore* disc_params,
                             const LossWeights& weights, int chunk_samples,
                             double lr_g, double lr_d)
    : model_(model),
      gen_params_(gen_params),
      disc_(disc),
      disc_params_(disc_params),
      weights_(weights),
      chunk_samples_(chunk_samples) {
  opt_g_.lr = lr_g;
  opt_d_.lr = lr_d;
  opt_g_.beta1 = opt_d_.beta1 = 0.8;
  opt_g_.beta2 = opt_d_.beta2 = 0.99;
  opt_g_.clip_norm = 100.0;
  opt_d_.clip_norm = 100.0;
  opt_g_.init(*gen_params_);
  opt_d_.init(*disc_params_);
}

std::vector<ChunkPlan> Stage1Trainer::draw_plans(
    const std::vector<const TrainItem*>& batch) {
  const MelConfig& mel = model_->config().mel;
  std::vector<ChunkPlan> plans;
  for (const auto* item : batch) {
    ChunkPlan plan;
    const int t = static_cast<int>(item->padded_wave.size());
    const int max_start_frame = (t - chunk_samples_) / mel.hop;
    plan.sel.frame_start =
        static_cast<int>(rng_.uniform_int(static_cast<std::uint64_t>(max_start_frame) + 1));
    plan.sel.frame_count = chunk_samples_ / mel.hop;
    plan.sel.sample_start = static_cast<std::size_t>(plan.sel.frame_start) * mel.hop;
    plan.sel.sample_count = static_cast<std::size_t>(chunk_samples_);
    plan.eps = rng_.normal_mat(model_->config().z_dim, item->n_words);
    plans.push_back(std::move(plan));
  }
  return plans;
}

namespace {

struct GeneratedChunk {
  Var fake;          // 1 x M on the tape
  Var kl;            // scalar
  int valid_frames;  // un-padded frames within the chunk
};

GeneratedChunk generate_chunk(const AcousticModel& model, const TrainItem& item,
                              const ChunkPlan& plan, int chunk_samples) {
  const MelConfig& mel = model.config().mel;
  const int chunk_frames = chunk_samples / mel.hop;

  Var spk = model.speakers().lookup(item.speaker_index);
  PosteriorVars post =
      model.reference_encode(item.mel_full, item.word_spans, spk);
  Var z = nn::reparam_sample(post.mu, post.log_sigma, plan.eps);
  Var enc = model.encode_phonemes(item.phonemes);
  Var ups = gather_cols(enc, item.frame_phoneme);
  Var b = model.decode(ups, spk, z, item.frame_word, item.frame_phoneme);

  const int t_eff = static_cast<int>(b->val.cols());
  const int need = plan.sel.frame_start + chunk_frames;
  if (need > t_eff) {
    Mat zeros = Mat::Zero(mel.bands, need - t_eff);
    b = concat_cols({b, constant(zeros)});
  }
  Var b_chunk = slice_cols(b, plan.sel.frame_start, chunk_frames);

  GeneratedChunk out;
  out.fake = model.vocode(b_chunk);
  out.kl = nn::gaussian_kl(post.mu, post.log_sigma);
  const int valid_from_start =
      (item.valid_samples - static_cast<int>(plan.sel.sample_start) + mel.hop - 1) /
      mel.hop;
  out.valid_frames = std::clamp(valid_from_start, 1, chunk_frames);
  return out;
}

Var mean_of(std::vector<Var> terms) {
  Var total;
  for (const auto& t : terms) total = total ? add(total, t) : t;
  return scale(total, 1.0 / static_cast<double>(terms.size()));
}

}  // namespace

double Stage1Trainer::effective_alpha() const {
  if (kl_warmup_steps_ <= 0) return weights_.alpha;
  const double ramp =
      std::min(1.0, static_cast<double>(step_count_ + 1) / kl_warmup_steps_);
  return weights_.alpha * ramp;
}

Var Stage1Trainer::build_generator_total(
    const std::vector<const TrainItem*>& batch,
    const std::vector<ChunkPlan>& plans, Stage1LossBreakdown* breakdown) const {
  const MelConfig& mel = model_->config().mel;
  std::vector<Var> adv_terms, feat_terms, mel_terms, kl_terms;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const TrainItem& item = *batch[i];
    GeneratedChunk gen = generate_chunk(*model_, item, plans[i], chunk_samples_);
    Var real = constant(Eigen::Map<const Mat>(
        item.padded_wave.data() + plans[i].sel.sample_start, 1, chunk_samples_));
    auto fake_out = disc_->forward(gen.fake);
    auto real_out = disc_->forward(real);
    adv_terms.push_back(adv_generator_loss(fake_out));
    feat_terms.push_back(feature_matching_loss(real_out, fake_out));
    const Mat real_mel_chunk = item.log_mel_padded.middleCols(
        plans[i].sel.frame_start, chunk_samples_ / mel.hop);
    mel_terms.push_back(
        mel_loss(gen.fake, real_mel_chunk, mel, gen.valid_frames));
    kl_terms.push_back(gen.kl);
  }
  Var adv_g = mean_of(std::move(adv_terms));
  Var feat = mean_of(std::move(feat_terms));
  Var mel_term = mean_of(std::move(mel_terms));
  Var kl = mean_of(std::move(kl_terms));
  const double alpha_eff = effective_alpha();
  Var total = add(add(add(adv_g, scale(feat, weights_.lambda_f)),
                      scale(mel_term, weights_.lambda_p)),
                  scale(kl, alpha_eff));
  if (breakdown) {
    breakdown->adv_g = adv_g->val(0, 0);
    breakdown->feat = feat->val(0, 0);
    breakdown->mel = mel_term->val(0, 0);
    breakdown->kl = kl->val(0, 0);
    breakdown->total_g = breakdown->adv_g + weights_.lambda_f * breakdown->feat +
                         weights_.lambda_p * breakdown->mel +
                         alpha_eff * breakdown->kl;
  }
  for (const auto& [name, value] :
       std::initializer_list<std::pair<const char*, Var>>{
           {"adv_g", adv_g}, {"feat", feat}, {"mel", mel_term}, {"kl", kl}}) {
    if (!std::isfinite(value->val(0, 0)))
      throw TrainingError(std::string("stage1 loss term '") + name +
                          "' is not finite");
  }
  return total;
}

Var Stage1Trainer::build_discriminator_total(
    const std::vector<const TrainItem*>& batch,
    const std::vector<ChunkPlan>& plans, Stage1LossBreakdown* breakdown) const {
  std::vector<Var> terms;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const TrainItem& item = *batch[i];
    GeneratedChunk gen = generate_chunk(*model_, item, plans[i], chunk_samples_);
    Var fake_detached = stop_grad(gen.fake);
    Var real = constant(Eigen::Map<const Mat>(
        item.padded_wave.data() + plans[i].sel.sample_start, 1, chunk_samples_));
    terms.push_back(adv_discriminator_loss(disc_->forward(real),
                                           disc_->forward(fake_detached)));
  }
  Var adv_d = mean_of(std::move(terms));
  if (!std::isfinite(adv_d->val(0, 0)))
    throw TrainingError("stage1 loss term 'adv_d' is not finite");
  if (breakdown) {
    breakdown->adv_d = adv_d->val(0, 0);
    breakdown->total_d = breakdown->adv_d;
  }
  return adv_d;
}

Stage1LossBreakdown Stage1Trainer::step(
    const std::vector<const TrainItem*>& batch) {
  if (batch.empty()) throw ValidationError("stage1 step: empty batch");
  const MelConfig& mel = model_->config().mel;
  Stage1LossBreakdown breakdown;
  const std::vector<ChunkPlan> plans = draw_plans(batch);

  // The generator forward is shared: the discriminator update only needs the
  // detached waveform, and theta/phi do not move until the generator update.
  std::vector<GeneratedChunk> gens;
  std::vector<Var> reals;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    gens.push_back(generate_chunk(*model_, *batch[i], plans[i], chunk_samples_));
    reals.push_back(constant(Eigen::Map<const Mat>(
        batch[i]->padded_wave.data() + plans[i].sel.sample_start, 1,
        chunk_samples_)));
  }

  {
    std::vector<Var> terms;
    for (std::size_t i = 0; i < batch.size(); ++i)
      terms.push_back(adv_discriminator_loss(
          disc_->forward(reals[i], chunk_samples_),
          disc_->forward(stop_grad(gens[i].fake), chunk_samples_)));
    Var adv_d = mean_of(std::move(terms));
    if (!std::isfinite(adv_d->val(0, 0)))
      throw TrainingError("stage1 loss term 'adv_d' is not finite");
    breakdown.adv_d = adv_d->val(0, 0);
    breakdown.total_d = breakdown.adv_d;
    backward(adv_d);
    opt_d_.step(*disc_params_);
  }

  {
    std::vector<Var> adv_terms, feat_terms, mel_terms, kl_terms;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      auto fake_out = disc_->forward(gens[i].fake, chunk_samples_);
      auto real_out = disc_->forward(reals[i], chunk_samples_);
      adv_terms.push_back(adv_generator_loss(fake_out));
      feat_terms.push_back(feature_matching_loss(real_out, fake_out));
      const Mat real_mel_chunk = batch[i]->log_mel_padded.middleCols(
          plans[i].sel.frame_start, chunk_samples_ / mel.hop);
      mel_terms.push_back(
          mel_loss(gens[i].fake, real_mel_chunk, mel, gens[i].valid_frames));
      kl_terms.push_back(gens[i].kl);
    }
    Var adv_g = mean_of(std::move(adv_terms));
    Var feat = mean_of(std::move(feat_terms));
    Var mel_term = mean_of(std::move(mel_terms));
    Var kl = mean_of(std::move(kl_terms));
    const double alpha_eff = effective_alpha();
    Var total = add(add(add(adv_g, scale(feat, weights_.lambda_f)),
                        scale(mel_term, weights_.lambda_p)),
                    scale(kl, alpha_eff));
    breakdown.adv_g = adv_g->val(0, 0);
    breakdown.feat = feat->val(0, 0);
    breakdown.mel = mel_term->val(0, 0);
    breakdown.kl = kl->val(0, 0);
    breakdown.total_g = breakdown.adv_g + weights_.lambda_f * breakdown.feat +
                        weights_.lambda_p * breakdown.mel +
                        alpha_eff * breakdown.kl;
    for (const auto& [name, value] :
         std::initializer_list<std::pair<const char*, Var>>{
             {"adv_g", adv_g}, {"feat", feat}, {"mel", mel_term}, {"kl", kl}}) {
      if (!std::isfinite(value->val(0, 0)))
        throw TrainingError(std::string("stage1 loss term '") + name +
                            "' is not finite");
    }
    backward(total);
    disc_params_->zero_grads();  // generator update must not move eta
    opt_g_.step(*gen_params_);
  }

  ++step_count_;
  if (!std::isfinite(breakdown.total_g) || breakdown.total_g > 1e6)
    throw TrainingError("stage1 diverged at step " + std::to_string(step_count_));
  return breakdown;
}

std::vector<double> synthesize_from_latents(const AcousticModel& model,
                                            const std::vector<int>& phonemes,
                                            const std::vector<int>& phoneme_to_word,
                                            int speaker_index, const Mat& z,
                                            const std::vector<int>& durations) {
  if (durations.size() != phonemes.size())
    throw ValidationError("synthesize: durations length != phoneme count");
  Var spk = model.speakers().lookup(speaker_index);
  Var enc = model.encode_phonemes(phonemes);
  Var ups = AcousticModel::upsample(enc, durations);
  const std::vector<int> fw = frame_word_index(durations, phoneme_to_word);
  const std::vector<int> fp = frame_phoneme_index(durations);
  Var b = model.decode(ups, spk, constant(z), fw, fp);
  Var wave = model.vocode(b);
  return std::vector<double>(wave->val.data(),
                             wave->val.data() + wave->val.cols());
}

}  // namespace prosoflow
