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

#include "prosoflow/eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "prosoflow/fft.hpp"
#include "prosoflow/rng.hpp"

namespace prosoflow {

namespace {
constexpr double kVoicingThreshold = 0.5;
constexpr double kRmsThreshold = 1e-3;
}  // namespace

F0Track extract_f0(const std::vector<double>& waveform, int sample_rate,
                   int hop, double fmin_hz, double fmax_hz) {
  const int window = sample_rate / 40;  // 25 ms
  const int lag_min = std::max(2, static_cast<int>(sample_rate / fmax_hz));
  const int lag_max = static_cast<int>(sample_rate / fmin_hz);
  const int t = static_cast<int>(waveform.size());
  F0Track track;
  const int n_frames = t / hop;
  for (int f = 0; f < n_frames; ++f) {
    const int start = f * hop;
    double best_r = -1.0;
    int best_lag = -1;
    if (start + window + lag_max <= t) {
      double energy0 = 0;
      for (int i = 0; i < window; ++i)
        energy0 += waveform[start + i] * waveform[start + i];
      const double rms = std::sqrt(energy0 / window);
      if (rms > kRmsThreshold) {
        std::vector<double> corr(lag_max + 1, -1.0);
        for (int lag = lag_min; lag <= lag_max; ++lag) {
          double dot = 0, energy_lag = 0;
          for (int i = 0; i < window; ++i) {
            const double a = waveform[start + i];
            const double b = waveform[start + i + lag];
            dot += a * b;
            energy_lag += b * b;
          }
          const double denom = std::sqrt(energy0 * energy_lag);
          corr[lag] = denom > 0 ? dot / denom : 0.0;
          if (corr[lag] > best_r) {
            best_r = corr[lag];
            best_lag = lag;
          }
        }
        if (best_r > kVoicingThreshold) {
          // Prefer the shortest lag whose peak is within 2% of the best:
          // multiples of the period score the same for periodic signals.
          for (int lag = lag_min; lag < best_lag; ++lag) {
            const bool local_peak =
                corr[lag] >= (lag > lag_min ? corr[lag - 1] : -2.0) &&
                corr[lag] >= (lag < lag_max ? corr[lag + 1] : -2.0);
            if (local_peak && corr[lag] >= 0.98 * best_r) {
              best_lag = lag;
              best_r = corr[lag];
              break;
            }
          }
          // Subharmonic correction: amplitude dips (phoneme fades) can make
          // a period multiple win outright; a strong peak near lag/k is the
          // true fundamental.
          for (int iter = 0; iter < 2; ++iter) {
            bool fixed = false;
            for (const int divisor : {3, 2}) {
              const int cand = best_lag / divisor;
              if (cand < lag_min) continue;
              int peak = cand;
              for (int l = std::max(lag_min, cand - 3);
                   l <= std::min(lag_max, cand + 3); ++l)
                if (corr[l] > corr[peak]) peak = l;
              const bool local_peak =
                  corr[peak] >= (peak > lag_min ? corr[peak - 1] : -2.0) &&
                  corr[peak] >= (peak < lag_max ? corr[peak + 1] : -2.0);
              if (local_peak && corr[peak] >= 0.90 * best_r) {
                best_lag = peak;
                best_r = corr[peak];
                fixed = true;
                break;
              }
            }
            if (!fixed) break;
          }
          double refined = best_lag;
          if (best_lag > lag_min && best_lag < lag_max) {
            const double y0 = corr[best_lag - 1], y1 = corr[best_lag],
                         y2 = corr[best_lag + 1];
            const double denom = y0 - 2 * y1 + y2;
            if (std::abs(denom) > 1e-12) {
              const double delta = 0.5 * (y0 - y2) / denom;
              if (std::abs(delta) <= 1.0) refined += delta;
            }
          }
          track.f0_hz.push_back(sample_rate / refined);
          track.voiced.push_back(true);
          continue;
        }
      }
    }
    track.f0_hz.push_back(0.0);
    track.voiced.push_back(false);
  }
  return track;
}

ProsodyFeatures extract_prosody_features(const std::vector<double>& waveform,
                                         const FrameToWordAlignment& alignment,
                                         const MelConfig& cfg) {
  ProsodyFeatures out;
  const F0Track track = extract_f0(waveform, cfg.sample_rate, cfg.hop);
  const int t = static_cast<int>(waveform.size());
  // A frame's pitch window must stay inside the word span, or neighboring
  // words at other pitches bleed into the estimate.
  const int window_frames =
      (cfg.sample_rate / 40 + cfg.sample_rate / 70) / cfg.hop + 1;
  for (const auto& [s, e] : alignment.word_spans) {
    out.duration_frames.push_back(static_cast<double>(e - s));

    std::vector<double> voiced_f0;
    int last = std::min(e - window_frames,
                        static_cast<int>(track.f0_hz.size()));
    if (last <= s) last = std::min(s + 1, static_cast<int>(track.f0_hz.size()));
    for (int f = s; f < last; ++f)
      if (track.voiced[f]) voiced_f0.push_back(track.f0_hz[f]);
    if (!voiced_f0.empty()) {
      // Average around the median; isolated octave slips at amplitude dips
      // must not drag the word estimate.
      std::vector<double> sorted = voiced_f0;
      std::sort(sorted.begin(), sorted.end());
      const double med = sorted[sorted.size() / 2];
      double sum = 0;
      int n = 0;
      for (const double v : voiced_f0)
        if (std::abs(v - med) <= 0.25 * med) {
          sum += v;
          ++n;
        }
      out.f0_hz.push_back(n > 0 ? sum / n : med);
    } else {
      out.f0_hz.push_back(std::nullopt);
    }

    double power_sum = 0;
    int frames = 0;
    for (int f = s; f < e; ++f) {
      const int start = f * cfg.hop;
      if (start >= t) break;
      const int lim = std::min(cfg.hop, t - start);
      double p = 0;
      for (int i = 0; i < lim; ++i) p += waveform[start + i] * waveform[start + i];
      power_sum += std::log(p / std::max(1, lim) + 1e-10);
      ++frames;
    }
    out.log_energy.push_back(frames > 0 ? power_sum / frames : std::log(1e-10));
  }
  return out;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) return 0.0;
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double cov = 0, va = 0, vb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    cov += (a[i] - ma) * (b[i] - mb);
    va += (a[i] - ma) * (a[i] - ma);
    vb += (b[i] - mb) * (b[i] - mb);
  }
  if (va <= 0 || vb <= 0) return 0.0;
  return cov / std::sqrt(va * vb);
}

SimilarityResult prosody_similarity(const ProsodyFeatures& source,
                                    const ProsodyFeatures& output) {
  SimilarityResult res;
  if (source.n_words() != output.n_words()) {
    res.note = "word count mismatch";
    return res;
  }
  if (source.n_words() < 3) {
    res.note = "insufficient data: fewer than 3 words";
    return res;
  }
  std::vector<double> f0_a, f0_b;
  for (int w = 0; w < source.n_words(); ++w) {
    if (source.f0_hz[w] && output.f0_hz[w]) {
      f0_a.push_back(*source.f0_hz[w]);
      f0_b.push_back(*output.f0_hz[w]);
    }
  }
  res.n_f0_words = static_cast<int>(f0_a.size());
  if (res.n_f0_words < 3) {
    res.note = "insufficient data: fewer than 3 voiced words";
    return res;
  }
  res.r_f0 = pearson(f0_a, f0_b);
  res.r_energy = pearson(source.log_energy, output.log_energy);
  res.r_duration = pearson(source.duration_frames, output.duration_frames);
  res.ok = true;
  return res;
}

namespace {

// Long-term average spectrum in 24 mel bands plus mean F0.
Vec wave_probe_features(const std::vector<double>& wave, const MelConfig& cfg) {
  MelConfig bands_cfg = cfg;
  bands_cfg.bands = 24;
  const Mat fb = mel_filterbank(bands_cfg);
  const auto win = hann_window(cfg.n_fft);
  const int bins = cfg.n_fft / 2 + 1;
  Vec avg = Vec::Zero(bins);
  const int n_frames =
      std::max(1, static_cast<int>(wave.size() / cfg.hop) - cfg.n_fft / cfg.hop);
  std::vector<double> seg(cfg.n_fft), re, im;
  for (int f = 0; f < n_frames; ++f) {
    const std::size_t start = static_cast<std::size_t>(f) * cfg.hop;
    for (int i = 0; i < cfg.n_fft; ++i) {
      const std::size_t idx = start + i;
      seg[i] = (idx < wave.size() ? wave[idx] : 0.0) * win[i];
    }
    rfft(seg.data(), cfg.n_fft, re, im);
    for (int k = 0; k < bins; ++k)
      avg(k) += std::sqrt(re[k] * re[k] + im[k] * im[k]) / n_frames;
  }
  Vec feat(25);
  const Vec banded = fb * avg;
  for (int b = 0; b < 24; ++b) feat(b) = std::log(banded(b) + 1e-10);
  const F0Track track = extract_f0(wave, cfg.sample_rate, cfg.hop);
  double f0_sum = 0;
  int f0_n = 0;
  for (std::size_t i = 0; i < track.f0_hz.size(); ++i)
    if (track.voiced[i]) {
      f0_sum += track.f0_hz[i];
      ++f0_n;
    }
  feat(24) = f0_n ? f0_sum / f0_n / 100.0 : 0.0;
  return feat;
}

// Full-batch softmax regression; deterministic.
struct SoftmaxProbe {
  Mat w;  // classes x (dim + 1)
  void train(const std::vector<Vec>& x, const std::vector<int>& y, int classes,
             int iters = 300, double lr = 0.5, double l2 = 1e-4) {
    const int d = static_cast<int>(x[0].size());
    const int n = static_cast<int>(x.size());
    w = Mat::Zero(classes, d + 1);
    for (int it = 0; it < iters; ++it) {
      Mat grad = l2 * w;
      for (int i = 0; i < n; ++i) {
        Vec xb(d + 1);
        xb.head(d) = x[i];
        xb(d) = 1.0;
        Vec logits = w * xb;
        logits.array() -= logits.maxCoeff();
        Vec p = logits.array().exp();
        p /= p.sum();
        p(y[i]) -= 1.0;
        grad += p * xb.transpose() / n;
      }
      w -= lr * grad;
    }
  }
  int predict(const Vec& xi) const {
    Vec xb(xi.size() + 1);
    xb.head(xi.size()) = xi;
    xb(xi.size()) = 1.0;
    int arg = 0;
    (w * xb).maxCoeff(&arg);
    return arg;
  }
};

void standardize(std::vector<Vec>& train, std::vector<Vec>& eval_set) {
  const int d = static_cast<int>(train[0].size());
  Vec mean = Vec::Zero(d), sd = Vec::Zero(d);
  for (const auto& v : train) mean += v;
  mean /= static_cast<double>(train.size());
  for (const auto& v : train) sd += (v - mean).cwiseAbs2();
  sd = (sd / static_cast<double>(train.size())).cwiseSqrt();
  for (int i = 0; i < d; ++i)
    if (sd(i) < 1e-9) sd(i) = 1.0;
  for (auto& v : train) v = (v - mean).cwiseQuotient(sd);
  for (auto& v : eval_set) v = (v - mean).cwiseQuotient(sd);
}

void check_probe_classes(const std::vector<int>& labels, int n_classes,
                         int min_each) {
  std::map<int, int> counts;
  for (const int l : labels) {
    if (l < 0 || l >= n_classes) throw ValidationError("probe: label out of range");
    ++counts[l];
  }
  if (static_cast<int>(counts.size()) < 2)
    throw ValidationError("probe: needs at least 2 classes");
  int lo = 1 << 30, hi = 0;
  for (const auto& [l, c] : counts) {
    lo = std::min(lo, c);
    hi = std::max(hi, c);
  }
  if (lo < min_each)
    throw ValidationError("probe: needs at least " + std::to_string(min_each) +
                          " examples per class");
  if (hi > 10 * lo) throw ValidationError("probe: class imbalance exceeds 10:1");
}

}  // namespace

ProbeResult speaker_probe(const std::vector<LabeledWave>& train,
                          const std::vector<LabeledWave>& eval_set,
                          int n_classes, const MelConfig& cfg) {
  if (train.empty() || eval_set.empty())
    throw ValidationError("speaker_probe: empty input");
  std::vector<int> train_labels;
  for (const auto& lw : train) train_labels.push_back(lw.label);
  check_probe_classes(train_labels, n_classes, 20);

  std::vector<Vec> x_train, x_eval;
  std::vector<int> y_train;
  for (const auto& lw : train) {
    x_train.push_back(wave_probe_features(*lw.waveform, cfg));
    y_train.push_back(lw.label);
  }
  for (const auto& lw : eval_set)
    x_eval.push_back(wave_probe_features(*lw.waveform, cfg));
  standardize(x_train, x_eval);

  SoftmaxProbe probe;
  probe.train(x_train, y_train, n_classes);
  int correct = 0;
  for (std::size_t i = 0; i < eval_set.size(); ++i)
    if (probe.predict(x_eval[i]) == eval_set[i].label) ++correct;
  ProbeResult res;
  res.accuracy = static_cast<double>(correct) / eval_set.size();
  res.n_eval = static_cast<int>(eval_set.size());
  res.n_classes = n_classes;
  return res;
}

ProbeResult latent_leakage_probe(const std::vector<std::pair<Vec, int>>& examples,
                                 int n_classes, std::uint64_t seed) {
  if (examples.size() < 10)
    throw ValidationError("latent_leakage_probe: too few examples");
  std::vector<int> labels;
  for (const auto& [v, l] : examples) labels.push_back(l);
  check_probe_classes(labels, n_classes, 5);

  std::vector<int> order(examples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  Rng rng(seed, "leakage-probe");
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[rng.uniform_int(i)]);

  const std::size_t n_train = examples.size() * 4 / 5;
  std::vector<Vec> x_train, x_eval;
  std::vector<int> y_train, y_eval;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto& [v, l] = examples[order[i]];
    if (i < n_train) {
      x_train.push_back(v);
      y_train.push_back(l);
    } else {
      x_eval.push_back(v);
      y_eval.push_back(l);
    }
  }
  standardize(x_train, x_eval);
  SoftmaxProbe probe;
  probe.train(x_train, y_train, n_classes);
  int correct = 0;
  for (std::size_t i = 0; i < x_eval.size(); ++i)
    if (probe.predict(x_eval[i]) == y_eval[i]) ++correct;
  ProbeResult res;
  res.accuracy = x_eval.empty() ? 0.0
                                : static_cast<double>(correct) / x_eval.size();
  res.n_eval = static_cast<int>(x_eval.size());
  res.n_classes = n_classes;
  return res;
}

double mel_l1(const Mat& reference, const Mat& synthesized) {
  if (reference.rows() != synthesized.rows())
    throw ValidationError("mel_l1: band count mismatch");
  const Eigen::Index t = std::min(reference.cols(), synthesized.cols());
  if (t == 0) throw ValidationError("mel_l1: empty input");
  return (reference.leftCols(t) - synthesized.leftCols(t)).cwiseAbs().mean();
}

}  // namespace prosoflow
