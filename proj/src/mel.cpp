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

#include "prosoflow/mel.hpp"

#include <cmath>

#include "prosoflow/fft.hpp"

namespace prosoflow {

namespace {

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

}  // namespace

void MelConfig::validate() const {
  if (sample_rate <= 0) throw ValidationError("MelConfig: sample_rate must be positive");
  if (n_fft <= 0 || (n_fft & (n_fft - 1)) != 0)
    throw ValidationError("MelConfig: n_fft must be a power of two");
  if (hop <= 0 || hop > n_fft) throw ValidationError("MelConfig: bad hop");
  if (window != n_fft) throw ValidationError("MelConfig: window must equal n_fft");
  if (bands <= 0) throw ValidationError("MelConfig: bands must be positive");
  if (fmax <= fmin || fmax > sample_rate / 2.0)
    throw ValidationError("MelConfig: bad fmin/fmax");
  if (log_floor <= 0) throw ValidationError("MelConfig: log_floor must be positive");
}

Mat mel_filterbank(const MelConfig& cfg) {
  const int bins = cfg.n_fft / 2 + 1;
  Mat fb = Mat::Zero(cfg.bands, bins);
  const double mel_lo = hz_to_mel(cfg.fmin);
  const double mel_hi = hz_to_mel(cfg.fmax);
  std::vector<double> edges(cfg.bands + 2);
  for (int i = 0; i < cfg.bands + 2; ++i)
    edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (cfg.bands + 1));
  const double bin_hz = static_cast<double>(cfg.sample_rate) / cfg.n_fft;
  for (int b = 0; b < cfg.bands; ++b) {
    const double lo = edges[b], mid = edges[b + 1], hi = edges[b + 2];
    for (int k = 0; k < bins; ++k) {
      const double f = k * bin_hz;
      double w = 0.0;
      if (f >= lo && f <= mid && mid > lo)
        w = (f - lo) / (mid - lo);
      else if (f > mid && f <= hi && hi > mid)
        w = (hi - f) / (hi - mid);
      fb(b, k) = w;
    }
  }
  return fb;
}

int num_mel_frames(std::size_t n_samples, const MelConfig& cfg) {
  return static_cast<int>((n_samples + cfg.hop - 1) / cfg.hop);
}

MelSpectrogram extract_mel(const std::vector<double>& waveform,
                           const MelConfig& cfg) {
  cfg.validate();
  if (waveform.empty()) throw std::invalid_argument("extract_mel: empty waveform");
  const int t_mel = num_mel_frames(waveform.size(), cfg);
  const Mat fb = mel_filterbank(cfg);
  const std::vector<double> win = hann_window(cfg.n_fft);
  const int bins = cfg.n_fft / 2 + 1;

  MelSpectrogram out;
  out.config = cfg;
  out.frames.resize(cfg.bands, t_mel);

  std::vector<double> seg(cfg.n_fft);
  std::vector<double> re, im;
  Vec mag(bins);
  for (int t = 0; t < t_mel; ++t) {
    const std::size_t start = static_cast<std::size_t>(t) * cfg.hop;
    for (int i = 0; i < cfg.n_fft; ++i) {
      const std::size_t idx = start + i;
      seg[i] = (idx < waveform.size() ? waveform[idx] : 0.0) * win[i];
    }
    rfft(seg.data(), cfg.n_fft, re, im);
    for (int k = 0; k < bins; ++k) mag(k) = std::sqrt(re[k] * re[k] + im[k] * im[k]);
    Vec mel = fb * mag;
    // Floored log-amplitude: log(x + floor) keeps every entry >= log(floor)
    // and stays smooth through silence.
    for (int b = 0; b < cfg.bands; ++b)
      out.frames(b, t) = std::log(mel(b) + cfg.log_floor);
  }
  return out;
}

}  // namespace prosoflow
