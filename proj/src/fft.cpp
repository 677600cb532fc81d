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

#include "prosoflow/fft.hpp"

#include <cmath>

namespace prosoflow {

namespace {
constexpr double kTwoPi = 6.283185307179586476925286766559;

bool is_pow2(int n) { return n > 0 && (n & (n - 1)) == 0; }
}  // namespace

void fft_inplace(std::vector<std::complex<double>>& a, int sign) {
  const int n = static_cast<int>(a.size());
  if (!is_pow2(n)) throw std::invalid_argument("fft: size must be a power of two");
  // Bit reversal permutation.
  for (int i = 1, j = 0; i < n; ++i) {
    int bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (int len = 2; len <= n; len <<= 1) {
    const double ang = sign * kTwoPi / len;
    const std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (int i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (int k = 0; k < len / 2; ++k) {
        const std::complex<double> u = a[i + k];
        const std::complex<double> v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

void rfft(const double* x, int n, std::vector<double>& re,
          std::vector<double>& im) {
  std::vector<std::complex<double>> buf(n);
  for (int i = 0; i < n; ++i) buf[i] = std::complex<double>(x[i], 0.0);
  fft_inplace(buf, -1);
  const int bins = n / 2 + 1;
  re.resize(bins);
  im.resize(bins);
  for (int k = 0; k < bins; ++k) {
    re[k] = buf[k].real();
    im[k] = buf[k].imag();
  }
}

void rfft_adjoint(const std::vector<double>& dre, const std::vector<double>& dim,
                  int n, double* dx) {
  // dx_n = Re( sum_{k=0}^{n/2} (dre_k + i dim_k) e^{+i 2 pi k n / N} ),
  // evaluated with one length-n FFT of the zero-extended cotangent spectrum.
  std::vector<std::complex<double>> buf(n, std::complex<double>(0.0, 0.0));
  const int bins = n / 2 + 1;
  for (int k = 0; k < bins; ++k) buf[k] = std::complex<double>(dre[k], dim[k]);
  fft_inplace(buf, +1);
  for (int i = 0; i < n; ++i) dx[i] = buf[i].real();
}

std::vector<double> hann_window(int n) {
  std::vector<double> w(n);
  for (int i = 0; i < n; ++i)
    w[i] = 0.5 - 0.5 * std::cos(kTwoPi * i / n);
  return w;
}

}  // namespace prosoflow
