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

#ifndef PROSOFLOW_FFT_HPP_
#define PROSOFLOW_FFT_HPP_

#include <complex>
#include <vector>

#include "prosoflow/common.hpp"

namespace prosoflow {

// In-place iterative radix-2 FFT; n must be a power of two.
// sign = -1: forward (e^{-i2pikn/N}); sign = +1: unnormalized inverse kernel.
void fft_inplace(std::vector<std::complex<double>>& a, int sign);

// Real-input forward DFT. Returns bins 0..n/2 (re, im) of the standard
// unnormalized transform X_k = sum_n x_n e^{-i 2 pi k n / N}.
void rfft(const double* x, int n, std::vector<double>& re,
          std::vector<double>& im);

// Adjoint of rfft as a linear map from half-spectrum cotangents to input
// cotangents: dx_n = sum_{k=0}^{n/2} (dre_k cos(2pi k n/N) - dim_k sin(...)).
void rfft_adjoint(const std::vector<double>& dre, const std::vector<double>& dim,
                  int n, double* dx);

// Periodic Hann window of length n.
std::vector<double> hann_window(int n);

}  // namespace prosoflow

#endif  // PROSOFLOW_FFT_HPP_
