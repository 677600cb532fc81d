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
//
// Reverse-mode automatic differentiation over Eigen double matrices.
// Graphs are dynamic: every op allocates a node holding its value and a
// closure that scatters cotangents into its parents. Sequences are laid out
// channels x time (one column per step); 2D feature maps additionally carry
// their height/width so convolutions can interpret the flat column layout.

#ifndef PROSOFLOW_TENSOR_HPP_
#define PROSOFLOW_TENSOR_HPP_

#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "prosoflow/common.hpp"

namespace prosoflow::ad {

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
  Mat val;
  Mat grad;
  bool needs_grad = false;
  bool grad_ready = false;
  int img_h = 0;  // conv2d metadata; 0 for plain matrices
  int img_w = 0;
  std::vector<Var> parents;
  std::function<void(Node&)> backfn;

  Mat& ensure_grad() {
    if (!grad_ready) {
      grad = Mat::Zero(val.rows(), val.cols());
      grad_ready = true;
    }
    return grad;
  }
};

Var constant(Mat m);
Var leaf(Mat m);  // trainable leaf (needs_grad = true)

// Accumulates d(root)/d(leaf) into every reachable leaf's grad. root must be
// a 1x1 scalar.
void backward(const Var& root);

// ---- arithmetic ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var cmul(const Var& a, const Var& b);  // elementwise
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var matmul(const Var& a, const Var& b);
Var matmul_tn(const Var& a, const Var& b);  // a^T * b
Var matmul_nt(const Var& a, const Var& b);  // a * b^T

// Broadcast helpers for channels-x-time layouts (v is C x 1).
Var add_colvec(const Var& x, const Var& v);
Var mul_colvec(const Var& x, const Var& v);

// ---- shape ----
Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);
Var slice_rows(const Var& a, int r0, int n);
Var slice_cols(const Var& a, int c0, int n);
Var gather_cols(const Var& a, std::vector<int> idx);
// Mean over each [start, end) column span; empty spans give a zero column.
Var segment_mean_cols(const Var& a, std::vector<std::pair<int, int>> spans);
Var broadcast_col(const Var& v, int n);
Var diag_embed(const Var& v);  // n x 1 -> n x n diagonal
Var stop_grad(const Var& a);

// Flattens a bins x frames spectrogram into a 1-channel image node with
// img_h = frames, img_w = bins.
Var spec_to_image(const Var& spec);

// ---- reductions (1x1 results) ----
Var sum_all(const Var& a);
Var mean_all(const Var& a);
Var mean_abs(const Var& a);
Var mean_sq(const Var& a);

// ---- elementwise nonlinearities ----
Var tanh_v(const Var& a);
Var sigmoid_v(const Var& a);
Var exp_v(const Var& a);
Var log_v(const Var& a);              // requires positive input
Var clamp_log(const Var& a, double floor);
Var leaky_relu(const Var& a, double slope = 0.1);
// Periodic activation x + sin^2(alpha x) / alpha with per-channel alpha (C x 1).
Var snake(const Var& x, const Var& alpha);
// Per-row softmax (each row sums to one).
Var softmax_rows(const Var& a);
// Per-column layer normalization with per-channel gain/bias (C x 1).
Var layer_norm_cols(const Var& x, const Var& gamma, const Var& beta,
                    double eps = 1e-5);

// ---- convolutions ----
// weight layout: C_out x (C_in * K); slice k is the C_out x C_in tap at
// kernel offset k. bias: C_out x 1.
Var conv1d(const Var& x, const Var& weight, const Var& bias, int k, int stride,
           int pad, int dilation = 1);
// Upsampling transposed convolution: kernel 2*rate, stride rate, pad rate/2;
// output has exactly rate * T columns. rate must be even or 1.
Var conv_transpose1d(const Var& x, const Var& weight, const Var& bias,
                     int rate);
// 2D convolution over image nodes; weight C_out x (C_in * kh * kw).
Var conv2d(const Var& x, const Var& weight, const Var& bias, int kh, int kw,
           int sh, int sw, int ph, int pw);

// ---- signal ----
// Magnitude STFT of a 1 x T waveform: (n_fft/2 + 1) x ceil(T/hop), Hann
// window, frames starting at t*hop with tail zero-padding (matches
// extract_mel's framing). Differentiable w.r.t. the waveform.
Var stft_magnitude(const Var& x, int n_fft, int hop);

}  // namespace prosoflow::ad

#endif  // PROSOFLOW_TENSOR_HPP_
