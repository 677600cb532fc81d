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

#ifndef PROSOFLOW_FLOW_HPP_
#define PROSOFLOW_FLOW_HPP_

#include <string>
#include <utility>
#include <vector>

#include "prosoflow/nn.hpp"

namespace prosoflow {

// One invertible step acting independently on each column (word):
// activation normalization, an LU-parameterized channel mixing initialized
// to a reversal permutation, and an affine coupling whose scale/shift come
// from the untouched half and the word's condition vector. Couplings are
// zero-initialized, so a fresh stack is the identity up to the accumulated
// channel permutation and its total log-determinant is zero.
struct FlowStep {
  int channels = 0;
  int n_keep = 0;  // coupling keeps the first n_keep channels
  ad::Var act_log_scale, act_bias;
  ad::Var mix_lower, mix_upper, mix_log_diag;  // masked below/above diagonal
  Mat mix_perm;                                // fixed permutation
  nn::Linear coup_hidden, coup_out;
  Mat lower_mask, upper_mask;

  FlowStep() = default;
  FlowStep(nn::ParamStore& ps, const std::string& name, int channels,
           int cond_dim, int hidden);

  // Mixing matrix P * L * U assembled from the LU factors.
  ad::Var mixing_matrix() const;
  Mat mixing_matrix_plain() const;
};

struct FlowForward {
  ad::Var output;
  ad::Var log_det;  // summed over steps, words, and channels
};

// K composed steps over channels x words sequences with per-word conditions.
class FlowStack {
 public:
  FlowStack() = default;
  FlowStack(nn::ParamStore& ps, const std::string& name, int channels,
            int n_steps, int cond_dim, int hidden, double scale_limit = 2.0);

  // Data -> noise direction on the tape, with the exact log-determinant of
  // the per-word Jacobian accumulated analytically.
  FlowForward forward(const ad::Var& z, const ad::Var& cond) const;

  // Tape-free evaluation for sampling and verification.
  Mat forward_plain(const Mat& z, const Mat& cond, double* log_det = nullptr) const;
  Mat inverse_plain(const Mat& z_noise, const Mat& cond) const;

  int channels() const { return channels_; }
  int n_steps() const { return static_cast<int>(steps_.size()); }

 private:
  int channels_ = 0;
  int cond_dim_ = 0;
  double scale_limit_ = 2.0;
  std::vector<FlowStep> steps_;
};

}  // namespace prosoflow

#endif  // PROSOFLOW_FLOW_HPP_
