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

#include "prosoflow/flow.hpp"

#include <cmath>

namespace prosoflow {

using namespace prosoflow::ad;

FlowStep::FlowStep(nn::ParamStore& ps, const std::string& name, int channels_,
                   int cond_dim, int hidden)
    : channels(channels_), n_keep(channels_ / 2) {
  if (channels_ < 2) throw std::invalid_argument("FlowStep: needs >= 2 channels");
  act_log_scale = ps.add_zeros(name + ".act_log_scale", channels_, 1);
  act_bias = ps.add_zeros(name + ".act_bias", channels_, 1);
  mix_lower = ps.add_zeros(name + ".mix_lower", channels_, channels_);
  mix_upper = ps.add_zeros(name + ".mix_upper", channels_, channels_);
  mix_log_diag = ps.add_zeros(name + ".mix_log_diag", channels_, 1);
  mix_perm = Mat::Zero(channels_, channels_);
  for (int i = 0; i < channels_; ++i) mix_perm(i, channels_ - 1 - i) = 1.0;
  lower_mask = Mat::Zero(channels_, channels_);
  upper_mask = Mat::Zero(channels_, channels_);
  for (int r = 0; r < channels_; ++r)
    for (int c = 0; c < channels_; ++c) {
      if (r > c) lower_mask(r, c) = 1.0;
      if (r < c) upper_mask(r, c) = 1.0;
    }
  const int n_transform = channels_ - n_keep;
  coup_hidden = nn::Linear(ps, name + ".coup_hidden", n_keep + cond_dim, hidden);
  coup_out = nn::Linear(ps, name + ".coup_out", hidden, 2 * n_transform,
                        /*zero_init=*/true);
}

Var FlowStep::mixing_matrix() const {
  Var lower = add(cmul(mix_lower, constant(lower_mask)),
                  constant(Mat::Identity(channels, channels)));
  Var upper = add(cmul(mix_upper, constant(upper_mask)),
                  diag_embed(exp_v(mix_log_diag)));
  return matmul(constant(mix_perm), matmul(lower, upper));
}

Mat FlowStep::mixing_matrix_plain() const {
  Mat lower = mix_lower->val.cwiseProduct(lower_mask) +
              Mat::Identity(channels, channels);
  Mat upper = mix_upper->val.cwiseProduct(upper_mask);
  upper.diagonal() = mix_log_diag->val.col(0).array().exp();
  return mix_perm * lower * upper;
}

FlowStack::FlowStack(nn::ParamStore& ps, const std::string& name, int channels,
                     int n_steps, int cond_dim, int hidden, double scale_limit)
    : channels_(channels), cond_dim_(cond_dim), scale_limit_(scale_limit) {
  for (int i = 0; i < n_steps; ++i)
    steps_.emplace_back(ps, name + ".step" + std::to_string(i), channels,
                        cond_dim, hidden);
}

FlowForward FlowStack::forward(const Var& z, const Var& cond) const {
  if (z->val.rows() != channels_)
    throw std::invalid_argument("FlowStack: channel mismatch");
  if (z->val.cols() != cond->val.cols())
    throw std::invalid_argument("FlowStack: word count mismatch with conditions");
  const int n_words = static_cast<int>(z->val.cols());
  Var h = z;
  Var log_det = constant(Mat::Zero(1, 1));
  for (const auto& st : steps_) {
    // actnorm
    h = add_colvec(mul_colvec(h, exp_v(st.act_log_scale)), st.act_bias);
    log_det = add(log_det, scale(sum_all(st.act_log_scale),
                                 static_cast<double>(n_words)));
    // channel mixing
    h = matmul(st.mixing_matrix(), h);
    log_det = add(log_det, scale(sum_all(st.mix_log_diag),
                                 static_cast<double>(n_words)));
    // affine coupling on the tail half
    Var keep = slice_rows(h, 0, st.n_keep);
    Var rest = slice_rows(h, st.n_keep, channels_ - st.n_keep);
    Var hcat = concat_rows({keep, cond});
    Var hid = tanh_v(st.coup_hidden.forward(hcat));
    Var params = st.coup_out.forward(hid);
    const int nt = channels_ - st.n_keep;
    Var log_s = scale(tanh_v(scale(slice_rows(params, 0, nt),
                                   1.0 / scale_limit_)),
                      scale_limit_);
    Var shift = slice_rows(params, nt, nt);
    rest = add(cmul(rest, exp_v(log_s)), shift);
    log_det = add(log_det, sum_all(log_s));
    h = concat_rows({keep, rest});
  }
  return {h, log_det};
}

Mat FlowStack::forward_plain(const Mat& z, const Mat& cond,
                             double* log_det) const {
  const int n_words = static_cast<int>(z.cols());
  Mat h = z;
  double ld = 0.0;
  for (const auto& st : steps_) {
    const Eigen::ArrayXd s = st.act_log_scale->val.col(0).array().exp();
    h = (h.array().colwise() * s).matrix();
    h.colwise() += Vec(st.act_bias->val.col(0));
    ld += st.act_log_scale->val.sum() * n_words;
    h = st.mixing_matrix_plain() * h;
    ld += st.mix_log_diag->val.sum() * n_words;
    const int nt = channels_ - st.n_keep;
    Mat hcat(st.n_keep + cond.rows(), n_words);
    hcat.topRows(st.n_keep) = h.topRows(st.n_keep);
    hcat.bottomRows(cond.rows()) = cond;
    Mat hid = (st.coup_hidden.w->val * hcat).colwise() +
              Vec(st.coup_hidden.b->val.col(0));
    hid = hid.array().tanh().matrix();
    Mat params =
        (st.coup_out.w->val * hid).colwise() + Vec(st.coup_out.b->val.col(0));
    Mat log_s = (params.topRows(nt) / scale_limit_).array().tanh().matrix() *
                scale_limit_;
    h.bottomRows(nt) =
        (h.bottomRows(nt).array() * log_s.array().exp() +
         params.bottomRows(nt).array())
            .matrix();
    ld += log_s.sum();
  }
  if (log_det) *log_det = ld;
  return h;
}

Mat FlowStack::inverse_plain(const Mat& z_noise, const Mat& cond) const {
  const int n_words = static_cast<int>(z_noise.cols());
  Mat h = z_noise;
  for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) {
    const auto& st = *it;
    const int nt = channels_ - st.n_keep;
    // coupling inverse: the kept half is unchanged, so the same parameters
    // are recoverable from the output
    Mat hcat(st.n_keep + cond.rows(), n_words);
    hcat.topRows(st.n_keep) = h.topRows(st.n_keep);
    hcat.bottomRows(cond.rows()) = cond;
    Mat hid = (st.coup_hidden.w->val * hcat).colwise() +
              Vec(st.coup_hidden.b->val.col(0));
    hid = hid.array().tanh().matrix();
    Mat params =
        (st.coup_out.w->val * hid).colwise() + Vec(st.coup_out.b->val.col(0));
    Mat log_s = (params.topRows(nt) / scale_limit_).array().tanh().matrix() *
                scale_limit_;
    h.bottomRows(nt) = ((h.bottomRows(nt).array() - params.bottomRows(nt).array()) *
                        (-log_s).array().exp())
                           .matrix();
    // mixing inverse via the LU factors
    const Mat w = st.mixing_matrix_plain();
    h = w.partialPivLu().solve(h);
    // actnorm inverse
    h.colwise() -= Vec(st.act_bias->val.col(0));
    const Eigen::ArrayXd inv_s = (-st.act_log_scale->val.col(0).array()).exp();
    h = (h.array().colwise() * inv_s).matrix();
  }
  return h;
}

}  // namespace prosoflow
