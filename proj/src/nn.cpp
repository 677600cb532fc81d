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

#include "prosoflow/nn.hpp"

#include <cmath>

namespace prosoflow::nn {

using namespace prosoflow::ad;

Var ParamStore::add(const std::string& name, Mat init) {
  for (const auto& e : entries_)
    if (e.name == name)
      throw std::invalid_argument("ParamStore: duplicate parameter " + name);
  Var v = leaf(std::move(init));
  entries_.push_back({name, v});
  return v;
}

Var ParamStore::add_uniform(const std::string& name, int rows, int cols,
                            int fan_in) {
  Rng rng(init_seed_ ^ fnv1a64(name));
  const double lim = std::sqrt(1.0 / std::max(1, fan_in));
  return add(name, rng.uniform_mat(rows, cols, -lim, lim));
}

Var ParamStore::add_zeros(const std::string& name, int rows, int cols) {
  return add(name, Mat::Zero(rows, cols));
}

Var ParamStore::add_normal(const std::string& name, int rows, int cols,
                           double stddev) {
  Rng rng(init_seed_ ^ fnv1a64(name));
  return add(name, rng.normal_mat(rows, cols, stddev));
}

Var ParamStore::find(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return e.v;
  throw std::invalid_argument("ParamStore: no parameter named " + name);
}

void ParamStore::zero_grads() {
  for (auto& e : entries_) {
    e.v->grad_ready = false;
    e.v->grad.resize(0, 0);
  }
}

std::size_t ParamStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += static_cast<std::size_t>(e.v->val.size());
  return n;
}

bool ParamStore::all_finite() const {
  for (const auto& e : entries_)
    if (!e.v->val.allFinite()) return false;
  return true;
}

std::uint64_t ParamStore::values_digest() const {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& e : entries_) {
    h = fnv1a64(e.name.data(), e.name.size(), h);
    h = fnv1a64(e.v->val.data(),
                static_cast<std::size_t>(e.v->val.size()) * sizeof(double), h);
  }
  return h;
}

void Adam::init(const ParamStore& store) {
  m.clear();
  v.clear();
  for (const auto& e : store.entries()) {
    m.push_back(Mat::Zero(e.v->val.rows(), e.v->val.cols()));
    v.push_back(Mat::Zero(e.v->val.rows(), e.v->val.cols()));
  }
  step_count = 0;
}

void Adam::step(ParamStore& store) {
  auto& entries = store.entries();
  if (m.size() != entries.size()) init(store);
  ++step_count;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));

  double scale_factor = 1.0;
  if (clip_norm > 0.0) {
    double sq = 0.0;
    for (auto& e : entries)
      if (e.v->grad_ready) sq += e.v->grad.squaredNorm();
    const double norm = std::sqrt(sq);
    if (norm > clip_norm) scale_factor = clip_norm / norm;
  }

  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto& p = entries[i].v;
    if (!p->grad_ready) continue;  // parameter unused in this graph
    const Mat g = p->grad * scale_factor;
    m[i] = beta1 * m[i] + (1.0 - beta1) * g;
    v[i] = beta2 * v[i] + (1.0 - beta2) * g.cwiseProduct(g);
    const Mat mhat = m[i] / bc1;
    const Mat vhat = v[i] / bc2;
    p->val.array() -= lr * mhat.array() / (vhat.array().sqrt() + eps);
  }
  store.zero_grads();
}

Linear::Linear(ParamStore& ps, const std::string& name, int in, int out,
               bool zero_init) {
  w = zero_init ? ps.add_zeros(name + ".w", out, in)
                : ps.add_uniform(name + ".w", out, in, in);
  b = ps.add_zeros(name + ".b", out, 1);
}

Var Linear::forward(const Var& x) const { return add_colvec(matmul(w, x), b); }

Conv1d::Conv1d(ParamStore& ps, const std::string& name, int cin, int cout,
               int k_, int stride_, int pad_, int dilation_)
    : k(k_), stride(stride_), dilation(dilation_) {
  pad = pad_ >= 0 ? pad_ : (k_ - 1) * dilation_ / 2;
  w = ps.add_uniform(name + ".w", cout, cin * k_, cin * k_);
  b = ps.add_zeros(name + ".b", cout, 1);
}

Var Conv1d::forward(const Var& x) const {
  return conv1d(x, w, b, k, stride, pad, dilation);
}

ConvT1d::ConvT1d(ParamStore& ps, const std::string& name, int cin, int cout,
                 int rate_)
    : rate(rate_) {
  w = ps.add_uniform(name + ".w", cout, cin * 2 * rate_, cin * 2 * rate_);
  b = ps.add_zeros(name + ".b", cout, 1);
}

Var ConvT1d::forward(const Var& x) const {
  return conv_transpose1d(x, w, b, rate);
}

Conv2d::Conv2d(ParamStore& ps, const std::string& name, int cin, int cout,
               int kh_, int kw_, int sh_, int sw_, int ph_, int pw_)
    : kh(kh_), kw(kw_), sh(sh_), sw(sw_), ph(ph_), pw(pw_) {
  w = ps.add_uniform(name + ".w", cout, cin * kh_ * kw_, cin * kh_ * kw_);
  b = ps.add_zeros(name + ".b", cout, 1);
}

Var Conv2d::forward(const Var& x) const {
  return conv2d(x, w, b, kh, kw, sh, sw, ph, pw);
}

Embedding::Embedding(ParamStore& ps, const std::string& name, int vocab,
                     int dim) {
  table = ps.add_normal(name + ".table", dim, vocab, 1.0 / std::sqrt(dim));
}

Var Embedding::forward(const std::vector<int>& ids) const {
  for (const int id : ids)
    if (id < 0 || id >= vocab())
      throw ValidationError("Embedding: id " + std::to_string(id) +
                            " outside vocabulary of " + std::to_string(vocab()));
  return gather_cols(table, ids);
}

Snake::Snake(ParamStore& ps, const std::string& name, int channels) {
  log_alpha = ps.add_zeros(name + ".log_alpha", channels, 1);
}

Var Snake::forward(const Var& x) const {
  return snake(x, exp_v(log_alpha));
}

LayerNorm::LayerNorm(ParamStore& ps, const std::string& name, int dim) {
  gamma = ps.add(name + ".gamma", Mat::Ones(dim, 1));
  beta = ps.add_zeros(name + ".beta", dim, 1);
}

Var LayerNorm::forward(const Var& x) const {
  return layer_norm_cols(x, gamma, beta);
}

SelfAttention::SelfAttention(ParamStore& ps, const std::string& name, int dim_,
                             int heads_)
    : heads(heads_), dim(dim_) {
  if (dim_ % heads_ != 0)
    throw std::invalid_argument("SelfAttention: dim must divide by heads");
  q = Linear(ps, name + ".q", dim_, dim_);
  k = Linear(ps, name + ".k", dim_, dim_);
  v = Linear(ps, name + ".v", dim_, dim_);
  o = Linear(ps, name + ".o", dim_, dim_);
}

Var SelfAttention::forward(const Var& x) const {
  const int dh = dim / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  Var qs = q.forward(x), ks = k.forward(x), vs = v.forward(x);
  std::vector<Var> head_outs;
  for (int h = 0; h < heads; ++h) {
    Var qh = slice_rows(qs, h * dh, dh);
    Var kh = slice_rows(ks, h * dh, dh);
    Var vh = slice_rows(vs, h * dh, dh);
    Var scores = scale(matmul_tn(qh, kh), inv_sqrt);  // T x T
    Var attn = softmax_rows(scores);
    head_outs.push_back(matmul_nt(vh, attn));
  }
  return o.forward(concat_rows(head_outs));
}

TransformerBlock::TransformerBlock(ParamStore& ps, const std::string& name,
                                   int dim, int heads, int ff_dim) {
  ln1 = LayerNorm(ps, name + ".ln1", dim);
  ln2 = LayerNorm(ps, name + ".ln2", dim);
  attn = SelfAttention(ps, name + ".attn", dim, heads);
  ff1 = Linear(ps, name + ".ff1", dim, ff_dim);
  ff2 = Linear(ps, name + ".ff2", ff_dim, dim);
}

Var TransformerBlock::forward(const Var& x) const {
  Var h = add(x, attn.forward(ln1.forward(x)));
  return add(h, ff2.forward(tanh_v(ff1.forward(ln2.forward(h)))));
}

Mat sinusoidal_positions(int dim, int n_positions) {
  Mat pe(dim, n_positions);
  for (int p = 0; p < n_positions; ++p) {
    for (int i = 0; i < dim; ++i) {
      const double rate = std::pow(10000.0, -2.0 * (i / 2) / dim);
      pe(i, p) = (i % 2 == 0) ? std::sin(p * rate) : std::cos(p * rate);
    }
  }
  return pe;
}

Var gaussian_kl(const Var& mu, const Var& log_sigma) {
  const double n = static_cast<double>(mu->val.size());
  Var s1 = sum_all(exp_v(scale(log_sigma, 2.0)));
  Var s2 = sum_all(cmul(mu, mu));
  Var s3 = sum_all(log_sigma);
  return add_scalar(scale(add(add(s1, s2), scale(s3, -2.0)), 0.5), -0.5 * n);
}

Var reparam_sample(const Var& mu, const Var& log_sigma, const Mat& eps) {
  if (eps.rows() != mu->val.rows() || eps.cols() != mu->val.cols())
    throw std::invalid_argument("reparam_sample: eps shape mismatch");
  return add(mu, cmul(exp_v(log_sigma), constant(eps)));
}

}  // namespace prosoflow::nn
