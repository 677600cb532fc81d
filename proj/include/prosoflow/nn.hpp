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

#ifndef PROSOFLOW_NN_HPP_
#define PROSOFLOW_NN_HPP_

#include <string>
#include <vector>

#include "prosoflow/rng.hpp"
#include "prosoflow/tensor.hpp"

namespace prosoflow::nn {

using ad::Var;

// Named trainable leaves. Initialization draws from a stream derived from
// (seed, name), so adding parameters elsewhere does not reshuffle existing
// ones.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Var v;
  };

  explicit ParamStore(std::uint64_t init_seed = 0) : init_seed_(init_seed) {}

  Var add(const std::string& name, Mat init);
  // Uniform(-sqrt(1/fan_in), +sqrt(1/fan_in)) init.
  Var add_uniform(const std::string& name, int rows, int cols, int fan_in);
  Var add_zeros(const std::string& name, int rows, int cols);
  Var add_normal(const std::string& name, int rows, int cols, double stddev);

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }
  Var find(const std::string& name) const;

  void zero_grads();
  std::size_t parameter_count() const;
  bool all_finite() const;
  std::uint64_t values_digest() const;

 private:
  std::uint64_t init_seed_;
  std::vector<Entry> entries_;
};

struct Adam {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 0.0;  // 0 disables clipping
  long long step_count = 0;
  std::vector<Mat> m, v;

  void init(const ParamStore& store);
  // One update from accumulated grads; zeroes grads afterwards.
  void step(ParamStore& store);
};

struct Linear {
  Var w, b;
  Linear() = default;
  Linear(ParamStore& ps, const std::string& name, int in, int out,
         bool zero_init = false);
  Var forward(const Var& x) const;
};

struct Conv1d {
  Var w, b;
  int k = 3, stride = 1, pad = 1, dilation = 1;
  Conv1d() = default;
  Conv1d(ParamStore& ps, const std::string& name, int cin, int cout, int k,
         int stride = 1, int pad = -1, int dilation = 1);  // pad -1 => same
  Var forward(const Var& x) const;
};

struct ConvT1d {
  Var w, b;
  int rate = 2;
  ConvT1d() = default;
  ConvT1d(ParamStore& ps, const std::string& name, int cin, int cout, int rate);
  Var forward(const Var& x) const;
};

struct Conv2d {
  Var w, b;
  int kh = 3, kw = 3, sh = 1, sw = 1, ph = 1, pw = 1;
  Conv2d() = default;
  Conv2d(ParamStore& ps, const std::string& name, int cin, int cout, int kh,
         int kw, int sh, int sw, int ph, int pw);
  Var forward(const Var& x) const;
};

struct Embedding {
  Var table;  // dim x vocab
  Embedding() = default;
  Embedding(ParamStore& ps, const std::string& name, int vocab, int dim);
  Var forward(const std::vector<int>& ids) const;
  int vocab() const { return static_cast<int>(table->val.cols()); }
};

struct Snake {
  Var log_alpha;
  Snake() = default;
  Snake(ParamStore& ps, const std::string& name, int channels);
  Var forward(const Var& x) const;
};

struct LayerNorm {
  Var gamma, beta;
  LayerNorm() = default;
  LayerNorm(ParamStore& ps, const std::string& name, int dim);
  Var forward(const Var& x) const;
};

struct SelfAttention {
  Linear q, k, v, o;
  int heads = 2, dim = 0;
  SelfAttention() = default;
  SelfAttention(ParamStore& ps, const std::string& name, int dim, int heads);
  Var forward(const Var& x) const;
};

struct TransformerBlock {
  LayerNorm ln1, ln2;
  SelfAttention attn;
  Linear ff1, ff2;
  TransformerBlock() = default;
  TransformerBlock(ParamStore& ps, const std::string& name, int dim, int heads,
                   int ff_dim);
  Var forward(const Var& x) const;
};

// Fixed sinusoidal position table, dim x n_positions.
Mat sinusoidal_positions(int dim, int n_positions);

// Closed-form KL(N(mu, sigma) || N(0, I)) summed over all entries;
// log_sigma parameterizes sigma = exp(log_sigma).
Var gaussian_kl(const Var& mu, const Var& log_sigma);

// Reparameterized draw mu + exp(log_sigma) .* eps; gradients flow through
// the posterior parameters.
Var reparam_sample(const Var& mu, const Var& log_sigma, const Mat& eps);

}  // namespace prosoflow::nn

#endif  // PROSOFLOW_NN_HPP_
