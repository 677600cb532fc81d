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

#ifndef PROSOFLOW_PREDICTOR_HPP_
#define PROSOFLOW_PREDICTOR_HPP_

#include <map>
#include <string>
#include <vector>

#include "prosoflow/corpus.hpp"
#include "prosoflow/flow.hpp"
#include "prosoflow/nn.hpp"

namespace prosoflow {

// Word-count layout of one context window over consecutive sentences.
struct WindowLayout {
  int first_sentence = 0;
  int n_sentences = 0;
  int target_sentence = 0;
  int total_words = 0;
  int target_begin = 0;  // word offset of the target inside the window
  int target_end = 0;
};

// Greedy concatenation of consecutive sentences around each target until the
// word count lands in [min_words, max_words]. Every sentence is the target of
// exactly one window; documents shorter than min_words yield one relaxed
// window per sentence.
std::vector<WindowLayout> build_windows(const std::vector<int>& sentence_word_counts,
                                        int min_words = 72, int max_words = 95);

// A window resolved against corpus utterances.
struct ContextWindow {
  std::vector<std::string> tokens;
  std::vector<int> sentence_utterances;  // corpus indices, window order
  int target_utterance = -1;
  int target_begin = 0;
  int target_end = 0;
  std::string speaker_id;
};

// Windows for one document (utterance indices in reading order).
std::vector<ContextWindow> build_context_windows(
    const Corpus& corpus, const std::vector<int>& doc_utterances,
    int min_words = 72, int max_words = 95);

struct PredictorConfig {
  int z_dim = 4;
  int zd_dim = 2;
  int n_flow_steps = 12;
  int coupling_hidden = 48;
  int vocab_buckets = 256;
  int ctx_dim = 48;
  int ctx_heads = 4;
  int ctx_layers = 2;
  int cond_dim = 48;
  int speaker_dim = 192;
  int max_positions = 256;
};

// Contextual word conditions from window text plus speaker identity.
class ContextEncoder {
 public:
  ContextEncoder() = default;
  ContextEncoder(nn::ParamStore& ps, const std::string& name,
                 const PredictorConfig& cfg);

  ad::Var forward(const std::vector<std::string>& tokens,
                  const Vec& speaker) const;
  int token_bucket(const std::string& token) const;

 private:
  PredictorConfig cfg_;
  nn::Embedding emb_;
  Mat positions_;
  std::vector<nn::TransformerBlock> blocks_;
  nn::Linear spk_proj_;
  nn::Linear out_proj_;
};

// Conditional flow prosody predictor: two parallel stacks (acoustic latents,
// duration latents) sharing one context encoder, trained by exact
// log-likelihood.
class ProsodyPredictor {
 public:
  ProsodyPredictor() = default;
  ProsodyPredictor(nn::ParamStore& ps, const PredictorConfig& cfg);

  const PredictorConfig& config() const { return cfg_; }

  ad::Var word_conditions(const ContextWindow& window, const Vec& speaker) const;

  // Mean per-word negative log-likelihood of the window's latent rows.
  ad::Var nll_per_word(const ContextWindow& window, const Vec& speaker,
                       const Mat& z, const Mat& zd) const;

  struct Sampled {
    Mat z;   // z_dim x words
    Mat zd;  // zd_dim x words
  };
  // Draw noise over the whole window at temperature tau, invert the flows,
  // and keep the target span's rows.
  Sampled sample(const ContextWindow& window, const Vec& speaker, double tau,
                 Rng& rng) const;
  Sampled sample_full_window(const ContextWindow& window, const Vec& speaker,
                             double tau, Rng& rng) const;

  const FlowStack& z_stack() const { return z_stack_; }
  const FlowStack& zd_stack() const { return zd_stack_; }

 private:
  PredictorConfig cfg_;
  ContextEncoder encoder_;
  FlowStack z_stack_;
  FlowStack zd_stack_;
};

// Per-utterance posterior-mean latents exported from Stage I, the Stage II
// regression targets.
struct LatentCache {
  struct Record {
    std::string utterance_id;
    std::string speaker_id;
    Mat z_mean;   // z_dim x W
    Mat zd_mean;  // zd_dim x W
  };
  std::vector<Record> records;

  const Record& at(const std::string& utterance_id) const;
  bool has(const std::string& utterance_id) const;
  void save(const std::string& path) const;
  static LatentCache load(const std::string& path);
};

}  // namespace prosoflow

#endif  // PROSOFLOW_PREDICTOR_HPP_
