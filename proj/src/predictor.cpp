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

#include "prosoflow/predictor.hpp"

#include <cmath>

#include <json.hpp>

#include "prosoflow/checkpoint.hpp"

namespace prosoflow {

using namespace prosoflow::ad;
using nlohmann::json;

namespace {
constexpr double kLog2Pi = 1.8378770664093454835606594728112;
}

std::vector<WindowLayout> build_windows(const std::vector<int>& counts,
                                        int min_words, int max_words) {
  if (counts.empty())
    throw ValidationError("build_windows: empty document");
  const int n = static_cast<int>(counts.size());
  std::vector<WindowLayout> out;
  for (int target = 0; target < n; ++target) {
    int lo = target, hi = target;
    int total = counts[target];
    bool prefer_prev = true;
    while (total < min_words) {
      bool added = false;
      for (int attempt = 0; attempt < 2 && !added; ++attempt) {
        const bool take_prev = (attempt == 0) ? prefer_prev : !prefer_prev;
        if (take_prev && lo > 0 && total + counts[lo - 1] <= max_words) {
          --lo;
          total += counts[lo];
          added = true;
        } else if (!take_prev && hi + 1 < n && total + counts[hi + 1] <= max_words) {
          ++hi;
          total += counts[hi];
          added = true;
        }
      }
      if (!added) break;  // document exhausted or any addition overshoots
      prefer_prev = !prefer_prev;
    }
    WindowLayout w;
    w.first_sentence = lo;
    w.n_sentences = hi - lo + 1;
    w.target_sentence = target;
    w.total_words = total;
    w.target_begin = 0;
    for (int s = lo; s < target; ++s) w.target_begin += counts[s];
    w.target_end = w.target_begin + counts[target];
    out.push_back(w);
  }
  return out;
}

std::vector<ContextWindow> build_context_windows(
    const Corpus& corpus, const std::vector<int>& doc_utterances,
    int min_words, int max_words) {
  std::vector<int> counts;
  std::vector<std::vector<std::string>> words;
  for (const int ui : doc_utterances) {
    words.push_back(split_ws(corpus.utterances[ui].text));
    counts.push_back(static_cast<int>(words.back().size()));
  }
  std::vector<ContextWindow> out;
  for (const auto& layout : build_windows(counts, min_words, max_words)) {
    ContextWindow w;
    for (int s = layout.first_sentence;
         s < layout.first_sentence + layout.n_sentences; ++s) {
      w.sentence_utterances.push_back(doc_utterances[s]);
      for (const auto& tok : words[s]) w.tokens.push_back(tok);
    }
    w.target_utterance = doc_utterances[layout.target_sentence];
    w.target_begin = layout.target_begin;
    w.target_end = layout.target_end;
    w.speaker_id = corpus.utterances[w.target_utterance].speaker_id;
    out.push_back(std::move(w));
  }
  return out;
}

ContextEncoder::ContextEncoder(nn::ParamStore& ps, const std::string& name,
                               const PredictorConfig& cfg)
    : cfg_(cfg) {
  emb_ = nn::Embedding(ps, name + ".emb", cfg.vocab_buckets, cfg.ctx_dim);
  positions_ = nn::sinusoidal_positions(cfg.ctx_dim, cfg.max_positions);
  for (int i = 0; i < cfg.ctx_layers; ++i)
    blocks_.emplace_back(ps, name + ".block" + std::to_string(i), cfg.ctx_dim,
                         cfg.ctx_heads, 2 * cfg.ctx_dim);
  spk_proj_ = nn::Linear(ps, name + ".spk_proj", cfg.speaker_dim, cfg.ctx_dim);
  out_proj_ = nn::Linear(ps, name + ".out_proj", 2 * cfg.ctx_dim, cfg.cond_dim);
}

int ContextEncoder::token_bucket(const std::string& token) const {
  return static_cast<int>(fnv1a64(token) % cfg_.vocab_buckets);
}

Var ContextEncoder::forward(const std::vector<std::string>& tokens,
                            const Vec& speaker) const {
  if (tokens.empty()) throw ValidationError("ContextEncoder: empty window");
  const int n = static_cast<int>(tokens.size());
  if (n > cfg_.max_positions)
    throw ValidationError("ContextEncoder: window exceeds max positions");
  std::vector<int> ids(n);
  for (int i = 0; i < n; ++i) ids[i] = token_bucket(tokens[i]);
  Var h = add(emb_.forward(ids), constant(positions_.leftCols(n)));
  for (const auto& block : blocks_) h = block.forward(h);
  Var spk = spk_proj_.forward(constant(speaker));
  Var combined = concat_rows({h, broadcast_col(spk, n)});
  return tanh_v(out_proj_.forward(combined));
}

ProsodyPredictor::ProsodyPredictor(nn::ParamStore& ps, const PredictorConfig& cfg)
    : cfg_(cfg) {
  encoder_ = ContextEncoder(ps, "ctx", cfg);
  z_stack_ = FlowStack(ps, "flow_z", cfg.z_dim, cfg.n_flow_steps, cfg.cond_dim,
                       cfg.coupling_hidden);
  zd_stack_ = FlowStack(ps, "flow_zd", cfg.zd_dim, cfg.n_flow_steps,
                        cfg.cond_dim, cfg.coupling_hidden);
}

Var ProsodyPredictor::word_conditions(const ContextWindow& window,
                                      const Vec& speaker) const {
  return encoder_.forward(window.tokens, speaker);
}

Var ProsodyPredictor::nll_per_word(const ContextWindow& window,
                                   const Vec& speaker, const Mat& z,
                                   const Mat& zd) const {
  const int n_words = static_cast<int>(window.tokens.size());
  if (z.cols() != n_words || zd.cols() != n_words)
    throw ValidationError("nll_per_word: latent width != window word count");
  Var cond = word_conditions(window, speaker);
  FlowForward fz = z_stack_.forward(constant(z), cond);
  FlowForward fzd = zd_stack_.forward(constant(zd), cond);
  Var quad = scale(add(sum_all(cmul(fz.output, fz.output)),
                       sum_all(cmul(fzd.output, fzd.output))),
                   0.5);
  const double log_z_const =
      0.5 * (cfg_.z_dim + cfg_.zd_dim) * n_words * kLog2Pi;
  Var nll = add_scalar(sub(quad, add(fz.log_det, fzd.log_det)), log_z_const);
  Var per_word = scale(nll, 1.0 / n_words);
  if (!std::isfinite(per_word->val(0, 0)))
    throw TrainingError("flow NLL is not finite");
  return per_word;
}

ProsodyPredictor::Sampled ProsodyPredictor::sample_full_window(
    const ContextWindow& window, const Vec& speaker, double tau,
    Rng& rng) const {
  if (tau < 0) throw ValidationError("sample: tau must be >= 0");
  const int n_words = static_cast<int>(window.tokens.size());
  const Mat cond = word_conditions(window, speaker)->val;
  const Mat eps_z = rng.normal_mat(cfg_.z_dim, n_words, 1.0) * tau;
  const Mat eps_zd = rng.normal_mat(cfg_.zd_dim, n_words, 1.0) * tau;
  Sampled s;
  s.z = z_stack_.inverse_plain(eps_z, cond);
  s.zd = zd_stack_.inverse_plain(eps_zd, cond);
  return s;
}

ProsodyPredictor::Sampled ProsodyPredictor::sample(const ContextWindow& window,
                                                   const Vec& speaker,
                                                   double tau, Rng& rng) const {
  Sampled full = sample_full_window(window, speaker, tau, rng);
  const int span = window.target_end - window.target_begin;
  Sampled s;
  s.z = full.z.middleCols(window.target_begin, span);
  s.zd = full.zd.middleCols(window.target_begin, span);
  return s;
}

const LatentCache::Record& LatentCache::at(const std::string& utterance_id) const {
  for (const auto& r : records)
    if (r.utterance_id == utterance_id) return r;
  throw ValidationError("latent cache has no record for '" + utterance_id + "'");
}

bool LatentCache::has(const std::string& utterance_id) const {
  for (const auto& r : records)
    if (r.utterance_id == utterance_id) return true;
  return false;
}

void LatentCache::save(const std::string& path) const {
  Container c;
  c.kind = "latent-cache";
  c.version = kCheckpointVersion;
  json meta;
  meta["count"] = records.size();
  json ids = json::array(), speakers = json::array();
  for (const auto& r : records) {
    ids.push_back(r.utterance_id);
    speakers.push_back(r.speaker_id);
  }
  meta["ids"] = ids;
  meta["speakers"] = speakers;
  c.meta_json = meta.dump();
  for (const auto& r : records) {
    c.add("z/" + r.utterance_id, r.z_mean);
    c.add("zd/" + r.utterance_id, r.zd_mean);
  }
  write_container(path, c);
}

LatentCache LatentCache::load(const std::string& path) {
  Container c = read_container(path, "latent-cache", kCheckpointVersion);
  const json meta = json::parse(c.meta_json);
  LatentCache cache;
  for (std::size_t i = 0; i < meta["ids"].size(); ++i) {
    Record r;
    r.utterance_id = meta["ids"][i].get<std::string>();
    r.speaker_id = meta["speakers"][i].get<std::string>();
    const Mat* z = c.find("z/" + r.utterance_id);
    const Mat* zd = c.find("zd/" + r.utterance_id);
    if (!z || !zd)
      throw ValidationError("latent cache missing tensors for '" +
                            r.utterance_id + "'");
    r.z_mean = *z;
    r.zd_mean = *zd;
    cache.records.push_back(std::move(r));
  }
  return cache;
}

}  // namespace prosoflow
