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

#include "prosoflow/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include <json.hpp>

#include "prosoflow/audio.hpp"
#include "prosoflow/checkpoint.hpp"

namespace prosoflow {

namespace fs = std::filesystem;
using nlohmann::json;

ExperimentLog::ExperimentLog(const std::string& path, bool truncate)
    : path_(path) {
  fs::create_directories(fs::path(path).parent_path());
  if (truncate) std::ofstream(path_, std::ios::trunc).flush();
}

void ExperimentLog::append(long long step, const std::string& payload_json,
                           std::uint64_t rng_digest) {
  if (step <= last_step_)
    throw ValidationError("experiment log: step must increase monotonically");
  last_step_ = step;
  std::ofstream out(path_, std::ios::app);
  if (!out) throw IoError("cannot append to log: " + path_);
  json j = json::parse(payload_json);
  j["step"] = step;
  j["rng"] = to_hex(rng_digest);
  out << j.dump() << '\n';
}

void run_prepare_data(const std::string& out_dir, int n_speakers,
                      int utterances_per_speaker, std::uint64_t seed) {
  SyntheticCorpusSpec spec;
  spec.n_speakers = n_speakers;
  spec.utterances_per_speaker = utterances_per_speaker;
  generate_synthetic_corpus(spec, seed, out_dir);
}

Corpus load_corpus(const RunConfig& cfg, const std::string& data_dir) {
  return load_manifest(data_dir + "/manifest.jsonl", cfg.mel());
}

namespace {

std::vector<std::string> corpus_speakers(const Corpus& corpus) {
  std::set<std::string> set;
  for (const auto& u : corpus.utterances) set.insert(u.speaker_id);
  return {set.begin(), set.end()};
}

std::vector<int> train_indices(const Corpus& corpus) {
  std::vector<int> idx = corpus.indices_of_split("train");
  if (idx.empty()) {
    idx.resize(corpus.utterances.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
  }
  return idx;
}

void require_file(const std::string& path) {
  if (!fs::exists(path))
    throw ValidationError("missing checkpoint: " + path);
}

std::string stage1_meta(const Corpus& corpus) {
  json meta;
  meta["speakers"] = corpus_speakers(corpus);
  return meta.dump();
}

std::vector<std::string> speakers_from_stage1(const std::string& ckpt_path) {
  Container c = read_container(ckpt_path, "stage1", kCheckpointVersion);
  const json meta = json::parse(c.meta_json);
  std::vector<std::string> speakers;
  for (const auto& s : meta["speakers"]) speakers.push_back(s.get<std::string>());
  return speakers;
}

}  // namespace

void run_train_stage1(const RunConfig& cfg, const std::string& data_dir,
                      const std::string& run_dir, long long steps, bool resume,
                      const ProgressFn& progress) {
  cfg.validate();
  const RunPaths paths(run_dir);
  fs::create_directories(paths.checkpoints_dir());
  fs::create_directories(paths.logs_dir());
  save_config(cfg, paths.config_copy());

  Corpus corpus = load_corpus(cfg, data_dir);
  const auto speakers = corpus_speakers(corpus);
  const AcousticConfig acfg = cfg.acoustic();

  nn::ParamStore gen_ps(cfg.seed ^ fnv1a64("stage1"));
  nn::ParamStore disc_ps(cfg.seed ^ fnv1a64("stage1-disc"));
  AcousticModel model(gen_ps, acfg, speakers);
  DiscriminatorSet disc(disc_ps, cfg.discriminators());
  Stage1Trainer trainer(&model, &gen_ps, &disc, &disc_ps, cfg.weights(),
                        cfg.chunk_samples, cfg.lr_g, cfg.lr_d);
  trainer.set_kl_warmup(cfg.kl_warmup_steps);
  trainer.rng().reseed(cfg.seed ^ fnv1a64("stage1-trainer"));

  long long start = 0;
  if (resume && fs::exists(paths.stage1_ckpt())) {
    auto loaded = load_checkpoint(
        paths.stage1_ckpt(), "stage1",
        TrainState{&gen_ps, &trainer.opt_g(), &trainer.rng(), 0});
    load_checkpoint(paths.stage1_ckpt() + ".disc", "stage1-disc",
                    TrainState{&disc_ps, &trainer.opt_d(), nullptr, 0});
    start = loaded.step;
    trainer.set_step_count(start);
  }

  const auto idx = train_indices(corpus);
  std::vector<TrainItem> items;
  items.reserve(idx.size());
  for (const int i : idx)
    items.push_back(prepare_train_item(corpus.utterances[i], model.speakers(),
                                       acfg, cfg.chunk_samples));

  ExperimentLog log(paths.logs_dir() + "/stage1.jsonl", start == 0);
  auto save_all = [&](const std::string& suffix) {
    save_checkpoint(paths.stage1_ckpt() + suffix, "stage1",
                    TrainState{&gen_ps, &trainer.opt_g(), &trainer.rng(),
                               trainer.step_count()},
                    stage1_meta(corpus));
    save_checkpoint(paths.stage1_ckpt() + suffix + ".disc", "stage1-disc",
                    TrainState{&disc_ps, &trainer.opt_d(), nullptr,
                               trainer.step_count()},
                    "{}");
  };

  for (long long s = start; s < steps; ++s) {
    std::vector<const TrainItem*> batch;
    for (int b = 0; b < cfg.batch_size; ++b)
      batch.push_back(&items[trainer.rng().uniform_int(items.size())]);
    Stage1LossBreakdown bd;
    try {
      bd = trainer.step(batch);
    } catch (const TrainingError&) {
      save_all(".diverged");
      throw;
    }
    if ((s + 1) % 10 == 0 || s + 1 == steps) {
      json j;
      j["adv_g"] = bd.adv_g;
      j["adv_d"] = bd.adv_d;
      j["feat"] = bd.feat;
      j["mel"] = bd.mel;
      j["kl"] = bd.kl;
      j["total_g"] = bd.total_g;
      log.append(s + 1, j.dump(), trainer.rng().state_digest());
    }
    if (progress) progress({s + 1, bd.total_g});
    if (cfg.checkpoint_every > 0 && (s + 1) % cfg.checkpoint_every == 0)
      save_all("");
  }
  save_all("");
}

void run_train_duration(const RunConfig& cfg, const std::string& data_dir,
                        const std::string& run_dir, long long steps, bool resume,
                        const ProgressFn& progress) {
  cfg.validate();
  const RunPaths paths(run_dir);
  fs::create_directories(paths.checkpoints_dir());
  fs::create_directories(paths.logs_dir());

  Corpus corpus = load_corpus(cfg, data_dir);
  const auto speakers = corpus_speakers(corpus);

  // Speaker embeddings are shared with the acoustic model when its
  // checkpoint exists; otherwise a local table is trained alongside.
  nn::ParamStore dur_ps(cfg.seed ^ fnv1a64("duration"));
  DurationModel model(dur_ps, cfg.duration());
  SpeakerTable spk_table(dur_ps, speakers, cfg.speaker_dim);

  nn::Adam opt;
  opt.lr = cfg.lr_duration;
  opt.init(dur_ps);
  Rng rng(cfg.seed ^ fnv1a64("duration-trainer"));
  long long start = 0;
  if (resume && fs::exists(paths.duration_ckpt())) {
    auto loaded = load_checkpoint(paths.duration_ckpt(), "duration",
                                  TrainState{&dur_ps, &opt, &rng, 0});
    start = loaded.step;
  }

  const auto idx = train_indices(corpus);
  ExperimentLog log(paths.logs_dir() + "/duration.jsonl", start == 0);
  for (long long s = start; s < steps; ++s) {
    std::vector<const Utterance*> batch;
    for (int b = 0; b < cfg.duration_batch; ++b)
      batch.push_back(&corpus.utterances[idx[rng.uniform_int(idx.size())]]);
    ad::Var total;
    double nll_sum = 0, kl_sum = 0;
    for (const auto* u : batch) {
      ad::Var spk = spk_table.lookup(spk_table.index_of(u->speaker_id));
      PosteriorVars post =
          model.reference_encode(u->phoneme_durations, u->phoneme_to_word, spk);
      const Mat eps = rng.normal_mat(cfg.zd_dim, u->n_words());
      ad::Var zd = nn::reparam_sample(post.mu, post.log_sigma, eps);
      ad::Var pred =
          model.predict_log_durations(u->phonemes, spk, zd, u->phoneme_to_word);
      auto losses = duration_losses(pred, u->phoneme_durations, post, cfg.alpha_d);
      nll_sum += losses.nll;
      kl_sum += losses.kl;
      total = total ? ad::add(total, losses.total_var) : losses.total_var;
    }
    total = ad::scale(total, 1.0 / batch.size());
    const double loss = total->val(0, 0);
    if (!std::isfinite(loss)) {
      save_checkpoint(paths.duration_ckpt() + ".diverged", "duration",
                      TrainState{&dur_ps, &opt, &rng, s}, "{}");
      throw TrainingError("duration training diverged at step " + std::to_string(s));
    }
    ad::backward(total);
    opt.step(dur_ps);
    if ((s + 1) % 25 == 0 || s + 1 == steps) {
      json j;
      j["total"] = loss;
      j["nll"] = nll_sum / batch.size();
      j["kl"] = kl_sum / batch.size();
      log.append(s + 1, j.dump(), rng.state_digest());
    }
    if (progress) progress({s + 1, loss});
  }
  save_checkpoint(paths.duration_ckpt(), "duration",
                  TrainState{&dur_ps, &opt, &rng, steps}, stage1_meta(corpus));
}

std::unique_ptr<ModelBundle> load_bundle(const RunConfig& cfg,
                                         const std::string& data_dir,
                                         const std::string& run_dir,
                                         bool require_predictor) {
  (void)data_dir;
  const RunPaths paths(run_dir);
  require_file(paths.stage1_ckpt());
  require_file(paths.duration_ckpt());
  if (require_predictor) require_file(paths.stage2_ckpt());

  const auto speakers = speakers_from_stage1(paths.stage1_ckpt());
  auto bundle = std::make_unique<ModelBundle>(cfg.acoustic(), cfg.duration(),
                                              cfg.predictor(), speakers,
                                              cfg.seed, true);
  load_checkpoint(paths.stage1_ckpt(), "stage1",
                  TrainState{&bundle->acoustic_params, nullptr, nullptr, 0});
  load_checkpoint(paths.duration_ckpt(), "duration",
                  TrainState{&bundle->duration_params, nullptr, nullptr, 0});
  if (fs::exists(paths.stage2_ckpt())) {
    load_checkpoint(paths.stage2_ckpt(), "stage2",
                    TrainState{&bundle->predictor_params, nullptr, nullptr, 0});
  } else {
    bundle->has_predictor = false;
  }
  return bundle;
}

void run_export_latents(const RunConfig& cfg, const std::string& data_dir,
                        const std::string& run_dir) {
  cfg.validate();
  const RunPaths paths(run_dir);
  require_file(paths.stage1_ckpt());
  require_file(paths.duration_ckpt());
  fs::create_directories(paths.latents_dir());

  Corpus corpus = load_corpus(cfg, data_dir);
  auto bundle = load_bundle(cfg, data_dir, run_dir, /*require_predictor=*/false);

  LatentCache cache;
  for (const auto& u : corpus.utterances) {
    const int spk_idx = bundle->acoustic.speakers().index_of(u.speaker_id);
    ad::Var spk = bundle->acoustic.speakers().lookup(spk_idx);
    const Mat mel = extract_mel(u.waveform, cfg.mel()).frames;
    const auto alignment = utterance_alignment(u, cfg.mel());
    PosteriorVars ac_post =
        bundle->acoustic.reference_encode(mel, alignment.word_spans, spk);
    ad::Var dspk = bundle->duration_speakers.lookup(
        bundle->duration_speakers.index_of(u.speaker_id));
    PosteriorVars dur_post = bundle->duration.reference_encode(
        u.phoneme_durations, u.phoneme_to_word, dspk);
    cache.records.push_back(
        {u.id, u.speaker_id, ac_post.mu->val, dur_post.mu->val});
  }
  cache.save(paths.latent_cache());
}

namespace {

struct WindowExample {
  ContextWindow window;
  Mat z, zd;
  Vec speaker_vec;
};

std::vector<WindowExample> build_window_examples(const Corpus& corpus,
                                                 const LatentCache& cache,
                                                 const SpeakerTable& speakers,
                                                 const RunConfig& cfg,
                                                 const std::string& split) {
  std::vector<WindowExample> out;
  for (const auto& [doc, utts] : corpus.documents()) {
    std::vector<int> kept;
    for (const int ui : utts)
      if (split.empty() || corpus.utterances[ui].split == split) kept.push_back(ui);
    if (kept.empty()) continue;
    for (auto& window : build_context_windows(corpus, kept, cfg.window_min_words,
                                              cfg.window_max_words)) {
      WindowExample ex;
      int total_words = 0;
      for (const int ui : window.sentence_utterances)
        total_words += corpus.utterances[ui].n_words();
      ex.z.resize(cfg.z_dim, total_words);
      ex.zd.resize(cfg.zd_dim, total_words);
      int at = 0;
      bool ok = true;
      for (const int ui : window.sentence_utterances) {
        const auto& u = corpus.utterances[ui];
        if (!cache.has(u.id)) {
          ok = false;
          break;
        }
        const auto& rec = cache.at(u.id);
        ex.z.middleCols(at, u.n_words()) = rec.z_mean;
        ex.zd.middleCols(at, u.n_words()) = rec.zd_mean;
        at += u.n_words();
      }
      if (!ok) continue;
      ex.speaker_vec = speakers.embedding_value(speakers.index_of(window.speaker_id));
      ex.window = std::move(window);
      out.push_back(std::move(ex));
    }
  }
  return out;
}

}  // namespace

void run_train_stage2(const RunConfig& cfg, const std::string& data_dir,
                      const std::string& run_dir, long long steps, bool resume,
                      const ProgressFn& progress) {
  cfg.validate();
  const RunPaths paths(run_dir);
  require_file(paths.stage1_ckpt());
  require_file(paths.duration_ckpt());
  if (!fs::exists(paths.latent_cache()))
    throw ValidationError("missing latent cache: " + paths.latent_cache() +
                          " (run export-latents first)");
  fs::create_directories(paths.checkpoints_dir());
  fs::create_directories(paths.logs_dir());

  Corpus corpus = load_corpus(cfg, data_dir);
  auto bundle = load_bundle(cfg, data_dir, run_dir, /*require_predictor=*/false);
  LatentCache cache = LatentCache::load(paths.latent_cache());

  auto examples = build_window_examples(corpus, cache,
                                        bundle->acoustic.speakers(), cfg, "train");
  if (examples.empty())
    throw ValidationError("stage2: no training windows (check splits and cache)");

  nn::Adam opt;
  opt.lr = cfg.lr_flow;
  opt.init(bundle->predictor_params);
  Rng rng(cfg.seed ^ fnv1a64("stage2-trainer"));
  long long start = 0;
  if (resume && fs::exists(paths.stage2_ckpt())) {
    auto loaded =
        load_checkpoint(paths.stage2_ckpt(), "stage2",
                        TrainState{&bundle->predictor_params, &opt, &rng, 0});
    start = loaded.step;
  }

  ExperimentLog log(paths.logs_dir() + "/stage2.jsonl", start == 0);
  for (long long s = start; s < steps; ++s) {
    ad::Var total;
    for (int b = 0; b < cfg.flow_batch; ++b) {
      const auto& ex = examples[rng.uniform_int(examples.size())];
      ad::Var nll = bundle->predictor.nll_per_word(ex.window, ex.speaker_vec,
                                                   ex.z, ex.zd);
      total = total ? ad::add(total, nll) : nll;
    }
    total = ad::scale(total, 1.0 / cfg.flow_batch);
    const double loss = total->val(0, 0);
    if (!std::isfinite(loss)) {
      save_checkpoint(paths.stage2_ckpt() + ".diverged", "stage2",
                      TrainState{&bundle->predictor_params, &opt, &rng, s}, "{}");
      throw TrainingError("stage2 training diverged at step " + std::to_string(s));
    }
    ad::backward(total);
    opt.step(bundle->predictor_params);
    if ((s + 1) % 25 == 0 || s + 1 == steps) {
      json j;
      j["nll_per_word"] = loss;
      log.append(s + 1, j.dump(), rng.state_digest());
    }
    if (progress) progress({s + 1, loss});
  }
  save_checkpoint(paths.stage2_ckpt(), "stage2",
                  TrainState{&bundle->predictor_params, &opt, &rng, steps}, "{}");
}

FptGateMetrics evaluate_fpt_gates(ModelBundle& bundle, const Corpus& corpus,
                                  const std::vector<WordProsodyTruth>& truth,
                                  const std::string& run_dir, int max_pairs,
                                  std::uint64_t seed) {
  const MelConfig mel = bundle.acoustic_cfg.mel;
  const auto& speakers = bundle.acoustic.speakers().ids();

  // Per-speaker base F0 recovered from the generation ground truth.
  std::map<std::string, std::string> utt_speaker;
  for (const auto& u : corpus.utterances) utt_speaker[u.id] = u.speaker_id;
  std::map<std::string, std::pair<double, int>> base_acc;
  std::map<std::string, std::map<int, double>> truth_offsets;  // utt -> word -> st
  for (const auto& t : truth) {
    const auto it = utt_speaker.find(t.utterance_id);
    if (it == utt_speaker.end()) continue;
    auto& [sum, n] = base_acc[it->second];
    sum += t.f0_hz / std::pow(2.0, t.pitch_offset_semitones / 12.0);
    ++n;
    truth_offsets[t.utterance_id][t.word] = t.pitch_offset_semitones;
  }
  std::map<std::string, double> base_f0;
  for (const auto& [spk, acc] : base_acc) base_f0[spk] = acc.first / acc.second;

  std::vector<int> test_idx = corpus.indices_of_split("test");
  if (test_idx.empty())
    for (std::size_t i = 0; i < corpus.utterances.size(); ++i)
      test_idx.push_back(static_cast<int>(i));

  Rng rng(seed, "fpt-eval");
  FptGateMetrics metrics;
  std::vector<double> dur_src, dur_out, off_src, off_out;
  std::vector<std::vector<double>> fpt_waves;
  std::vector<int> fpt_labels;
  double recon_sum = 0;
  int recon_n = 0;

  fs::create_directories(run_dir + "/audio");
  const int n_pairs = std::min<int>(max_pairs, static_cast<int>(test_idx.size()));
  for (int p = 0; p < n_pairs; ++p) {
    const Utterance& src = corpus.utterances[test_idx[p % test_idx.size()]];
    std::string target = src.speaker_id;
    while (target == src.speaker_id)
      target = speakers[rng.uniform_int(speakers.size())];

    SynthesisResult out = infer_fpt(bundle, src, target, FptOptions{});
    ++metrics.n_pairs;
    fpt_waves.push_back(out.waveform);
    fpt_labels.push_back(bundle.acoustic.speakers().index_of(target));
    if (p < 8)
      write_wav(run_dir + "/audio/fpt_" + src.id + "_to_" + target + ".wav",
                out.waveform, mel.sample_rate);

    // Per-word spans of the output follow the predicted durations.
    const auto out_alignment =
        frame_alignment(out.diagnostics.durations, src.phoneme_to_word);
    const auto out_feats =
        extract_prosody_features(out.waveform, out_alignment, mel);
    const auto src_alignment = utterance_alignment(src, mel);

    const auto off_it = truth_offsets.find(src.id);
    for (int w = 0; w < src.n_words(); ++w) {
      dur_src.push_back(static_cast<double>(src_alignment.word_spans[w].second -
                                            src_alignment.word_spans[w].first));
      dur_out.push_back(out_feats.duration_frames[w]);
      if (off_it != truth_offsets.end() && out_feats.f0_hz[w] &&
          base_f0.count(target)) {
        const double measured =
            12.0 * std::log2(*out_feats.f0_hz[w] / base_f0.at(target));
        off_src.push_back(off_it->second.at(w));
        off_out.push_back(measured);
      }
    }

    // Self-transfer reconstruction with source durations for the first few.
    if (recon_n < 6) {
      FptOptions self_opts;
      self_opts.copy_source_durations = true;
      SynthesisResult self = infer_fpt(bundle, src, src.speaker_id, self_opts);
      const Mat ref_mel = extract_mel(src.waveform, mel).frames;
      const Mat out_mel = extract_mel(self.waveform, mel).frames;
      recon_sum += mel_l1(ref_mel, out_mel);
      ++recon_n;
    }
  }
  metrics.duration_r = pearson(dur_src, dur_out);
  metrics.f0_offset_r = pearson(off_src, off_out);
  metrics.n_f0_words = static_cast<int>(off_src.size());
  metrics.self_reconstruction_mel_l1 = recon_n ? recon_sum / recon_n : 0.0;

  // Speaker probe: trained on real train-split audio, applied to outputs
  // labeled by the intended target speaker.
  {
    std::vector<LabeledWave> train_set, eval_set;
    for (const int i : train_indices(corpus)) {
      const auto& u = corpus.utterances[i];
      train_set.push_back(
          {&u.waveform, bundle.acoustic.speakers().index_of(u.speaker_id)});
    }
    for (std::size_t i = 0; i < fpt_waves.size(); ++i)
      eval_set.push_back({&fpt_waves[i], fpt_labels[i]});
    const auto probe = speaker_probe(train_set, eval_set,
                                     static_cast<int>(speakers.size()), mel);
    metrics.speaker_probe_accuracy = probe.accuracy;
  }

  // Leakage probe over exported (or freshly computed) acoustic latent means.
  {
    std::vector<std::pair<Vec, int>> examples;
    for (const auto& u : corpus.utterances) {
      const int spk_idx = bundle.acoustic.speakers().index_of(u.speaker_id);
      ad::Var spk = bundle.acoustic.speakers().lookup(spk_idx);
      const Mat m = extract_mel(u.waveform, mel).frames;
      const auto alignment = utterance_alignment(u, mel);
      PosteriorVars post =
          bundle.acoustic.reference_encode(m, alignment.word_spans, spk);
      for (int w = 0; w < post.mu->val.cols(); ++w)
        examples.emplace_back(post.mu->val.col(w), spk_idx);
      if (examples.size() >= 3000) break;
    }
    const auto probe = latent_leakage_probe(
        examples, static_cast<int>(speakers.size()), seed);
    metrics.leakage_accuracy = probe.accuracy;
    metrics.leakage_chance = probe.chance();
  }
  return metrics;
}

void run_evaluate(const RunConfig& cfg, const std::string& data_dir,
                  const std::string& run_dir, const std::string& out_path,
                  int max_pairs) {
  cfg.validate();
  Corpus corpus = load_corpus(cfg, data_dir);
  auto bundle = load_bundle(cfg, data_dir, run_dir, /*require_predictor=*/false);

  std::vector<WordProsodyTruth> truth;
  const std::string truth_path = data_dir + "/prosody_truth.jsonl";
  if (fs::exists(truth_path)) truth = load_prosody_truth(truth_path);

  const auto metrics =
      evaluate_fpt_gates(*bundle, corpus, truth, run_dir, max_pairs, cfg.seed);

  std::ofstream out(out_path);
  if (!out) throw IoError("cannot write metrics: " + out_path);
  auto emit = [&](const std::string& name, double value) {
    json j;
    j["metric"] = name;
    j["value"] = value;
    j["split"] = "test";
    j["seed"] = cfg.seed;
    j["model_version"] = kCheckpointVersion;
    out << j.dump() << '\n';
  };
  emit("fpt_duration_pearson_r", metrics.duration_r);
  emit("fpt_f0_offset_pearson_r", metrics.f0_offset_r);
  emit("fpt_speaker_probe_accuracy", metrics.speaker_probe_accuracy);
  emit("latent_leakage_accuracy", metrics.leakage_accuracy);
  emit("latent_leakage_chance", metrics.leakage_chance);
  emit("self_reconstruction_mel_l1", metrics.self_reconstruction_mel_l1);
  emit("fpt_pairs", metrics.n_pairs);
  emit("fpt_f0_words", metrics.n_f0_words);
}

}  // namespace prosoflow
