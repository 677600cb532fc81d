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

#include "prosoflow/inference.hpp"

#include <chrono>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "prosoflow/audio.hpp"

namespace prosoflow {

using nlohmann::json;

ModelBundle::ModelBundle(const AcousticConfig& acfg, const DurationConfig& dcfg,
                         const PredictorConfig& pcfg,
                         std::vector<std::string> speakers,
                         std::uint64_t init_seed, bool with_predictor)
    : acoustic_cfg(acfg),
      duration_cfg(dcfg),
      predictor_cfg(pcfg),
      acoustic_params(init_seed ^ fnv1a64("stage1")),
      duration_params(init_seed ^ fnv1a64("duration")),
      predictor_params(init_seed ^ fnv1a64("stage2")),
      has_predictor(with_predictor) {
  acoustic = AcousticModel(acoustic_params, acfg, speakers);
  duration = DurationModel(duration_params, dcfg);
  duration_speakers = SpeakerTable(duration_params, std::move(speakers),
                                   dcfg.speaker_dim);
  if (with_predictor) predictor = ProsodyPredictor(predictor_params, pcfg);
}

SynthesisResult synthesize_with_latents(ModelBundle& bundle,
                                        const std::vector<int>& phonemes,
                                        const std::vector<int>& phoneme_to_word,
                                        const std::string& target_speaker,
                                        const Mat& z, const Mat& zd,
                                        const std::vector<int>* fixed_durations) {
  SynthesisResult res;
  auto& speakers = bundle.acoustic.speakers();
  const int target_index = speakers.index_of(target_speaker);

  speakers.set_trace(&res.diagnostics.speaker_lookups_below_seam);
  bundle.duration_speakers.set_trace(&res.diagnostics.speaker_lookups_below_seam);

  if (fixed_durations) {
    res.diagnostics.durations = *fixed_durations;
  } else {
    ad::Var target_dur = bundle.duration_speakers.lookup(
        bundle.duration_speakers.index_of(target_speaker));
    ad::Var pred = bundle.duration.predict_log_durations(
        phonemes, target_dur, ad::constant(zd), phoneme_to_word);
    res.diagnostics.durations =
        quantize_durations(DurationModel::to_frames(pred->val));
  }
  res.waveform = synthesize_from_latents(bundle.acoustic, phonemes,
                                         phoneme_to_word, target_index, z,
                                         res.diagnostics.durations);
  speakers.set_trace(nullptr);
  bundle.duration_speakers.set_trace(nullptr);

  res.diagnostics.z = z;
  res.diagnostics.zd = zd;
  return res;
}

SynthesisResult infer_fpt(ModelBundle& bundle, const Utterance& source,
                          const std::string& target_speaker,
                          const FptOptions& opts) {
  auto& speakers = bundle.acoustic.speakers();
  const int source_index = speakers.index_of(source.speaker_id);
  (void)speakers.index_of(target_speaker);  // validate before any work

  // Latent extraction happens above the seam with the source identity.
  ad::Var source_spk = speakers.lookup(source_index);
  ad::Var source_spk_dur = bundle.duration_speakers.lookup(
      bundle.duration_speakers.index_of(source.speaker_id));
  PosteriorVars dur_post = bundle.duration.reference_encode(
      source.phoneme_durations, source.phoneme_to_word, source_spk_dur);
  const Mat mel = extract_mel(source.waveform, bundle.acoustic_cfg.mel).frames;
  const auto alignment = utterance_alignment(source, bundle.acoustic_cfg.mel);
  PosteriorVars ac_post =
      bundle.acoustic.reference_encode(mel, alignment.word_spans, source_spk);

  Mat z = ac_post.mu->val;
  Mat zd = dur_post.mu->val;
  if (opts.sample_latents) {
    Rng rng(opts.seed, "fpt-latents");
    z += ac_post.log_sigma->val.array().exp().matrix().cwiseProduct(
        rng.normal_mat(static_cast<int>(z.rows()), static_cast<int>(z.cols())));
    zd += dur_post.log_sigma->val.array().exp().matrix().cwiseProduct(
        rng.normal_mat(static_cast<int>(zd.rows()), static_cast<int>(zd.cols())));
  }

  const std::vector<int>* fixed =
      opts.copy_source_durations ? &source.phoneme_durations : nullptr;
  return synthesize_with_latents(bundle, source.phonemes, source.phoneme_to_word,
                                 target_speaker, z, zd, fixed);
}

SynthesisResult infer_tts(ModelBundle& bundle, const Corpus& corpus,
                          const std::string& doc_id, int sentence_index,
                          const std::string& speaker, const TtsOptions& opts) {
  if (!bundle.has_predictor)
    throw ValidationError("infer_tts: bundle has no prosody predictor");
  auto docs = corpus.documents();
  const auto it = docs.find(doc_id);
  if (it == docs.end())
    throw ValidationError("infer_tts: unknown document '" + doc_id + "'");
  const auto& utts = it->second;
  if (sentence_index < 0 || sentence_index >= static_cast<int>(utts.size()))
    throw ValidationError("infer_tts: sentence index " +
                          std::to_string(sentence_index) + " out of range (" +
                          std::to_string(utts.size()) + " sentences)");

  auto windows = build_context_windows(corpus, utts, opts.min_window_words,
                                       opts.max_window_words);
  const ContextWindow& window = windows.at(sentence_index);

  auto& speakers = bundle.acoustic.speakers();
  const int speaker_index = speakers.index_of(speaker);
  const Vec spk_vec = speakers.embedding_value(speaker_index);

  Rng rng(opts.seed, "tts-sampling");
  auto sampled = bundle.predictor.sample(window, spk_vec, opts.tau, rng);

  const Utterance& target = corpus.utterances[window.target_utterance];
  return synthesize_with_latents(bundle, target.phonemes, target.phoneme_to_word,
                                 speaker, sampled.z, sampled.zd, nullptr);
}

std::vector<SynthesisRequest> load_request_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open request manifest: " + path);
  std::vector<SynthesisRequest> out;
  std::string line;
  int record = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const std::exception& e) {
      throw ValidationError("request " + std::to_string(record) + ": bad JSON: " +
                            e.what());
    }
    SynthesisRequest r;
    r.mode = j.value("mode", "");
    r.source = j.value("source", "");
    r.doc = j.value("doc", "");
    r.sentence = j.value("sentence", 0);
    r.speaker = j.value("speaker", "");
    r.tau = j.value("tau", 1.0);
    r.seed = j.value("seed", 0ull);
    r.output_path = j.value("out", "");
    if (r.mode != "fpt" && r.mode != "tts")
      throw ValidationError("request " + std::to_string(record) +
                            ": mode must be 'fpt' or 'tts'");
    if (r.output_path.empty())
      throw ValidationError("request " + std::to_string(record) + ": missing 'out'");
    out.push_back(std::move(r));
    ++record;
  }
  return out;
}

bool batch_synthesize(ModelBundle& bundle, const Corpus& corpus,
                      const std::vector<SynthesisRequest>& requests,
                      std::vector<RequestReport>* reports) {
  bool all_ok = true;
  for (const auto& req : requests) {
    RequestReport rep;
    rep.output_path = req.output_path;
    const auto start = std::chrono::steady_clock::now();
    try {
      SynthesisResult result;
      if (req.mode == "fpt") {
        const Utterance* src = nullptr;
        for (const auto& u : corpus.utterances)
          if (u.id == req.source) src = &u;
        if (!src)
          throw ValidationError("unknown source utterance '" + req.source + "'");
        FptOptions opts;
        opts.seed = req.seed;
        result = infer_fpt(bundle, *src, req.speaker, opts);
      } else {
        TtsOptions opts;
        opts.tau = req.tau;
        opts.seed = req.seed;
        result = infer_tts(bundle, corpus, req.doc, req.sentence, req.speaker, opts);
      }
      write_wav(req.output_path, result.waveform,
                bundle.acoustic_cfg.mel.sample_rate);
      rep.ok = true;
      rep.z_norm = result.diagnostics.z.norm();
      rep.zd_norm = result.diagnostics.zd.norm();
      for (const int d : result.diagnostics.durations) rep.total_frames += d;
      rep.n_samples = result.waveform.size();
    } catch (const std::exception& e) {
      rep.ok = false;
      rep.error = e.what();
      all_ok = false;
    }
    rep.wall_ms = std::chrono::duration<double, std::milli>(
                      std::chrono::steady_clock::now() - start)
                      .count();
    if (reports) reports->push_back(std::move(rep));
  }
  return all_ok;
}

void write_request_reports(const std::vector<RequestReport>& reports,
                           const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write report: " + path);
  for (const auto& r : reports) {
    json j;
    j["out"] = r.output_path;
    j["ok"] = r.ok;
    if (!r.ok) j["error"] = r.error;
    j["z_norm"] = r.z_norm;
    j["zd_norm"] = r.zd_norm;
    j["total_frames"] = r.total_frames;
    j["n_samples"] = r.n_samples;
    j["wall_ms"] = r.wall_ms;
    out << j.dump() << '\n';
  }
}

}  // namespace prosoflow
