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

#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "prosoflow/audio.hpp"
#include "prosoflow/pipeline.hpp"

using namespace prosoflow;

namespace {

RunConfig load_cfg(const std::string& config_path, std::uint64_t seed_override,
                   bool has_seed) {
  RunConfig cfg = config_path.empty() ? RunConfig{} : load_config(config_path);
  if (has_seed) cfg.seed = seed_override;
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"prosoflow: two-stage multispeaker speech synthesis with "
               "word-level prosody latents and flow-based prosody prediction"};
  app.require_subcommand(1);

  std::string config_path, data_dir, run_dir, out_path;
  std::uint64_t seed = 0;
  bool has_seed = false;
  long long steps = -1;
  bool resume = false;

  auto add_common = [&](CLI::App* cmd, bool needs_run) {
    cmd->add_option("--config", config_path, "run configuration file");
    cmd->add_option("--data", data_dir, "corpus directory (manifest.jsonl)")
        ->required();
    if (needs_run)
      cmd->add_option("--run", run_dir, "run directory")->required();
    cmd->add_option_function<std::uint64_t>(
        "--seed", [&](const std::uint64_t& v) {
          seed = v;
          has_seed = true;
        },
        "override the config seed");
  };

  // prepare-data
  auto* prep = app.add_subcommand("prepare-data",
                                  "generate the synthetic corpus with ground truth");
  std::string prep_out;
  int prep_speakers = 4, prep_utterances = 40;
  std::uint64_t prep_seed = 1;
  prep->add_option("--out", prep_out, "output corpus directory")->required();
  prep->add_option("--speakers", prep_speakers, "number of speakers");
  prep->add_option("--utterances", prep_utterances, "utterances per speaker");
  prep->add_option("--seed", prep_seed, "generation seed");

  auto* ts1 = app.add_subcommand("train-stage1", "train the end-to-end acoustic model");
  add_common(ts1, true);
  ts1->add_option("--steps", steps, "training steps");
  ts1->add_flag("--resume", resume, "resume from the last checkpoint");

  auto* tdur = app.add_subcommand("train-duration", "train the duration model");
  add_common(tdur, true);
  tdur->add_option("--steps", steps, "training steps");
  tdur->add_flag("--resume", resume, "resume from the last checkpoint");

  auto* texp = app.add_subcommand("export-latents",
                                  "export per-utterance posterior means");
  add_common(texp, true);

  auto* ts2 = app.add_subcommand("train-stage2", "train the prosody predictor flows");
  add_common(ts2, true);
  ts2->add_option("--steps", steps, "training steps");
  ts2->add_flag("--resume", resume, "resume from the last checkpoint");

  auto* fpt = app.add_subcommand("infer-fpt", "fine-grained prosody transfer");
  add_common(fpt, true);
  std::string fpt_source, fpt_speaker, requests_path, report_path;
  bool copy_durations = false;
  fpt->add_option("--source", fpt_source, "source utterance id");
  fpt->add_option("--speaker", fpt_speaker, "target speaker id");
  fpt->add_option("--out", out_path, "output wav path");
  fpt->add_flag("--copy-durations", copy_durations,
                "copy source durations instead of predicting them");
  fpt->add_option("--requests", requests_path, "batch request manifest (jsonl)");
  fpt->add_option("--report", report_path, "batch report output (jsonl)");

  auto* tts = app.add_subcommand("infer-tts", "long-context text-to-speech");
  add_common(tts, true);
  std::string tts_doc, tts_speaker;
  int tts_sentence = 0;
  double tau = -1.0;
  tts->add_option("--doc", tts_doc, "document id");
  tts->add_option("--sentence", tts_sentence, "target sentence index");
  tts->add_option("--speaker", tts_speaker, "speaker id");
  tts->add_option("--tau", tau, "sampling temperature");
  tts->add_option("--out", out_path, "output wav path");
  tts->add_option("--requests", requests_path, "batch request manifest (jsonl)");
  tts->add_option("--report", report_path, "batch report output (jsonl)");

  auto* ev = app.add_subcommand("evaluate", "objective transfer and leakage metrics");
  add_common(ev, true);
  int max_pairs = 24;
  ev->add_option("--out", out_path, "metrics output (jsonl)");
  ev->add_option("--pairs", max_pairs, "number of transfer pairs to evaluate");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return 2;
  }

  try {
    if (*prep) {
      run_prepare_data(prep_out, prep_speakers, prep_utterances, prep_seed);
      std::cout << "corpus written to " << prep_out << "\n";
      return 0;
    }
    RunConfig cfg = load_cfg(config_path, seed, has_seed);
    if (*ts1) {
      run_train_stage1(cfg, data_dir, run_dir,
                       steps >= 0 ? steps : cfg.steps_stage1, resume);
    } else if (*tdur) {
      run_train_duration(cfg, data_dir, run_dir,
                         steps >= 0 ? steps : cfg.steps_duration, resume);
    } else if (*texp) {
      run_export_latents(cfg, data_dir, run_dir);
    } else if (*ts2) {
      run_train_stage2(cfg, data_dir, run_dir,
                       steps >= 0 ? steps : cfg.steps_stage2, resume);
    } else if (*fpt || *tts) {
      Corpus corpus = load_corpus(cfg, data_dir);
      const bool is_tts = tts->parsed();
      auto bundle = load_bundle(cfg, data_dir, run_dir, /*require_predictor=*/is_tts);
      if (!requests_path.empty()) {
        auto requests = load_request_manifest(requests_path);
        std::vector<RequestReport> reports;
        const bool ok = batch_synthesize(*bundle, corpus, requests, &reports);
        write_request_reports(reports, report_path.empty()
                                           ? run_dir + "/report.jsonl"
                                           : report_path);
        if (!ok) {
          std::cerr << "some requests failed; see the report\n";
          return 1;
        }
        return 0;
      }
      if (out_path.empty()) throw ValidationError("--out is required");
      SynthesisResult result;
      if (*fpt) {
        if (fpt_source.empty() || fpt_speaker.empty())
          throw ValidationError("--source and --speaker are required");
        const Utterance* src = nullptr;
        for (const auto& u : corpus.utterances)
          if (u.id == fpt_source) src = &u;
        if (!src)
          throw ValidationError("unknown source utterance '" + fpt_source + "'");
        FptOptions opts;
        opts.copy_source_durations = copy_durations;
        opts.seed = cfg.seed;
        result = infer_fpt(*bundle, *src, fpt_speaker, opts);
      } else {
        if (tts_doc.empty() || tts_speaker.empty())
          throw ValidationError("--doc and --speaker are required");
        TtsOptions opts;
        opts.tau = tau >= 0 ? tau : cfg.tau;
        opts.seed = cfg.seed;
        opts.min_window_words = cfg.window_min_words;
        opts.max_window_words = cfg.window_max_words;
        result = infer_tts(*bundle, corpus, tts_doc, tts_sentence, tts_speaker, opts);
      }
      std::filesystem::create_directories(
          std::filesystem::path(out_path).parent_path().empty()
              ? "."
              : std::filesystem::path(out_path).parent_path().string());
      write_wav(out_path, result.waveform, cfg.mel().sample_rate);
      std::cout << out_path << ": " << result.waveform.size() << " samples\n";
    } else if (*ev) {
      run_evaluate(cfg, data_dir, run_dir,
                   out_path.empty() ? run_dir + "/metrics.jsonl" : out_path,
                   max_pairs);
      std::cout << "metrics written\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
