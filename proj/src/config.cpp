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

#include "prosoflow/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace prosoflow {

void RunConfig::validate() const {
  auto positive = [](double v, const char* field) {
    if (!(v > 0))
      throw ValidationError(std::string("config field '") + field +
                            "' must be positive");
  };
  if (speaker_dim != 192)
    throw ValidationError("config field 'speaker_dim' must be 192");
  positive(z_dim, "z_dim");
  positive(zd_dim, "zd_dim");
  positive(flow_steps, "flow_steps");
  positive(lambda_f, "lambda_f");
  positive(lambda_p, "lambda_p");
  positive(alpha, "alpha");
  positive(chunk_samples, "chunk_samples");
  positive(mel_hop, "mel_hop");
  positive(mel_bands, "mel_bands");
  if (chunk_samples % mel_hop != 0)
    throw ValidationError(
        "config field 'chunk_samples' must be divisible by mel_hop");
  positive(batch_size, "batch_size");
  positive(lr_g, "lr_g");
  positive(lr_d, "lr_d");
  positive(lr_duration, "lr_duration");
  positive(lr_flow, "lr_flow");
  positive(alpha_d, "alpha_d");
  if (tau < 0) throw ValidationError("config field 'tau' must be >= 0");
  if (window_min_words < 1 || window_max_words < window_min_words)
    throw ValidationError("config field 'window_min_words/window_max_words' invalid");
  mel().validate();
}

MelConfig RunConfig::mel() const {
  MelConfig m;
  m.n_fft = mel_n_fft;
  m.hop = mel_hop;
  m.window = mel_n_fft;
  m.bands = mel_bands;
  m.fmax = mel_fmax;
  return m;
}

AcousticConfig RunConfig::acoustic() const {
  AcousticConfig a;
  a.mel = mel();
  a.phoneme_vocab = phoneme_vocab;
  a.enc_dim = enc_dim;
  a.speaker_dim = speaker_dim;
  a.z_dim = z_dim;
  a.spk_proj_dim = spk_proj_dim;
  a.ref_hidden = ref_hidden;
  a.dec_hidden = dec_hidden;
  a.gen_channels = gen_channels;
  // Upsampling factors for hop 256; smaller hops shrink the factor chain.
  a.upsample_rates.clear();
  int remaining = mel_hop;
  for (const int r : {8, 8, 2, 2}) {
    if (remaining % r == 0 && remaining / r >= 1 && remaining > 1) {
      a.upsample_rates.push_back(r);
      remaining /= r;
    }
  }
  while (remaining > 1) {
    const int r = remaining % 4 == 0 ? 4 : 2;
    a.upsample_rates.push_back(r);
    remaining /= r;
  }
  return a;
}

DiscriminatorConfig RunConfig::discriminators() const {
  DiscriminatorConfig d;
  d.mpd_channels = mpd_channels;
  d.mrd_channels = mrd_channels;
  return d;
}

DurationConfig RunConfig::duration() const {
  DurationConfig d;
  d.phoneme_vocab = phoneme_vocab;
  d.zd_dim = zd_dim;
  d.speaker_dim = speaker_dim;
  d.hidden = dur_hidden;
  d.phoneme_emb_dim = dur_phoneme_emb;
  d.kl_weight = alpha_d;
  return d;
}

PredictorConfig RunConfig::predictor() const {
  PredictorConfig p;
  p.z_dim = z_dim;
  p.zd_dim = zd_dim;
  p.n_flow_steps = flow_steps;
  p.coupling_hidden = coupling_hidden;
  p.vocab_buckets = vocab_buckets;
  p.ctx_dim = ctx_dim;
  p.ctx_heads = ctx_heads;
  p.ctx_layers = ctx_layers;
  p.cond_dim = cond_dim;
  p.speaker_dim = speaker_dim;
  return p;
}

LossWeights RunConfig::weights() const {
  LossWeights w;
  w.lambda_f = lambda_f;
  w.lambda_p = lambda_p;
  w.alpha = alpha;
  return w;
}

namespace {

struct FieldMap {
  std::map<std::string, std::function<void(RunConfig&, const std::string&)>> set;

  template <typename T>
  void add(const std::string& name, T RunConfig::* member) {
    set[name] = [member, name](RunConfig& cfg, const std::string& value) {
      std::istringstream iss(value);
      T parsed{};
      if (!(iss >> parsed))
        throw ValidationError("config field '" + name + "' has bad value '" +
                              value + "'");
      cfg.*member = parsed;
    };
  }
};

const FieldMap& field_map() {
  static const FieldMap m = [] {
    FieldMap f;
    f.add("speaker_dim", &RunConfig::speaker_dim);
    f.add("z_dim", &RunConfig::z_dim);
    f.add("zd_dim", &RunConfig::zd_dim);
    f.add("flow_steps", &RunConfig::flow_steps);
    f.add("lambda_f", &RunConfig::lambda_f);
    f.add("lambda_p", &RunConfig::lambda_p);
    f.add("alpha", &RunConfig::alpha);
    f.add("chunk_samples", &RunConfig::chunk_samples);
    f.add("epochs_stage1", &RunConfig::epochs_stage1);
    f.add("batch_stage1", &RunConfig::batch_stage1);
    f.add("epochs_stage2", &RunConfig::epochs_stage2);
    f.add("batch_stage2", &RunConfig::batch_stage2);
    f.add("mel_n_fft", &RunConfig::mel_n_fft);
    f.add("mel_hop", &RunConfig::mel_hop);
    f.add("mel_bands", &RunConfig::mel_bands);
    f.add("mel_fmax", &RunConfig::mel_fmax);
    f.add("phoneme_vocab", &RunConfig::phoneme_vocab);
    f.add("enc_dim", &RunConfig::enc_dim);
    f.add("spk_proj_dim", &RunConfig::spk_proj_dim);
    f.add("ref_hidden", &RunConfig::ref_hidden);
    f.add("dec_hidden", &RunConfig::dec_hidden);
    f.add("gen_channels", &RunConfig::gen_channels);
    f.add("mpd_channels", &RunConfig::mpd_channels);
    f.add("mrd_channels", &RunConfig::mrd_channels);
    f.add("dur_hidden", &RunConfig::dur_hidden);
    f.add("dur_phoneme_emb", &RunConfig::dur_phoneme_emb);
    f.add("ctx_dim", &RunConfig::ctx_dim);
    f.add("ctx_heads", &RunConfig::ctx_heads);
    f.add("ctx_layers", &RunConfig::ctx_layers);
    f.add("cond_dim", &RunConfig::cond_dim);
    f.add("coupling_hidden", &RunConfig::coupling_hidden);
    f.add("vocab_buckets", &RunConfig::vocab_buckets);
    f.add("lr_g", &RunConfig::lr_g);
    f.add("lr_d", &RunConfig::lr_d);
    f.add("lr_duration", &RunConfig::lr_duration);
    f.add("lr_flow", &RunConfig::lr_flow);
    f.add("batch_size", &RunConfig::batch_size);
    f.add("duration_batch", &RunConfig::duration_batch);
    f.add("flow_batch", &RunConfig::flow_batch);
    f.add("alpha_d", &RunConfig::alpha_d);
    f.add("kl_warmup_steps", &RunConfig::kl_warmup_steps);
    f.add("steps_stage1", &RunConfig::steps_stage1);
    f.add("steps_duration", &RunConfig::steps_duration);
    f.add("steps_stage2", &RunConfig::steps_stage2);
    f.add("checkpoint_every", &RunConfig::checkpoint_every);
    f.add("tau", &RunConfig::tau);
    f.add("window_min_words", &RunConfig::window_min_words);
    f.add("window_max_words", &RunConfig::window_max_words);
    f.add("seed", &RunConfig::seed);
    return f;
  }();
  return m;
}

}  // namespace

RunConfig parse_config_text(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      if (!split_ws(line).empty())
        throw ValidationError("config line " + std::to_string(n) +
                              ": expected key = value");
      continue;
    }
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t\r");
      const auto b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto it = field_map().set.find(key);
    if (it == field_map().set.end())
      throw ValidationError("unknown config field '" + key + "'");
    it->second(cfg, value);
  }
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

void save_config(const RunConfig& cfg, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write config: " + path);
  out << "speaker_dim = " << cfg.speaker_dim << "\n"
      << "z_dim = " << cfg.z_dim << "\n"
      << "zd_dim = " << cfg.zd_dim << "\n"
      << "flow_steps = " << cfg.flow_steps << "\n"
      << "lambda_f = " << cfg.lambda_f << "\n"
      << "lambda_p = " << cfg.lambda_p << "\n"
      << "alpha = " << cfg.alpha << "\n"
      << "chunk_samples = " << cfg.chunk_samples << "\n"
      << "epochs_stage1 = " << cfg.epochs_stage1 << "\n"
      << "batch_stage1 = " << cfg.batch_stage1 << "\n"
      << "epochs_stage2 = " << cfg.epochs_stage2 << "\n"
      << "batch_stage2 = " << cfg.batch_stage2 << "\n"
      << "mel_n_fft = " << cfg.mel_n_fft << "\n"
      << "mel_hop = " << cfg.mel_hop << "\n"
      << "mel_bands = " << cfg.mel_bands << "\n"
      << "mel_fmax = " << cfg.mel_fmax << "\n"
      << "phoneme_vocab = " << cfg.phoneme_vocab << "\n"
      << "enc_dim = " << cfg.enc_dim << "\n"
      << "spk_proj_dim = " << cfg.spk_proj_dim << "\n"
      << "ref_hidden = " << cfg.ref_hidden << "\n"
      << "dec_hidden = " << cfg.dec_hidden << "\n"
      << "gen_channels = " << cfg.gen_channels << "\n"
      << "mpd_channels = " << cfg.mpd_channels << "\n"
      << "mrd_channels = " << cfg.mrd_channels << "\n"
      << "dur_hidden = " << cfg.dur_hidden << "\n"
      << "dur_phoneme_emb = " << cfg.dur_phoneme_emb << "\n"
      << "ctx_dim = " << cfg.ctx_dim << "\n"
      << "ctx_heads = " << cfg.ctx_heads << "\n"
      << "ctx_layers = " << cfg.ctx_layers << "\n"
      << "cond_dim = " << cfg.cond_dim << "\n"
      << "coupling_hidden = " << cfg.coupling_hidden << "\n"
      << "vocab_buckets = " << cfg.vocab_buckets << "\n"
      << "lr_g = " << cfg.lr_g << "\n"
      << "lr_d = " << cfg.lr_d << "\n"
      << "lr_duration = " << cfg.lr_duration << "\n"
      << "lr_flow = " << cfg.lr_flow << "\n"
      << "batch_size = " << cfg.batch_size << "\n"
      << "duration_batch = " << cfg.duration_batch << "\n"
      << "flow_batch = " << cfg.flow_batch << "\n"
      << "alpha_d = " << cfg.alpha_d << "\n"
      << "kl_warmup_steps = " << cfg.kl_warmup_steps << "\n"
      << "steps_stage1 = " << cfg.steps_stage1 << "\n"
      << "steps_duration = " << cfg.steps_duration << "\n"
      << "steps_stage2 = " << cfg.steps_stage2 << "\n"
      << "checkpoint_every = " << cfg.checkpoint_every << "\n"
      << "tau = " << cfg.tau << "\n"
      << "window_min_words = " << cfg.window_min_words << "\n"
      << "window_max_words = " << cfg.window_max_words << "\n"
      << "seed = " << cfg.seed << "\n";
}

}  // namespace prosoflow
