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

#include "prosoflow/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "prosoflow/audio.hpp"

namespace prosoflow {

namespace fs = std::filesystem;
using nlohmann::json;

int Utterance::duration_total() const {
  return std::accumulate(phoneme_durations.begin(), phoneme_durations.end(), 0);
}

int Utterance::effective_frames(const MelConfig& cfg) const {
  return std::min(num_mel_frames(waveform.size(), cfg), duration_total());
}

void Utterance::validate(const MelConfig& cfg) const {
  const std::string where = "utterance '" + id + "': ";
  if (waveform.empty()) throw ValidationError(where + "waveform is empty");
  if (phonemes.empty()) throw ValidationError(where + "phonemes is empty");
  if (phoneme_durations.size() != phonemes.size())
    throw ValidationError(where + "durations length does not match phonemes");
  if (phoneme_to_word.size() != phonemes.size())
    throw ValidationError(where + "word_map length does not match phonemes");
  for (const int d : phoneme_durations)
    if (d < 0) throw ValidationError(where + "durations contains a negative value");
  if (phoneme_to_word.front() != 0)
    throw ValidationError(where + "word_map must start at word 0");
  for (std::size_t i = 1; i < phoneme_to_word.size(); ++i) {
    const int step = phoneme_to_word[i] - phoneme_to_word[i - 1];
    if (step < 0) throw ValidationError(where + "word_map is decreasing");
    if (step > 1) throw ValidationError(where + "word_map skips a word index");
  }
  const int t_mel = num_mel_frames(waveform.size(), cfg);
  if (std::abs(t_mel - duration_total()) > 1)
    throw ValidationError(where + "durations: sum " +
                          std::to_string(duration_total()) +
                          " does not match mel frames " + std::to_string(t_mel) +
                          " within 1");
}

FrameToWordAlignment frame_alignment(const std::vector<int>& phoneme_durations,
                                     const std::vector<int>& phoneme_to_word) {
  if (phoneme_durations.size() != phoneme_to_word.size())
    throw ValidationError("frame_alignment: durations length != word_map length");
  FrameToWordAlignment out;
  if (phoneme_durations.empty()) return out;
  int prev_word = -1;
  int frame = 0;
  for (std::size_t p = 0; p < phoneme_durations.size(); ++p) {
    const int w = phoneme_to_word[p];
    if (w < prev_word) throw ValidationError("frame_alignment: word_map is decreasing");
    if (phoneme_durations[p] < 0)
      throw ValidationError("frame_alignment: durations contains a negative value");
    while (prev_word < w) {
      out.word_spans.emplace_back(frame, frame);
      ++prev_word;
    }
    frame += phoneme_durations[p];
    out.word_spans.back().second = frame;
  }
  return out;
}

FrameToWordAlignment utterance_alignment(const Utterance& utt,
                                         const MelConfig& cfg) {
  FrameToWordAlignment a = frame_alignment(utt.phoneme_durations, utt.phoneme_to_word);
  const int limit = utt.effective_frames(cfg);
  for (auto& [s, e] : a.word_spans) {
    s = std::min(s, limit);
    e = std::min(e, limit);
  }
  return a;
}

std::vector<int> Corpus::indices_of_split(const std::string& split) const {
  std::vector<int> out;
  for (std::size_t i = 0; i < utterances.size(); ++i)
    if (utterances[i].split == split) out.push_back(static_cast<int>(i));
  return out;
}

std::map<std::string, std::vector<int>> Corpus::documents() const {
  std::map<std::string, std::vector<int>> out;
  for (std::size_t i = 0; i < utterances.size(); ++i) {
    const auto& u = utterances[i];
    const std::string key = u.doc.empty() ? u.id : u.doc;
    out[key].push_back(static_cast<int>(i));
  }
  return out;
}

namespace {

std::vector<int> parse_int_list(const std::string& s, const std::string& field,
                                int record) {
  std::vector<int> out;
  for (const auto& tok : split_ws(s)) {
    try {
      out.push_back(std::stoi(tok));
    } catch (const std::exception&) {
      throw ValidationError("manifest record " + std::to_string(record) +
                            ": field '" + field + "' has non-integer token '" +
                            tok + "'");
    }
  }
  return out;
}

std::string join_ints(const std::vector<int>& v) {
  std::ostringstream oss;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) oss << ' ';
    oss << v[i];
  }
  return oss.str();
}

}  // namespace

Corpus load_manifest(const std::string& path, const MelConfig& cfg) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest: " + path);
  const fs::path base = fs::path(path).parent_path();

  Corpus corpus;
  corpus.mel_config = cfg;
  std::string line;
  int record = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const std::exception& e) {
      throw ValidationError("manifest record " + std::to_string(record) +
                            ": bad JSON: " + e.what());
    }
    for (const char* field : {"audio", "text", "speaker", "phonemes",
                              "durations", "word_map"}) {
      if (!j.contains(field))
        throw ValidationError("manifest record " + std::to_string(record) +
                              ": missing field '" + std::string(field) + "'");
    }
    Utterance u;
    u.audio_path = (base / j["audio"].get<std::string>()).string();
    u.id = j.value("id", fs::path(j["audio"].get<std::string>()).stem().string());
    u.text = j["text"].get<std::string>();
    u.speaker_id = j["speaker"].get<std::string>();
    u.phonemes = parse_int_list(j["phonemes"].get<std::string>(), "phonemes", record);
    u.phoneme_durations =
        parse_int_list(j["durations"].get<std::string>(), "durations", record);
    u.phoneme_to_word =
        parse_int_list(j["word_map"].get<std::string>(), "word_map", record);
    u.split = j.value("split", "");
    u.doc = j.value("doc", "");

    try {
      WavData wav = read_wav(u.audio_path);
      if (wav.sample_rate != cfg.sample_rate)
        throw ValidationError("sample rate " + std::to_string(wav.sample_rate) +
                              " != " + std::to_string(cfg.sample_rate));
      u.waveform = std::move(wav.samples);
    } catch (const IoError& e) {
      throw IoError("manifest record " + std::to_string(record) + ": " + e.what());
    }
    try {
      u.validate(cfg);
    } catch (const ValidationError& e) {
      throw ValidationError("manifest record " + std::to_string(record) + ": " +
                            e.what());
    }
    corpus.utterances.push_back(std::move(u));
    ++record;
  }
  return corpus;
}

void save_manifest(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest: " + path);
  const fs::path base = fs::path(path).parent_path();
  for (const auto& u : corpus.utterances) {
    json j;
    j["id"] = u.id;
    j["audio"] = fs::relative(u.audio_path, base).string();
    j["text"] = u.text;
    j["speaker"] = u.speaker_id;
    j["phonemes"] = join_ints(u.phonemes);
    j["durations"] = join_ints(u.phoneme_durations);
    j["word_map"] = join_ints(u.phoneme_to_word);
    if (!u.split.empty()) j["split"] = u.split;
    if (!u.doc.empty()) j["doc"] = u.doc;
    out << j.dump() << '\n';
  }
}

void assign_splits(Corpus& corpus, int train, int val, int test) {
  if (train <= 0 || val < 0 || test < 0)
    throw ValidationError("assign_splits: bad ratios");
  const double total = train + val + test;
  std::map<std::string, std::vector<int>> by_speaker;
  for (std::size_t i = 0; i < corpus.utterances.size(); ++i)
    by_speaker[corpus.utterances[i].speaker_id].push_back(static_cast<int>(i));

  for (auto& [spk, idx] : by_speaker) {
    const int n = static_cast<int>(idx.size());
    const double want[3] = {n * train / total, n * val / total, n * test / total};
    int counts[3];
    double rem[3];
    int assigned = 0;
    for (int k = 0; k < 3; ++k) {
      counts[k] = static_cast<int>(std::floor(want[k]));
      rem[k] = want[k] - counts[k];
      assigned += counts[k];
    }
    // Largest remainder, ties to the earlier split.
    while (assigned < n) {
      int best = 0;
      for (int k = 1; k < 3; ++k)
        if (rem[k] > rem[best] + 1e-12) best = k;
      ++counts[best];
      rem[best] = -1;
      ++assigned;
    }
    const char* names[3] = {"train", "val", "test"};
    int pos = 0;
    for (int k = 0; k < 3; ++k)
      for (int c = 0; c < counts[k]; ++c)
        corpus.utterances[idx[pos++]].split = names[k];
  }
}

// ---------------------------------------------------------------------------
// Synthetic corpus
// ---------------------------------------------------------------------------

void SyntheticCorpusSpec::validate() const {
  if (n_speakers < 2)
    throw ValidationError("SyntheticCorpusSpec: n_speakers must be >= 2");
  if (!base_f0_hz.empty()) {
    if (static_cast<int>(base_f0_hz.size()) != n_speakers)
      throw ValidationError("SyntheticCorpusSpec: base_f0_hz size != n_speakers");
    for (std::size_t a = 0; a < base_f0_hz.size(); ++a)
      for (std::size_t b = a + 1; b < base_f0_hz.size(); ++b)
        if (std::abs(base_f0_hz[a] - base_f0_hz[b]) < 20.0)
          throw ValidationError(
              "SyntheticCorpusSpec: speaker base F0s closer than 20 Hz");
  }
  if (vocabulary_size < 2 || n_phoneme_types < 2)
    throw ValidationError("SyntheticCorpusSpec: vocabulary too small");
  if (sentence_min_words < 1 || sentence_max_words < sentence_min_words)
    throw ValidationError("SyntheticCorpusSpec: bad sentence length range");
  if (utterances_per_speaker < 1)
    throw ValidationError("SyntheticCorpusSpec: utterances_per_speaker < 1");
  if (duration_scale_min <= 0 || energy_scale_min <= 0)
    throw ValidationError("SyntheticCorpusSpec: scales must be positive");
}

namespace {

struct PhonemeProto {
  std::vector<double> harmonic_amps;  // normalized, 10 harmonics
  int base_duration_frames = 8;
};

struct WordProto {
  std::vector<int> phonemes;
};

// Natural-sounding micro-modulation; without it every word is perfectly
// stationary and frame-periodic, which no mel-driven vocoder can match.
struct WordModulation {
  double vibrato_rate_hz = 5.5;
  double vibrato_depth_st = 0.2;
  double vibrato_phase = 0.0;
  double shimmer_rate_hz = 6.5;
  double shimmer_depth = 0.08;
  double shimmer_phase = 0.0;
};

// Render one phoneme segment: harmonic stack at f0 with vibrato/shimmer and
// a raised-cosine fade at both ends. The accumulated phase keeps harmonics
// coherent under the modulated fundamental.
void render_segment(std::vector<double>& out, std::size_t at, int n_samples,
                    double f0, double energy, double tilt,
                    const PhonemeProto& proto, const WordModulation& mod,
                    double t0_seconds, double& phase, int sample_rate) {
  constexpr double kTwoPi = 6.283185307179586476925286766559;
  const int fade = std::min(n_samples / 4, sample_rate / 100);  // <= 10 ms
  const int max_h = static_cast<int>(proto.harmonic_amps.size());
  std::vector<double> amps;
  double norm = 0.0;
  for (int h = 1; h <= max_h; ++h) {
    if (f0 * h >= 0.45 * sample_rate) break;
    const double a = proto.harmonic_amps[h - 1] * std::exp(-tilt * (h - 1));
    amps.push_back(a);
    norm += a;
  }
  if (norm <= 0) return;
  const double amp0 = 0.28 * energy / norm;
  for (int i = 0; i < n_samples; ++i) {
    const double t = t0_seconds + static_cast<double>(i) / sample_rate;
    const double vib = mod.vibrato_depth_st *
                       std::sin(kTwoPi * mod.vibrato_rate_hz * t + mod.vibrato_phase);
    const double inst_f0 = f0 * std::pow(2.0, vib / 12.0);
    phase += kTwoPi * inst_f0 / sample_rate;
    double v = 0.0;
    for (std::size_t h = 0; h < amps.size(); ++h)
      v += amps[h] * std::sin(phase * (h + 1));
    double env = 1.0 + mod.shimmer_depth *
                           std::sin(kTwoPi * mod.shimmer_rate_hz * t +
                                    mod.shimmer_phase);
    if (i < fade) env *= 0.5 - 0.5 * std::cos(kTwoPi * 0.5 * i / fade);
    if (i >= n_samples - fade) {
      const int j = n_samples - 1 - i;
      env *= std::min(1.0, 0.5 - 0.5 * std::cos(kTwoPi * 0.5 * j / fade));
    }
    out[at + i] = amp0 * env * v;
  }
}

}  // namespace

SyntheticCorpus generate_synthetic_corpus(const SyntheticCorpusSpec& spec,
                                          std::uint64_t seed,
                                          const std::string& out_dir) {
  spec.validate();
  const MelConfig mel_cfg;
  const int hop = mel_cfg.hop;
  const int sr = mel_cfg.sample_rate;

  std::vector<double> base_f0 = spec.base_f0_hz;
  std::vector<double> tilt = spec.spectral_tilt;
  if (base_f0.empty()) {
    // Geometric spacing keeps pairwise gaps >= 20 Hz and about 6 semitones;
    // the band stays inside the pitch extractor's 70-500 Hz range even at
    // the widest per-word offsets.
    base_f0.resize(spec.n_speakers);
    for (int s = 0; s < spec.n_speakers; ++s)
      base_f0[s] = 140.0 * std::pow(1.4, s);
  }
  if (tilt.empty()) {
    tilt.resize(spec.n_speakers);
    for (int s = 0; s < spec.n_speakers; ++s) tilt[s] = 0.25 + 0.3 * s;
  }

  Rng proto_rng(seed, "corpus/prototypes");
  std::vector<PhonemeProto> phones(spec.n_phoneme_types);
  for (auto& p : phones) {
    // A dominant fundamental keeps the pitch unambiguous; the upper
    // harmonics carry the per-phoneme timbre.
    p.harmonic_amps.resize(6);
    p.harmonic_amps[0] = proto_rng.uniform(0.7, 1.0);
    double norm = p.harmonic_amps[0] * p.harmonic_amps[0];
    for (std::size_t h = 1; h < p.harmonic_amps.size(); ++h) {
      p.harmonic_amps[h] = proto_rng.uniform(0.05, 0.55);
      norm += p.harmonic_amps[h] * p.harmonic_amps[h];
    }
    for (auto& a : p.harmonic_amps) a /= std::sqrt(norm);
    p.base_duration_frames = static_cast<int>(proto_rng.uniform_int(
        spec.base_duration_max_frames - spec.base_duration_min_frames + 1)) +
        spec.base_duration_min_frames;
  }
  std::vector<WordProto> words(spec.vocabulary_size);
  for (auto& w : words) {
    const int np = static_cast<int>(proto_rng.uniform_int(
        spec.phonemes_per_word_max - spec.phonemes_per_word_min + 1)) +
        spec.phonemes_per_word_min;
    for (int p = 0; p < np; ++p)
      w.phonemes.push_back(static_cast<int>(proto_rng.uniform_int(spec.n_phoneme_types)));
  }

  SyntheticCorpus out;
  out.corpus.mel_config = mel_cfg;
  out.speaker_base_f0 = base_f0;

  if (!out_dir.empty()) fs::create_directories(fs::path(out_dir) / "audio");

  for (int s = 0; s < spec.n_speakers; ++s) {
    const std::string spk = "spk" + std::to_string(s);
    Rng rng(seed, "corpus/speaker/" + spk);
    int doc_index = 0;
    int sentences_left_in_doc = 0;
    for (int uidx = 0; uidx < spec.utterances_per_speaker; ++uidx) {
      if (sentences_left_in_doc == 0) {
        sentences_left_in_doc = static_cast<int>(rng.uniform_int(
            spec.doc_max_sentences - spec.doc_min_sentences + 1)) +
            spec.doc_min_sentences;
        ++doc_index;
      }
      --sentences_left_in_doc;

      Utterance u;
      u.id = spk + "_u" + std::to_string(uidx);
      u.speaker_id = spk;
      u.doc = spk + "_doc" + std::to_string(doc_index - 1);

      const int n_words = static_cast<int>(rng.uniform_int(
          spec.sentence_max_words - spec.sentence_min_words + 1)) +
          spec.sentence_min_words;

      struct WordPlan {
        int word_type;
        double offset, energy, dscale, f0;
        WordModulation mod;
        std::vector<int> durs;
      };
      std::vector<WordPlan> plan(n_words);
      std::ostringstream text;
      int total_frames = 0;
      for (int w = 0; w < n_words; ++w) {
        WordPlan& wp = plan[w];
        wp.word_type = static_cast<int>(rng.uniform_int(spec.vocabulary_size));
        wp.offset = rng.uniform(-spec.pitch_offset_semitones,
                                spec.pitch_offset_semitones);
        wp.energy = rng.uniform(spec.energy_scale_min, spec.energy_scale_max);
        wp.dscale = rng.uniform(spec.duration_scale_min, spec.duration_scale_max);
        wp.f0 = base_f0[s] * std::pow(2.0, wp.offset / 12.0);
        wp.mod.vibrato_rate_hz = rng.uniform(4.5, 6.5);
        wp.mod.vibrato_depth_st = rng.uniform(0.15, 0.3);
        wp.mod.vibrato_phase = rng.uniform(0.0, 6.2831853);
        wp.mod.shimmer_rate_hz = rng.uniform(5.0, 8.0);
        wp.mod.shimmer_depth = rng.uniform(0.04, 0.12);
        wp.mod.shimmer_phase = rng.uniform(0.0, 6.2831853);
        if (w) text << ' ';
        text << 'w' << wp.word_type;
        for (const int ph : words[wp.word_type].phonemes) {
          const int d = std::max(
              1, static_cast<int>(std::lround(phones[ph].base_duration_frames *
                                              wp.dscale)));
          wp.durs.push_back(d);
          u.phonemes.push_back(ph);
          u.phoneme_durations.push_back(d);
          u.phoneme_to_word.push_back(w);
          total_frames += d;
        }
        out.truth.push_back({u.id, w, wp.offset, wp.energy, wp.dscale, wp.f0});
      }
      u.text = text.str();
      u.waveform.assign(static_cast<std::size_t>(total_frames) * hop, 0.0);

      std::size_t at = 0;
      for (const auto& wp : plan) {
        const auto& protos = words[wp.word_type].phonemes;
        const double word_t0 = static_cast<double>(at) / sr;
        double phase = 0.0;  // continuous across the word's phonemes
        for (std::size_t p = 0; p < protos.size(); ++p) {
          const int n = wp.durs[p] * hop;
          render_segment(u.waveform, at, n, wp.f0, wp.energy, tilt[s],
                         phones[protos[p]], wp.mod,
                         static_cast<double>(at) / sr - word_t0, phase, sr);
          at += n;
        }
      }

      if (!out_dir.empty()) {
        const std::string rel = "audio/" + u.id + ".wav";
        u.audio_path = (fs::path(out_dir) / rel).string();
        write_wav(u.audio_path, u.waveform, sr);
        // Keep the in-memory corpus identical to what a reload would see.
        u.waveform = read_wav(u.audio_path).samples;
      }
      out.corpus.utterances.push_back(std::move(u));
    }
  }

  // Document-level splits so long-context windows stay within one split.
  {
    auto docs = out.corpus.documents();
    std::map<std::string, std::vector<std::string>> docs_by_speaker;
    for (const auto& [doc, idx] : docs)
      docs_by_speaker[out.corpus.utterances[idx.front()].speaker_id].push_back(doc);
    for (const auto& [spk, doc_ids] : docs_by_speaker) {
      const int nd = static_cast<int>(doc_ids.size());
      const int n_test = nd >= 2 ? std::max(1, nd / 5) : 0;
      const int n_val = nd >= 4 ? std::max(1, nd / 10) : 0;
      for (int i = 0; i < nd; ++i) {
        const char* name = i < nd - n_test - n_val ? "train"
                           : i < nd - n_test      ? "val"
                                                  : "test";
        for (const int ui : docs[doc_ids[i]])
          out.corpus.utterances[ui].split = name;
      }
    }
  }

  if (!out_dir.empty()) {
    save_manifest(out.corpus, (fs::path(out_dir) / "manifest.jsonl").string());
    std::ofstream tf((fs::path(out_dir) / "prosody_truth.jsonl").string());
    for (const auto& t : out.truth) {
      json j;
      j["utterance"] = t.utterance_id;
      j["word"] = t.word;
      j["pitch_offset"] = t.pitch_offset_semitones;
      j["energy_scale"] = t.energy_scale;
      j["duration_scale"] = t.duration_scale;
      j["f0_hz"] = t.f0_hz;
      tf << j.dump() << '\n';
    }
  }
  return out;
}

std::vector<WordProsodyTruth> load_prosody_truth(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open prosody truth: " + path);
  std::vector<WordProsodyTruth> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    out.push_back({j["utterance"].get<std::string>(), j["word"].get<int>(),
                   j["pitch_offset"].get<double>(), j["energy_scale"].get<double>(),
                   j["duration_scale"].get<double>(), j["f0_hz"].get<double>()});
  }
  return out;
}

ChunkSelection sample_chunk(const Utterance& utt, int chunk_samples,
                            const MelConfig& cfg, Rng& rng) {
  if (chunk_samples <= 0 || chunk_samples % cfg.hop != 0)
    throw ValidationError("sample_chunk: chunk size must be a positive multiple of hop");
  const std::size_t t = utt.waveform.size();
  if (t < static_cast<std::size_t>(chunk_samples))
    throw ValidationError("sample_chunk: utterance '" + utt.id +
                          "' shorter than chunk; pad with zeros or skip it");
  const int max_start_frame =
      static_cast<int>((t - chunk_samples) / cfg.hop);
  ChunkSelection sel;
  sel.frame_start = static_cast<int>(rng.uniform_int(max_start_frame + 1));
  sel.frame_count = chunk_samples / cfg.hop;
  sel.sample_start = static_cast<std::size_t>(sel.frame_start) * cfg.hop;
  sel.sample_count = static_cast<std::size_t>(chunk_samples);
  return sel;
}

}  // namespace prosoflow
