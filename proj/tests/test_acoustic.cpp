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

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "prosoflow/acoustic.hpp"
#include "prosoflow/checkpoint.hpp"
#include "prosoflow/corpus.hpp"

using namespace prosoflow;
using namespace prosoflow::ad;

namespace {

AcousticConfig tiny_cfg() {
  AcousticConfig cfg;
  cfg.phoneme_vocab = 16;
  cfg.enc_dim = 8;
  cfg.speaker_dim = 192;
  cfg.spk_proj_dim = 4;
  cfg.ref_hidden = 8;
  cfg.dec_hidden = 8;
  cfg.gen_channels = 8;
  return cfg;
}

DiscriminatorConfig tiny_disc_cfg() {
  DiscriminatorConfig cfg;
  cfg.mpd_channels = 2;
  cfg.mrd_channels = 2;
  return cfg;
}

}  // namespace

TEST_CASE("phoneme encoder: shape, purity, sequence awareness") {
  nn::ParamStore ps(41);
  AcousticModel model(ps, tiny_cfg(), {"spk0", "spk1"});

  Var one = model.encode_phonemes({3});
  CHECK(one->val.rows() == 8);
  CHECK(one->val.cols() == 1);

  Var a = model.encode_phonemes({1, 2, 3, 4, 5});
  Var b = model.encode_phonemes({1, 2, 3, 4, 5});
  CHECK((a->val - b->val).cwiseAbs().maxCoeff() == 0.0);

  // Permuting inputs moves outputs at the affected positions.
  Var c = model.encode_phonemes({5, 2, 3, 4, 1});
  CHECK((a->val.col(0) - c->val.col(0)).cwiseAbs().maxCoeff() > 1e-12);
  CHECK((a->val.col(4) - c->val.col(4)).cwiseAbs().maxCoeff() > 1e-12);

  CHECK_THROWS_AS(model.encode_phonemes({99}), ValidationError);
}

TEST_CASE("upsampler replicates encodings by duration") {
  nn::ParamStore ps(42);
  AcousticModel model(ps, tiny_cfg(), {"spk0"});
  Var enc = model.encode_phonemes({1, 2, 3});

  SUBCASE("d=[2,1,3]") {
    Var up = AcousticModel::upsample(enc, {2, 1, 3});
    REQUIRE(up->val.cols() == 6);
    CHECK((up->val.col(0) - enc->val.col(0)).cwiseAbs().maxCoeff() == 0.0);
    CHECK((up->val.col(1) - enc->val.col(0)).cwiseAbs().maxCoeff() == 0.0);
    CHECK((up->val.col(2) - enc->val.col(1)).cwiseAbs().maxCoeff() == 0.0);
    CHECK((up->val.col(5) - enc->val.col(2)).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("zero duration drops the phoneme") {
    Var up = AcousticModel::upsample(model.encode_phonemes({1, 2}), {0, 4});
    REQUIRE(up->val.cols() == 4);
    Var enc2 = model.encode_phonemes({1, 2});
    for (int t = 0; t < 4; ++t)
      CHECK((up->val.col(t) - enc2->val.col(1)).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("negative duration rejected") {
    CHECK_THROWS_AS(AcousticModel::upsample(enc, {1, -1, 2}), ValidationError);
  }
  SUBCASE("property: output frame t equals the owning phoneme's encoding") {
    Rng rng(7);
    for (int trial = 0; trial < 50; ++trial) {
      const int p = 1 + static_cast<int>(rng.uniform_int(8));
      std::vector<int> ids(p), d(p);
      for (int i = 0; i < p; ++i) {
        ids[i] = static_cast<int>(rng.uniform_int(12));
        d[i] = static_cast<int>(rng.uniform_int(6));
      }
      if (std::accumulate(d.begin(), d.end(), 0) == 0) d[0] = 1;
      Var enc2 = model.encode_phonemes(ids);
      Var up = AcousticModel::upsample(enc2, d);
      // Brute-force frame labeling.
      int t = 0;
      for (int i = 0; i < p; ++i)
        for (int f = 0; f < d[i]; ++f, ++t)
          CHECK((up->val.col(t) - enc2->val.col(i)).cwiseAbs().maxCoeff() == 0.0);
      CHECK(up->val.cols() == t);
    }
  }
}

TEST_CASE("reference encoder: shapes, init KL, pooling locality") {
  nn::ParamStore ps(43);
  AcousticModel model(ps, tiny_cfg(), {"spk0", "spk1"});
  Rng rng(5);
  Mat mel = rng.normal_mat(80, 12);
  const std::vector<std::pair<int, int>> spans = {{0, 4}, {4, 7}, {7, 12}};
  Var spk = model.speakers().lookup(0);

  auto post = model.reference_encode(mel, spans, spk);
  CHECK(post.mu->val.rows() == 4);
  CHECK(post.mu->val.cols() == 3);

  SUBCASE("zero-init stddev head: initial KL is 0.5 * sum mu^2") {
    CHECK(post.log_sigma->val.cwiseAbs().maxCoeff() == 0.0);
    const double kl = nn::gaussian_kl(post.mu, post.log_sigma)->val(0, 0);
    CHECK(kl == doctest::Approx(0.5 * post.mu->val.squaredNorm()).epsilon(1e-12));
  }
  SUBCASE("empty word list rejected") {
    CHECK_THROWS_AS(model.reference_encode(mel, {}, spk), ValidationError);
  }
  SUBCASE("pooling-only mode: word posterior depends only on its own frames") {
    auto base = model.reference_encode(mel, spans, spk, /*pooling_only=*/true);
    Mat mel2 = mel;
    mel2.middleCols(4, 3) *= 2.0;  // word 1's frames only
    auto bumped = model.reference_encode(mel2, spans, spk, /*pooling_only=*/true);
    CHECK((base.mu->val.col(0) - bumped.mu->val.col(0)).cwiseAbs().maxCoeff() == 0.0);
    CHECK((base.mu->val.col(2) - bumped.mu->val.col(2)).cwiseAbs().maxCoeff() == 0.0);
    CHECK((base.mu->val.col(1) - bumped.mu->val.col(1)).cwiseAbs().maxCoeff() > 1e-12);
  }
}

TEST_CASE("sample_latents statistics") {
  // 1e5 reparameterized draws of one scalar latent match (mu, sigma) within
  // three standard errors.
  const double mu = 0.7, sigma = 1.3;
  Var muv = constant(Mat::Constant(1, 1, mu));
  Var lsv = constant(Mat::Constant(1, 1, std::log(sigma)));
  Rng rng(11);
  const int n = 100000;
  double sum = 0, sum_sq = 0;
  for (int i = 0; i < n; ++i) {
    Mat eps(1, 1);
    eps(0, 0) = rng.normal();
    const double z = nn::reparam_sample(muv, lsv, eps)->val(0, 0);
    sum += z;
    sum_sq += z * z;
  }
  const double mean = sum / n;
  const double sd = std::sqrt(sum_sq / n - mean * mean);
  CHECK(std::abs(mean - mu) < 3 * sigma / std::sqrt(n));
  CHECK(std::abs(sd - sigma) < 3 * sigma / std::sqrt(2.0 * n));
}

TEST_CASE("decoder: shape, latent and speaker conditioning") {
  nn::ParamStore ps(44);
  AcousticModel model(ps, tiny_cfg(), {"spk0", "spk1"});
  Rng rng(6);
  Var enc = model.encode_phonemes({1, 2, 3});
  Var ups = AcousticModel::upsample(enc, {3, 2, 3});
  const std::vector<int> fw = {0, 0, 0, 0, 0, 1, 1, 1};
  const std::vector<int> fp = {0, 0, 0, 1, 1, 2, 2, 2};
  Var z = constant(rng.normal_mat(4, 2));

  Var b = model.decode(ups, model.speakers().lookup(0), z, fw, fp);
  CHECK(b->val.rows() == 80);
  CHECK(b->val.cols() == 8);

  SUBCASE("changing a word latent perturbs B") {
    Mat z2 = z->val;
    z2.col(1) += rng.normal_mat(4, 1);
    Var b2 = model.decode(ups, model.speakers().lookup(0), constant(z2), fw, fp);
    CHECK((b->val - b2->val).cwiseAbs().maxCoeff() > 1e-12);
  }
  SUBCASE("two speakers give different B") {
    Var b2 = model.decode(ups, model.speakers().lookup(1), z, fw, fp);
    CHECK((b->val - b2->val).cwiseAbs().maxCoeff() > 1e-12);
  }
  SUBCASE("word-count mismatch rejected") {
    const std::vector<int> bad = {0, 0, 0, 0, 0, 1, 1, 5};
    CHECK_THROWS_AS(model.decode(ups, model.speakers().lookup(0), z, bad, fp),
                    ValidationError);
  }
}

TEST_CASE("vocoder length contract and responsiveness") {
  nn::ParamStore ps(45);
  AcousticModel model(ps, tiny_cfg(), {"spk0"});
  Rng rng(7);
  Mat b = rng.normal_mat(80, 12);
  Var wave = model.vocode(constant(b));
  CHECK(wave->val.rows() == 1);
  CHECK(wave->val.cols() == 12 * 256);

  Var wave75 = model.vocode(constant(rng.normal_mat(80, 75)));
  CHECK(wave75->val.cols() == 19200);

  Var wave2 = model.vocode(constant(Mat(2.0 * b)));
  CHECK((wave->val - wave2->val).cwiseAbs().maxCoeff() > 1e-12);

  CHECK_THROWS_AS(model.vocode(constant(rng.normal_mat(40, 12))), ValidationError);
}

TEST_CASE("discriminator set: count, layer lists, purity") {
  nn::ParamStore ps(46);
  DiscriminatorSet disc(ps, tiny_disc_cfg());
  CHECK(disc.count() == 8);
  Rng rng(8);
  Var x = constant(rng.normal_mat(1, 3072, 0.3));
  auto out = disc.forward(x);
  REQUIRE(out.size() == 8);
  for (const auto& d : out) CHECK(d.features.size() == 4);

  auto out2 = disc.forward(x);
  for (std::size_t k = 0; k < out.size(); ++k)
    CHECK((out[k].score->val - out2[k].score->val).cwiseAbs().maxCoeff() == 0.0);

  SUBCASE("wrong length is rejected under the chunk contract") {
    CHECK_THROWS_AS(disc.forward(x, 19200), ValidationError);
    CHECK_NOTHROW(disc.forward(x, 3072));
  }
}

TEST_CASE("loss algebra") {
  // Mock score maps exercise the Eq. 1-2 algebra without any model.
  auto mock = [](double value, int n) {
    DiscriminatorOutput d;
    d.score = constant(Mat::Constant(1, n, value));
    d.features = {d.score};
    return d;
  };
  SUBCASE("perfect discriminator: adv_d == 0 and adv_g == 8") {
    std::vector<DiscriminatorOutput> real, fake;
    for (int k = 0; k < 8; ++k) {
      real.push_back(mock(1.0, 5));  // D_k(x) = 1
      fake.push_back(mock(0.0, 5));  // D_k(x') = 0
    }
    CHECK(adv_discriminator_loss(real, fake)->val(0, 0) == doctest::Approx(0.0));
    CHECK(adv_generator_loss(fake)->val(0, 0) == doctest::Approx(8.0));
  }
  SUBCASE("identical features give zero feature-matching loss") {
    std::vector<DiscriminatorOutput> real, fake;
    for (int k = 0; k < 3; ++k) {
      auto d = mock(0.37 * (k + 1), 4);
      real.push_back(d);
      fake.push_back(d);
    }
    CHECK(feature_matching_loss(real, fake)->val(0, 0) == doctest::Approx(0.0));
  }
}

TEST_CASE("mel loss: identity and padded-frame masking") {
  MelConfig mel;
  Rng rng(9);
  const int m = 4 * 256;
  Mat x = rng.normal_mat(1, m, 0.2);

  SUBCASE("fake == real gives zero") {
    std::vector<double> wave(x.data(), x.data() + m);
    Mat real_mel = extract_mel(wave, mel).frames;
    Var loss = mel_loss(constant(x), real_mel, mel, 4);
    CHECK(loss->val(0, 0) == doctest::Approx(0.0).epsilon(1e-12));
  }
  SUBCASE("padded frames contribute nothing") {
    // Real utterance of 600 valid samples padded to m.
    std::vector<double> valid_wave(x.data(), x.data() + 600);
    std::vector<double> padded = valid_wave;
    padded.resize(m, 0.0);
    Mat padded_mel = extract_mel(padded, mel).frames;
    Mat trunc_mel = extract_mel(valid_wave, mel).frames;
    const int valid_frames = trunc_mel.cols();
    REQUIRE(valid_frames == 3);

    Mat fake = rng.normal_mat(1, m, 0.2);
    Var masked = mel_loss(constant(fake), padded_mel, mel, valid_frames);
    Var truncated = mel_loss(constant(fake), trunc_mel, mel, valid_frames);
    CHECK(masked->val(0, 0) == doctest::Approx(truncated->val(0, 0)).epsilon(1e-12));

    // Corrupting the padded region of the reference changes nothing.
    Mat corrupted = padded_mel;
    corrupted.rightCols(1).setConstant(3.0);
    Var masked2 = mel_loss(constant(fake), corrupted, mel, valid_frames);
    CHECK(masked2->val(0, 0) == doctest::Approx(masked->val(0, 0)).epsilon(1e-15));
  }
}

TEST_CASE("stage1 trainer: loss composition, determinism, zero lr") {
  SyntheticCorpusSpec spec;
  spec.n_speakers = 2;
  spec.utterances_per_speaker = 2;
  spec.sentence_min_words = 2;
  spec.sentence_max_words = 2;
  auto sc = generate_synthetic_corpus(spec, 31);

  AcousticConfig cfg = tiny_cfg();
  const int chunk = 4 * 256;  // tiny chunks keep this test fast

  auto run_steps = [&](int n_steps, double lr) {
    nn::ParamStore gen_ps(51), disc_ps(52);
    AcousticModel model(gen_ps, cfg, {"spk0", "spk1"});
    DiscriminatorSet disc(disc_ps, tiny_disc_cfg());
    Stage1Trainer trainer(&model, &gen_ps, &disc, &disc_ps, LossWeights{},
                          chunk, lr, lr);
    std::vector<TrainItem> items;
    for (const auto& u : sc.corpus.utterances)
      items.push_back(prepare_train_item(u, model.speakers(), cfg, chunk));
    std::vector<const TrainItem*> batch;
    for (const auto& item : items) batch.push_back(&item);
    std::vector<Stage1LossBreakdown> history;
    for (int s = 0; s < n_steps; ++s) history.push_back(trainer.step(batch));
    return std::make_tuple(history, gen_ps.values_digest(), disc_ps.values_digest());
  };

  SUBCASE("total_g composition is exact and reruns are identical") {
    auto [h1, g1, d1] = run_steps(3, 2e-4);
    auto [h2, g2, d2] = run_steps(3, 2e-4);
    CHECK(g1 == g2);
    CHECK(d1 == d2);
    for (int s = 0; s < 3; ++s) {
      CHECK(h1[s].total_g == h2[s].total_g);
      CHECK(h1[s].total_g == h1[s].adv_g + 4.0 * h1[s].feat + 45.0 * h1[s].mel +
                                 1e-3 * h1[s].kl);
      CHECK(h1[s].total_d == h1[s].adv_d);
      CHECK(h1[s].adv_g >= 0.0);
      CHECK(h1[s].feat >= 0.0);
      CHECK(h1[s].mel >= 0.0);
      CHECK(h1[s].kl >= -1e-12);
    }
  }
  SUBCASE("zero learning rate leaves both parameter sets unchanged") {
    nn::ParamStore gen_ps(51), disc_ps(52);
    AcousticModel model(gen_ps, cfg, {"spk0", "spk1"});
    DiscriminatorSet disc(disc_ps, tiny_disc_cfg());
    const auto g_before = gen_ps.values_digest();
    const auto d_before = disc_ps.values_digest();
    Stage1Trainer trainer(&model, &gen_ps, &disc, &disc_ps, LossWeights{},
                          chunk, 0.0, 0.0);
    std::vector<TrainItem> items;
    for (const auto& u : sc.corpus.utterances)
      items.push_back(prepare_train_item(u, model.speakers(), cfg, chunk));
    trainer.step({&items[0], &items[1]});
    CHECK(gen_ps.values_digest() == g_before);
    CHECK(disc_ps.values_digest() == d_before);
  }
}

TEST_CASE("stage1 generator gradients match finite differences") {
  // Micro configuration: hop-16 mel and a 192-sample chunk keep the loss
  // locally linear at the 1e-3 probe step.
  AcousticConfig cfg = tiny_cfg();
  cfg.mel.n_fft = 64;
  cfg.mel.hop = 16;
  cfg.mel.window = 64;
  cfg.mel.bands = 20;
  cfg.upsample_rates = {4, 4};
  DiscriminatorConfig disc_cfg;
  disc_cfg.periods = {2};  // one discriminator per family
  disc_cfg.resolutions = {{64, 16}};
  disc_cfg.mpd_channels = 2;
  disc_cfg.mrd_channels = 2;

  nn::ParamStore gen_ps(61), disc_ps(62);
  AcousticModel model(gen_ps, cfg, {"spk0", "spk1"});
  DiscriminatorSet disc_small(disc_ps, disc_cfg);

  const int chunk = 12 * 16;  // T_mel = 12 in the chunk
  Stage1Trainer trainer(&model, &gen_ps, &disc_small, &disc_ps, LossWeights{},
                        chunk);

  Utterance utt;
  utt.id = "grad_check";
  utt.speaker_id = "spk1";
  Rng wave_rng(13);
  utt.waveform.resize(10 * 16);
  for (auto& v : utt.waveform) v = 0.3 * wave_rng.normal();
  utt.phonemes = {1, 4, 2};
  utt.phoneme_durations = {3, 4, 3};
  utt.phoneme_to_word = {0, 0, 1};

  TrainItem item = prepare_train_item(utt, model.speakers(), cfg, chunk);
  std::vector<const TrainItem*> batch = {&item};
  std::vector<ChunkPlan> plans = trainer.draw_plans(batch);

  Stage1LossBreakdown bd;
  Var total = trainer.build_generator_total(batch, plans, &bd);
  backward(total);

  // Sample 10 parameter coordinates across theta-union-phi and compare with
  // central differences at step 1e-3 in double precision. The losses contain
  // kinks (L1 terms, leaky-relu), so a coordinate only counts when the FD
  // probe itself is locally consistent: estimates at h and h/2 must agree.
  // That validity test uses finite differences alone, never the analytic
  // value under test.
  auto fd_at = [&](ad::Var v, int r, int c, double h) {
    const double keep = v->val(r, c);
    Stage1LossBreakdown tmp;
    v->val(r, c) = keep + h;
    const double up = trainer.build_generator_total(batch, plans, &tmp)->val(0, 0);
    v->val(r, c) = keep - h;
    const double dn = trainer.build_generator_total(batch, plans, &tmp)->val(0, 0);
    v->val(r, c) = keep;
    return (up - dn) / (2 * h);
  };
  Rng pick(99);
  int checked = 0, attempts = 0;
  double worst = 0;
  while (checked < 10 && attempts < 200) {
    ++attempts;
    auto& entries = gen_ps.entries();
    auto& e = entries[pick.uniform_int(entries.size())];
    if (!e.v->grad_ready) continue;
    const int r = static_cast<int>(pick.uniform_int(e.v->val.rows()));
    const int c = static_cast<int>(pick.uniform_int(e.v->val.cols()));
    const double an = e.v->grad(r, c);
    if (std::abs(an) < 1e-7) continue;  // avoid pure-noise comparisons
    const double fd = fd_at(e.v, r, c, 1e-3);
    const double fd_half = fd_at(e.v, r, c, 5e-4);
    if (std::abs(fd - fd_half) / std::max({std::abs(fd), std::abs(fd_half), 1e-8}) >
        2e-3)
      continue;  // FD is not trustworthy at this step for this coordinate
    const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-8});
    worst = std::max(worst, rel);
    ++checked;
  }
  REQUIRE(checked == 10);
  CHECK(worst < 1e-2);
}

TEST_CASE("checkpoint round trip reproduces forward outputs bit-exactly") {
  namespace fs = std::filesystem;
  SyntheticCorpusSpec spec;
  spec.n_speakers = 2;
  spec.utterances_per_speaker = 1;
  auto sc = generate_synthetic_corpus(spec, 5);

  AcousticConfig cfg = tiny_cfg();
  nn::ParamStore ps(71);
  AcousticModel model(ps, cfg, {"spk0", "spk1"});
  Rng rng(1);
  // Move parameters off their init so the test is not trivial.
  for (auto& e : ps.entries())
    e.v->val += rng.normal_mat(static_cast<int>(e.v->val.rows()),
                               static_cast<int>(e.v->val.cols()), 0.05);

  Mat b = rng.normal_mat(80, 6);
  const Mat before = model.vocode(constant(b))->val;

  const auto dir = fs::temp_directory_path() / "prosoflow_ckpt";
  fs::create_directories(dir);
  const std::string path = (dir / "acoustic.ckpt").string();
  nn::Adam opt;
  opt.init(ps);
  Rng train_rng(3);
  save_checkpoint(path, "stage1", TrainState{&ps, &opt, &train_rng, 123}, "{}");

  nn::ParamStore ps2(99);  // different init seed: values must come from disk
  AcousticModel model2(ps2, cfg, {"spk0", "spk1"});
  nn::Adam opt2;
  Rng rng2(9);
  auto loaded = load_checkpoint(path, "stage1", TrainState{&ps2, &opt2, &rng2, 0});
  CHECK(loaded.step == 123);
  CHECK(rng2.state_digest() == train_rng.state_digest());
  const Mat after = model2.vocode(constant(b))->val;
  CHECK((before - after).cwiseAbs().maxCoeff() == 0.0);

  SUBCASE("truncated file fails the integrity check") {
    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)),
                      std::istreambuf_iterator<char>());
    in.close();
    std::ofstream out(path + ".trunc", std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    out.close();
    nn::ParamStore ps3(1);
    AcousticModel model3(ps3, cfg, {"spk0", "spk1"});
    CHECK_THROWS_AS(
        load_checkpoint(path + ".trunc", "stage1", TrainState{&ps3, nullptr, nullptr, 0}),
        IoError);
  }
  SUBCASE("kind mismatch names the problem") {
    nn::ParamStore ps3(1);
    AcousticModel model3(ps3, cfg, {"spk0", "spk1"});
    CHECK_THROWS_AS(
        load_checkpoint(path, "stage2", TrainState{&ps3, nullptr, nullptr, 0}),
        ValidationError);
  }
}
