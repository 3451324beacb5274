#include <cmath>
#include <random>

#include "dgcvc/training.hpp"
#include "doctest.h"
#include "fd_check.hpp"

using namespace dgcvc;
using namespace dgcvc::train;

namespace {

conv::ConversionConfig tiny_conv_cfg() {
  conv::ConversionConfig cfg;
  cfg.n_mels = 8;
  cfg.spk_dim = 12;
  cfg.dim_neck = 4;
  cfg.freq = 8;
  cfg.enc_channels = 10;
  cfg.dec_lstm1 = 10;
  cfg.dec_channels = 10;
  cfg.dec_lstm2 = 12;
  cfg.postnet_channels = 8;
  cfg.window_frames = 16;
  return cfg;
}

asv::AsvConfig tiny_asv_cfg() {
  asv::AsvConfig cfg;
  cfg.input_dim = 8;
  cfg.layers = 2;
  cfg.hidden = 10;
  cfg.proj = 8;
  cfg.embed_dim = 12;
  cfg.window_frames = 16;
  return cfg;
}

spk::SpeakerEncoderConfig tiny_spk_cfg() {
  spk::SpeakerEncoderConfig cfg;
  cfg.embed_dim = 12;
  cfg.n_tokens = 3;
  cfg.heads = 2;
  cfg.token_dim = 12;
  cfg.ref_ch1 = 4;
  cfg.ref_ch2 = 4;
  cfg.ref_ch3 = 6;
  cfg.gru_hidden = 8;
  return cfg;
}

signal::FeatureConfig tiny_feature_cfg() {
  signal::FeatureConfig cfg;
  cfg.n_mels = 8;
  cfg.window_frames = 16;
  return cfg;
}

std::vector<TrainSample> random_dataset(int n_speakers, int per_speaker, int frames, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, 0.4);
  std::uniform_real_distribution<double> base(-1.0, 1.0);
  std::vector<TrainSample> ds;
  for (int s = 0; s < n_speakers; ++s) {
    std::vector<double> pattern(8);
    for (auto& v : pattern) v = base(rng);
    for (int u = 0; u < per_speaker; ++u) {
      TrainSample ts;
      ts.label = s;
      ts.mel = Mat(frames, 8);
      for (int t = 0; t < frames; ++t)
        for (int j = 0; j < 8; ++j) ts.mel(t, j) = pattern[j] + d(rng);
      ds.push_back(std::move(ts));
    }
  }
  return ds;
}

struct TrainerFixture {
  asv::AsvModel am;
  conv::ConversionModel cm;
  spk::SpeakerEncoder se;
  AuxClassifier cls;
  TrainerFixture(spk::Variant variant, uint64_t seed, int n_classes = 3)
      : am(tiny_asv_cfg(), seed),
        cm(tiny_conv_cfg(), seed),
        se((am.freeze(), tiny_spk_cfg()), variant, 8, &am, seed),
        cls(12, n_classes, seed) {}
};

}  // namespace

TEST_CASE("reconstruction loss is zero for exact reconstruction") {
  ad::Var x = ad::constant(Mat(4, 3, 0.7));
  ad::Var codes = ad::constant(Mat(2, 2, 0.1));
  CHECK(reconstruction_loss(x, x, x, codes, codes)->value(0, 0) == 0.0);
}

TEST_CASE("reconstruction loss matches a direct arithmetic evaluation") {
  ad::Var x = ad::constant(Mat::from_rows({{1.0, 2.0}, {3.0, 4.0}}));
  ad::Var xp = ad::constant(Mat::from_rows({{1.5, 1.0}, {2.0, 4.5}}));
  ad::Var xpp = ad::constant(Mat::from_rows({{0.0, 2.0}, {3.0, 5.0}}));
  ad::Var ca = ad::constant(Mat::from_rows({{0.2, -0.4}}));
  ad::Var cb = ad::constant(Mat::from_rows({{-0.1, 0.5}}));
  // mean squared terms + mean absolute term, all means over elements
  const double mse1 = (0.25 + 1.0 + 1.0 + 0.25) / 4.0;
  const double mse2 = (1.0 + 0.0 + 0.0 + 1.0) / 4.0;
  const double mae = (0.3 + 0.9) / 2.0;
  CHECK(reconstruction_loss(x, xp, xpp, ca, cb)->value(0, 0) == doctest::Approx(mse1 + mse2 + mae).epsilon(1e-9));
}

TEST_CASE("reconstruction loss gradient wrt x' matches finite differences") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> d(0.0, 1.0);
  Mat xm(3, 4), xpm(3, 4), xppm(3, 4), cam(2, 3), cbm(2, 3);
  for (auto* m : {&xm, &xpm, &xppm, &cam, &cbm})
    for (auto& v : m->data) v = d(rng);
  ad::Var x = ad::constant(xm);
  ad::Var xp = ad::param(xpm);
  ad::Var xpp = ad::param(xppm);
  ad::Var ca = ad::param(cam);
  ad::Var cb = ad::param(cbm);
  auto loss = [&] { return reconstruction_loss(x, xp, xpp, ca, cb); };
  CHECK(fd_max_rel_err(loss, xp) < 1e-4);
  CHECK(fd_max_rel_err(loss, xpp) < 1e-4);
  CHECK(fd_max_rel_err(loss, ca) < 1e-4);
}

TEST_CASE("classification loss: perfect prediction, uniform logits, gradients") {
  AuxClassifier cls(6, 80, 3);

  // force p(true) = 1 by an overwhelming logit via direct loss computation
  Mat big(1, 80, -50.0);
  big(0, 7) = 50.0;
  CHECK(ad::cross_entropy(ad::constant(big), {7})->value(0, 0) == doctest::Approx(0.0).epsilon(1e-9));

  Mat uniform(1, 80, 0.0);
  CHECK(ad::cross_entropy(ad::constant(uniform), {3})->value(0, 0) == doctest::Approx(std::log(80.0)).epsilon(1e-9));

  std::mt19937_64 rng(5);
  std::normal_distribution<double> d(0.0, 1.0);
  Mat emb(4, 6);
  for (auto& v : emb.data) v = d(rng);
  ad::Var e = ad::param(emb);
  auto loss = [&] { return classification_loss(cls, e, {0, 79, 3, 41}); };
  CHECK(fd_max_rel_err(loss, e) < 1e-4);

  CHECK_THROWS(classification_loss(cls, e, {0, 1, 2, 80}));
}

TEST_CASE("total loss is the exact weighted sum") {
  ad::Var rec = ad::constant(Mat(1, 1, 2.0));
  ad::Var cls = ad::constant(Mat(1, 1, 1.0));
  CHECK(total_loss(rec, cls, 1.0, 0.5)->value(0, 0) == 2.5);
  CHECK(total_loss(rec, cls, 1.0, 0.0)->value(0, 0) == rec->value(0, 0));
  ad::Var rec2 = ad::constant(Mat(1, 1, 4.0));
  ad::Var cls2 = ad::constant(Mat(1, 1, 2.0));
  CHECK(total_loss(rec2, cls2, 1.0, 0.5)->value(0, 0) == 2.0 * total_loss(rec, cls, 1.0, 0.5)->value(0, 0));
}

TEST_CASE("training config validation forces lambda_class off the non-dgc variants") {
  TrainingConfig tc;
  tc.variant = spk::Variant::kDg;
  tc.lambda_class = 0.5;
  validate_training(tc);
  CHECK(tc.lambda_class == 0.0);
  TrainingConfig bad;
  bad.lambda_rec = -1.0;
  CHECK_THROWS(validate_training(bad));
}

TEST_CASE("classifier accuracy: perfect and chance-level inputs") {
  AuxClassifier cls(6, 4, 3);
  // construct embeddings the classifier labels perfectly by reading its own argmax
  std::mt19937_64 rng(8);
  std::normal_distribution<double> d(0.0, 1.0);
  Mat emb(400, 6);
  for (auto& v : emb.data) v = d(rng);
  ad::NoGradGuard ng;
  Mat logits = cls.logits(ad::constant(emb))->value;
  std::vector<int> self_labels(400);
  for (int i = 0; i < 400; ++i) {
    int arg = 0;
    for (int j = 1; j < 4; ++j)
      if (logits(i, j) > logits(i, arg)) arg = j;
    self_labels[i] = arg;
  }
  CHECK(classifier_accuracy(cls, emb, self_labels) == 1.0);

  // random labels stay near chance for K=4
  std::vector<int> random_labels(400);
  for (auto& l : random_labels) l = static_cast<int>(rng() % 4);
  const double acc = classifier_accuracy(cls, emb, random_labels);
  CHECK(acc > 0.10);
  CHECK(acc < 0.40);
}

TEST_CASE("trainer wiring is validated") {
  TrainingConfig tc;
  tc.variant = spk::Variant::kDgc;
  tc.batch_size = 2;
  TrainerFixture f(spk::Variant::kDgc, 11);
  CHECK_THROWS(VcTrainer(&f.cm, &f.se, nullptr, tc, tiny_feature_cfg()));  // dgc needs classifier
  TrainingConfig tc2;
  tc2.variant = spk::Variant::kDg;
  TrainerFixture f2(spk::Variant::kDg, 11);
  CHECK_THROWS(VcTrainer(&f2.cm, &f2.se, &f2.cls, tc2, tiny_feature_cfg()));  // dg must not have one
}

TEST_CASE("training steps run, are seeded-deterministic, and keep the verification model frozen") {
  TrainingConfig tc;
  tc.variant = spk::Variant::kDgc;
  tc.batch_size = 3;
  tc.lr = 1e-3;
  tc.seed = 17;
  auto ds = random_dataset(3, 3, 20, 5);

  TrainerFixture fa(spk::Variant::kDgc, 11);
  const uint64_t asv_sum = fa.am.checksum();
  VcTrainer ta(&fa.cm, &fa.se, &fa.cls, tc, tiny_feature_cfg());
  StepLosses a0 = ta.step(ds, 0);
  StepLosses a1 = ta.step(ds, 1);
  CHECK(std::isfinite(a0.total));
  CHECK(a0.total >= 0.0);
  CHECK(fa.am.checksum() == asv_sum);

  TrainerFixture fb(spk::Variant::kDgc, 11);
  VcTrainer tb(&fb.cm, &fb.se, &fb.cls, tc, tiny_feature_cfg());
  StepLosses b0 = tb.step(ds, 0);
  StepLosses b1 = tb.step(ds, 1);
  CHECK(a0.total == b0.total);
  CHECK(a1.total == b1.total);
  CHECK(a1.cls == b1.cls);
}

TEST_CASE("dg run and dgc run with lambda_class zero produce identical loss sequences") {
  auto ds = random_dataset(3, 3, 20, 5);

  TrainingConfig tc_dg;
  tc_dg.variant = spk::Variant::kDg;
  tc_dg.batch_size = 3;
  tc_dg.lr = 1e-3;
  tc_dg.seed = 23;
  validate_training(tc_dg);

  TrainingConfig tc_dgc = tc_dg;
  tc_dgc.variant = spk::Variant::kDgc;
  tc_dgc.lambda_class = 0.0;

  TrainerFixture fdg(spk::Variant::kDg, 31);
  VcTrainer t_dg(&fdg.cm, &fdg.se, nullptr, tc_dg, tiny_feature_cfg());
  TrainerFixture fdgc(spk::Variant::kDgc, 31);
  VcTrainer t_dgc(&fdgc.cm, &fdgc.se, &fdgc.cls, tc_dgc, tiny_feature_cfg());

  for (int step = 0; step < 4; ++step) {
    StepLosses a = t_dg.step(ds, step);
    StepLosses b = t_dgc.step(ds, step);
    CHECK(a.rec == b.rec);
    CHECK(a.total == b.total);
  }
}
