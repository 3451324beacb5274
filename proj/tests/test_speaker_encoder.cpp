#include <cmath>
#include <random>

#include "dgcvc/speaker_encoder.hpp"
#include "doctest.h"

using namespace dgcvc;
using namespace dgcvc::spk;

namespace {

asv::AsvConfig tiny_asv_cfg() {
  asv::AsvConfig cfg;
  cfg.input_dim = 10;
  cfg.layers = 2;
  cfg.hidden = 12;
  cfg.proj = 10;
  cfg.embed_dim = 16;
  cfg.window_frames = 16;
  cfg.window_hop = 8;
  return cfg;
}

SpeakerEncoderConfig tiny_spk_cfg() {
  SpeakerEncoderConfig cfg;
  cfg.embed_dim = 16;
  cfg.n_tokens = 4;
  cfg.heads = 2;
  cfg.token_dim = 16;
  cfg.ref_ch1 = 4;
  cfg.ref_ch2 = 6;
  cfg.ref_ch3 = 8;
  cfg.gru_hidden = 12;
  return cfg;
}

Mat random_mel(int T, int dim, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, 1.0);
  Mat m(T, dim);
  for (auto& v : m.data) v = d(rng);
  return m;
}

}  // namespace

TEST_CASE("variant strings parse and print") {
  CHECK(parse_variant("d") == Variant::kD);
  CHECK(parse_variant("g") == Variant::kG);
  CHECK(parse_variant("dg") == Variant::kDg);
  CHECK(parse_variant("dgc") == Variant::kDgc);
  CHECK(variant_name(Variant::kDgc) == "dgc");
  CHECK_THROWS(parse_variant("x"));
  CHECK(variant_needs_asv(Variant::kD));
  CHECK_FALSE(variant_needs_asv(Variant::kG));
  CHECK(variant_has_gst(Variant::kG));
  CHECK_FALSE(variant_has_gst(Variant::kD));
}

TEST_CASE("fixed-size output for different reference lengths") {
  asv::AsvModel am(tiny_asv_cfg(), 1);
  am.freeze();
  for (Variant v : {Variant::kG, Variant::kDg, Variant::kDgc}) {
    SpeakerEncoder enc(tiny_spk_cfg(), v, 10, &am, 7);
    for (int T : {16, 40}) {
      Mat mel = random_mel(T, 10, 3);
      Mat e = enc.embed_utterance(mel, -1.0);
      CHECK(e.rows == 1);
      CHECK(e.cols == 16);
    }
  }
}

TEST_CASE("reference encoder rejects too-short inputs naming the minimum") {
  asv::AsvModel am(tiny_asv_cfg(), 1);
  am.freeze();
  SpeakerEncoder enc(tiny_spk_cfg(), Variant::kDg, 10, &am, 7);
  Mat mel = random_mel(4, 10, 3);
  // short utterances are padded up to the minimum rather than rejected
  Mat e = enc.embed_utterance(mel, -1.0);
  CHECK(e.cols == 16);
  // the raw batch path enforces the bound
  CHECK_THROWS_WITH_AS(enc.embed_batch(mel, 1, 4, false, -1.0), doctest::Contains("8"), std::invalid_argument);
}

TEST_CASE("embedding inference is deterministic") {
  asv::AsvModel am(tiny_asv_cfg(), 1);
  am.freeze();
  SpeakerEncoder enc(tiny_spk_cfg(), Variant::kDgc, 10, &am, 7);
  Mat mel = random_mel(24, 10, 5);
  Mat a = enc.embed_utterance(mel, -1.0);
  Mat b = enc.embed_utterance(mel, -1.0);
  CHECK(a.data == b.data);
}

TEST_CASE("gradients reach convolution and gru parameters but never the frozen model") {
  asv::AsvModel am(tiny_asv_cfg(), 1);
  am.freeze();
  const uint64_t before = am.checksum();
  SpeakerEncoder enc(tiny_spk_cfg(), Variant::kDg, 10, &am, 7);
  Mat mel = random_mel(16, 10, 5);

  auto params = enc.params();
  nn::Adam opt(1e-3);
  opt.zero_grad(params);
  ad::Var emb = enc.embed_batch(mel, 1, 16, true, -1.0);
  ad::backward(ad::mean_all(ad::mul(emb, emb)));

  int with_grad = 0;
  for (auto& np : params) {
    double n = 0;
    for (double g : np.p->grad.data) n += g * g;
    if (n > 0) ++with_grad;
  }
  // every conv, bn, gru and attention parameter should receive gradient
  CHECK(with_grad == static_cast<int>(params.size()));
  CHECK(am.checksum() == before);
}

TEST_CASE("attention weights lie on the simplex per head") {
  asv::AsvModel am(tiny_asv_cfg(), 1);
  am.freeze();
  SpeakerEncoder enc(tiny_spk_cfg(), Variant::kDgc, 10, &am, 7);
  Mat mel = random_mel(20, 10, 11);
  AttentionResult res = enc.attend_reference(mel, 20, -1.0);
  REQUIRE(res.head_weights.size() == 2);
  for (const auto& w : res.head_weights) {
    for (int i = 0; i < w->value.rows; ++i) {
      double sum = 0.0;
      for (int j = 0; j < w->value.cols; ++j) {
        CHECK(w->value(i, j) >= 0.0);
        sum += w->value(i, j);
      }
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    }
  }
}

TEST_CASE("single-token attention returns that token's value projection for any query") {
  SpeakerEncoderConfig cfg = tiny_spk_cfg();
  cfg.n_tokens = 1;
  StyleAttention att(cfg, 12, 3);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> d(0.0, 1.0);
  Mat q1(2, 12), q2(2, 12);
  for (auto& v : q1.data) v = d(rng);
  for (auto& v : q2.data) v = d(rng);
  Mat o1 = att.forward(ad::constant(q1)).embedding->value;
  Mat o2 = att.forward(ad::constant(q2)).embedding->value;
  CHECK(o1.data == o2.data);
  // oracle: output is exactly tanh(token) * Wv, the lone value projection
  nn::ParamList ps;
  att.collect("a", ps);
  const Mat* wv = nullptr;
  for (auto& np : ps)
    if (np.name == "a.wv") wv = &np.p->value;
  REQUIRE(wv != nullptr);
  const Mat& tok = att.tokens()->value;
  for (int j = 0; j < cfg.embed_dim; ++j) {
    double expect = 0.0;
    for (int k = 0; k < cfg.token_dim; ++k) expect += std::tanh(tok(0, k)) * (*wv)(k, j);
    CHECK(o1(0, j) == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("single-head two-token attention matches a manual softmax weighted sum") {
  SpeakerEncoderConfig cfg;
  cfg.embed_dim = 2;
  cfg.heads = 1;
  cfg.n_tokens = 2;
  cfg.token_dim = 2;
  StyleAttention att(cfg, 2, 3);
  // hand-set parameters: identity projections, fixed tokens
  att.tokens()->value = Mat::from_rows({{0.3, -0.2}, {-0.5, 0.8}});
  nn::ParamList ps;
  att.collect("a", ps);
  for (auto& np : ps) {
    if (np.name == "a.wq" || np.name == "a.wk" || np.name == "a.wv")
      np.p->value = Mat::from_rows({{1.0, 0.0}, {0.0, 1.0}});
  }
  Mat query = Mat::from_rows({{0.7, -0.4}});
  Mat out = att.forward(ad::constant(query)).embedding->value;

  // manual five-line oracle
  const double k0x = std::tanh(0.3), k0y = std::tanh(-0.2);
  const double k1x = std::tanh(-0.5), k1y = std::tanh(0.8);
  const double s0 = (0.7 * k0x + -0.4 * k0y) / std::sqrt(2.0);
  const double s1 = (0.7 * k1x + -0.4 * k1y) / std::sqrt(2.0);
  const double m = std::max(s0, s1);
  const double w0 = std::exp(s0 - m) / (std::exp(s0 - m) + std::exp(s1 - m));
  const double w1 = 1.0 - w0;
  CHECK(out(0, 0) == doctest::Approx(w0 * k0x + w1 * k1x).epsilon(1e-9));
  CHECK(out(0, 1) == doctest::Approx(w0 * k0y + w1 * k1y).epsilon(1e-9));
}

TEST_CASE("attention config validation") {
  SpeakerEncoderConfig cfg = tiny_spk_cfg();
  cfg.heads = 3;  // does not divide 16
  CHECK_THROWS(StyleAttention(cfg, 12, 1));
}

TEST_CASE("d variant is a passthrough to the verification d-vector") {
  asv::AsvConfig acfg = tiny_asv_cfg();
  asv::AsvModel am(acfg, 1);
  am.freeze();
  SpeakerEncoderConfig cfg = tiny_spk_cfg();
  cfg.embed_dim = acfg.embed_dim;
  SpeakerEncoder enc(cfg, Variant::kD, 10, &am, 7);
  Mat mel = random_mel(24, 10, 5);
  Mat via_encoder = enc.embed_utterance(mel, -1.0);
  Mat direct = am.dvector(mel, -1.0);
  CHECK(via_encoder.data == direct.data);
}

TEST_CASE("dg and dgc with identical weights produce identical embeddings") {
  asv::AsvModel am(tiny_asv_cfg(), 1);
  am.freeze();
  SpeakerEncoder dg(tiny_spk_cfg(), Variant::kDg, 10, &am, 7);
  SpeakerEncoder dgc(tiny_spk_cfg(), Variant::kDgc, 10, &am, 7);
  Mat mel = random_mel(24, 10, 5);
  CHECK(dg.embed_utterance(mel, -1.0).data == dgc.embed_utterance(mel, -1.0).data);
}

TEST_CASE("variants needing the verification model refuse to build without it") {
  CHECK_THROWS(SpeakerEncoder(tiny_spk_cfg(), Variant::kDgc, 10, nullptr, 7));
  CHECK_THROWS(SpeakerEncoder(tiny_spk_cfg(), Variant::kD, 10, nullptr, 7));
  CHECK_NOTHROW(SpeakerEncoder(tiny_spk_cfg(), Variant::kG, 10, nullptr, 7));
}
