#include <cmath>
#include <random>

#include "dgcvc/conversion.hpp"
#include "doctest.h"

using namespace dgcvc;
using namespace dgcvc::conv;

namespace {

ConversionConfig tiny_cfg() {
  ConversionConfig cfg;
  cfg.n_mels = 8;
  cfg.spk_dim = 6;
  cfg.dim_neck = 4;
  cfg.freq = 8;
  cfg.enc_channels = 12;
  cfg.dec_lstm1 = 10;
  cfg.dec_channels = 12;
  cfg.dec_lstm2 = 14;
  cfg.postnet_channels = 10;
  cfg.window_frames = 32;
  return cfg;
}

Mat random_mat(int r, int c, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, 0.5);
  Mat m(r, c);
  for (auto& v : m.data) v = d(rng);
  return m;
}

}  // namespace

TEST_CASE("content code shapes follow the downsampling arithmetic") {
  ConversionConfig cfg = tiny_cfg();
  ConversionModel model(cfg, 3);
  const int B = 2, T = 32;
  ad::NoGradGuard ng;
  auto code = model.encode_content(ad::constant(random_mat(T * B, cfg.n_mels, 1)),
                                   ad::constant(random_mat(B, cfg.spk_dim, 2)), B, T, false);
  CHECK(code.n_positions == 4);
  CHECK(code.forward_codes->value.rows == 4 * B);
  CHECK(code.forward_codes->value.cols == cfg.dim_neck);
  CHECK(code.backward_codes->value.rows == 4 * B);
  CHECK(code.backward_codes->value.cols == cfg.dim_neck);
  // bottleneck cardinality: exactly 2 * (T/f) * dim_neck numbers per item
  CHECK(code.combined->value.size() == static_cast<size_t>(2 * 4 * cfg.dim_neck * B));
}

TEST_CASE("encode_content validates shapes and the downsampling divisor") {
  ConversionConfig cfg = tiny_cfg();
  ConversionModel model(cfg, 3);
  ad::NoGradGuard ng;
  ad::Var spk = ad::constant(random_mat(1, cfg.spk_dim, 2));
  CHECK_THROWS(model.encode_content(ad::constant(random_mat(30, cfg.n_mels, 1)), spk, 1, 30, false));
  CHECK_THROWS(model.encode_content(ad::constant(random_mat(32, cfg.n_mels + 1, 1)), spk, 1, 32, false));
  CHECK_THROWS(model.encode_content(ad::constant(random_mat(32, cfg.n_mels, 1)),
                                    ad::constant(random_mat(1, cfg.spk_dim + 2, 2)), 1, 32, false));
}

TEST_CASE("codes are deterministic and sensitive to the speaker embedding") {
  ConversionConfig cfg = tiny_cfg();
  ConversionModel model(cfg, 3);
  ad::NoGradGuard ng;
  Mat mel = random_mat(32, cfg.n_mels, 1);
  Mat s1 = random_mat(1, cfg.spk_dim, 2);
  Mat s2 = random_mat(1, cfg.spk_dim, 9);
  Mat c1 = model.encode_content(ad::constant(mel), ad::constant(s1), 1, 32, false).combined->value;
  Mat c1b = model.encode_content(ad::constant(mel), ad::constant(s1), 1, 32, false).combined->value;
  Mat c2 = model.encode_content(ad::constant(mel), ad::constant(s2), 1, 32, false).combined->value;
  CHECK(c1.data == c1b.data);
  double diff = 0.0;
  for (size_t i = 0; i < c1.size(); ++i) diff += std::abs(c1.data[i] - c2.data[i]);
  CHECK(diff > 0.0);
}

TEST_CASE("decoder output shapes and the exact residual identity") {
  ConversionConfig cfg = tiny_cfg();
  ConversionModel model(cfg, 3);
  ad::NoGradGuard ng;
  const int B = 2, T = 32;
  ad::Var mel = ad::constant(random_mat(T * B, cfg.n_mels, 1));
  ad::Var spk = ad::constant(random_mat(B, cfg.spk_dim, 2));
  auto rec = model.reconstruct(mel, spk, B, T, false);
  CHECK(rec.out.x_prime->value.rows == T * B);
  CHECK(rec.out.x_prime->value.cols == cfg.n_mels);
  CHECK(rec.out.x_dprime->value.rows == T * B);
  // exact residual identity: x'' is bitwise x' plus the postnet output
  for (size_t i = 0; i < rec.out.x_prime->value.size(); ++i)
    CHECK(rec.out.x_dprime->value.data[i] == rec.out.x_prime->value.data[i] + rec.out.residual->value.data[i]);
}

TEST_CASE("zeroed postnet collapses x'' onto x'") {
  ConversionConfig cfg = tiny_cfg();
  ConversionModel model(cfg, 3);
  for (auto& np : model.params()) {
    if (np.name.rfind("conv.post.", 0) == 0) np.p->value.fill(0.0);
  }
  ad::NoGradGuard ng;
  auto rec = model.reconstruct(ad::constant(random_mat(32, cfg.n_mels, 1)),
                               ad::constant(random_mat(1, cfg.spk_dim, 2)), 1, 32, false);
  CHECK(rec.out.x_prime->value.data == rec.out.x_dprime->value.data);
}

TEST_CASE("reconstruction gradient reaches the content encoder") {
  ConversionConfig cfg = tiny_cfg();
  ConversionModel model(cfg, 3);
  ad::Var mel = ad::constant(random_mat(32, cfg.n_mels, 1));
  ad::Var spk = ad::constant(random_mat(1, cfg.spk_dim, 2));
  auto params = model.params();
  nn::Adam opt;
  opt.zero_grad(params);
  auto rec = model.reconstruct(mel, spk, 1, 32, true);
  ad::backward(ad::mse_loss(mel, rec.out.x_dprime));
  double enc_grad = 0.0;
  for (auto& np : params)
    if (np.name.rfind("conv.enc.", 0) == 0)
      for (double g : np.p->grad.data) enc_grad += g * g;
  CHECK(enc_grad > 0.0);
}

TEST_CASE("convert keeps the padded frame count and is deterministic") {
  ConversionConfig cfg = tiny_cfg();
  ConversionModel model(cfg, 3);
  Mat src = random_mat(50, cfg.n_mels, 4);
  Mat s_src = random_mat(1, cfg.spk_dim, 5);
  Mat s_tgt = random_mat(1, cfg.spk_dim, 6);
  Mat out1 = model.convert(src, s_src, s_tgt, -1.0);
  Mat out2 = model.convert(src, s_src, s_tgt, -1.0);
  CHECK(out1.rows == 64);  // two 32-frame windows
  CHECK(out1.cols == cfg.n_mels);
  CHECK(out1.data == out2.data);

  Mat exact = model.convert(random_mat(32, cfg.n_mels, 7), s_src, s_tgt, -1.0);
  CHECK(exact.rows == 32);
  CHECK_THROWS(model.convert(Mat(0, cfg.n_mels), s_src, s_tgt, -1.0));
  CHECK_THROWS(model.convert(src, random_mat(1, cfg.spk_dim + 1, 5), s_tgt, -1.0));
}

TEST_CASE("decode rejects mismatched code shapes") {
  ConversionConfig cfg = tiny_cfg();
  ConversionModel model(cfg, 3);
  ad::NoGradGuard ng;
  auto code = model.encode_content(ad::constant(random_mat(32, cfg.n_mels, 1)),
                                   ad::constant(random_mat(1, cfg.spk_dim, 2)), 1, 32, false);
  // wrong T for the given number of code positions
  CHECK_THROWS(model.decode(code, ad::constant(random_mat(1, cfg.spk_dim, 2)), 1, 64, false));
  // wrong batch
  CHECK_THROWS(model.decode(code, ad::constant(random_mat(2, cfg.spk_dim, 2)), 2, 32, false));
}
