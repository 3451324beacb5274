#include "dgcvc/conversion.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

#include "dgcvc/rng.hpp"

namespace dgcvc::conv {

ConversionModel::ConversionModel(const ConversionConfig& cfg, uint64_t seed) : cfg_(cfg) {
  if (cfg.window_frames % cfg.freq != 0)
    throw std::invalid_argument("window_frames must be a multiple of the downsampling factor");
  auto rng = make_rng(seed, "conv.init");
  const int enc_in = cfg.n_mels + cfg.spk_dim;
  ec1_ = nn::Conv1d(enc_in, cfg.enc_channels, 5, rng);
  ec2_ = nn::Conv1d(cfg.enc_channels, cfg.enc_channels, 5, rng);
  ec3_ = nn::Conv1d(cfg.enc_channels, cfg.enc_channels, 5, rng);
  eb1_ = nn::BatchNorm(cfg.enc_channels);
  eb2_ = nn::BatchNorm(cfg.enc_channels);
  eb3_ = nn::BatchNorm(cfg.enc_channels);
  efwd1_ = nn::LstmLayer(cfg.enc_channels, cfg.dim_neck, rng);
  ebwd1_ = nn::LstmLayer(cfg.enc_channels, cfg.dim_neck, rng);
  efwd2_ = nn::LstmLayer(2 * cfg.dim_neck, cfg.dim_neck, rng);
  ebwd2_ = nn::LstmLayer(2 * cfg.dim_neck, cfg.dim_neck, rng);

  dl1_ = nn::LstmLayer(2 * cfg.dim_neck + cfg.spk_dim, cfg.dec_lstm1, rng);
  dc1_ = nn::Conv1d(cfg.dec_lstm1, cfg.dec_channels, 5, rng);
  dc2_ = nn::Conv1d(cfg.dec_channels, cfg.dec_channels, 5, rng);
  dc3_ = nn::Conv1d(cfg.dec_channels, cfg.dec_channels, 5, rng);
  db1_ = nn::BatchNorm(cfg.dec_channels);
  db2_ = nn::BatchNorm(cfg.dec_channels);
  db3_ = nn::BatchNorm(cfg.dec_channels);
  dl2a_ = nn::LstmLayer(cfg.dec_channels, cfg.dec_lstm2, rng);
  dl2b_ = nn::LstmLayer(cfg.dec_lstm2, cfg.dec_lstm2, rng);
  dl2c_ = nn::LstmLayer(cfg.dec_lstm2, cfg.dec_lstm2, rng);
  dout_ = nn::Linear(cfg.dec_lstm2, cfg.n_mels, rng);

  const int pc = cfg.postnet_channels;
  pconv_.emplace_back(cfg.n_mels, pc, 5, rng);
  pconv_.emplace_back(pc, pc, 5, rng);
  pconv_.emplace_back(pc, pc, 5, rng);
  pconv_.emplace_back(pc, pc, 5, rng);
  pconv_.emplace_back(pc, cfg.n_mels, 5, rng);
  for (int i = 0; i < 4; ++i) pbn_.emplace_back(pc);
  pbn_.emplace_back(cfg.n_mels);
}

ContentCode ConversionModel::encode_content(const Var& mel, const Var& spk, int B, int T, bool training) {
  if (mel->value.rows != T * B || mel->value.cols != cfg_.n_mels)
    throw std::invalid_argument("encode_content: expected (" + std::to_string(T * B) + ")x" +
                                std::to_string(cfg_.n_mels) + " mel, got " + mel->value.shape_str());
  if (spk->value.rows != B || spk->value.cols != cfg_.spk_dim)
    throw std::invalid_argument("encode_content: speaker embedding must be " + std::to_string(B) + "x" +
                                std::to_string(cfg_.spk_dim));
  if (T % cfg_.freq != 0)
    throw std::invalid_argument("encode_content: frame count must be a multiple of the downsampling factor");

  // broadcast the source embedding across time
  std::vector<int> bidx(T * B);
  for (int t = 0; t < T; ++t)
    for (int b = 0; b < B; ++b) bidx[t * B + b] = b;
  Var x = ad::concat_cols(mel, ad::gather_rows(spk, bidx));

  x = ad::relu_v(eb1_.forward(ec1_.forward(x, B, T), 1, training));
  x = ad::relu_v(eb2_.forward(ec2_.forward(x, B, T), 1, training));
  x = ad::relu_v(eb3_.forward(ec3_.forward(x, B, T), 1, training));

  Var f1 = efwd1_.forward(x, B, T, false);
  Var b1 = ebwd1_.forward(x, B, T, true);
  Var h1 = ad::concat_cols(f1, b1);
  Var f2 = efwd2_.forward(h1, B, T, false);
  Var b2 = ebwd2_.forward(h1, B, T, true);

  const int n = T / cfg_.freq;
  std::vector<int> fwd_idx(n * B), bwd_idx(n * B);
  for (int p = 0; p < n; ++p)
    for (int b = 0; b < B; ++b) {
      fwd_idx[p * B + b] = ((p + 1) * cfg_.freq - 1) * B + b;
      bwd_idx[p * B + b] = (p * cfg_.freq) * B + b;
    }
  ContentCode code;
  code.forward_codes = ad::gather_rows(f2, fwd_idx);
  code.backward_codes = ad::gather_rows(b2, bwd_idx);
  code.combined = ad::concat_cols(code.forward_codes, code.backward_codes);
  code.n_positions = n;
  code.batch = B;
  return code;
}

DecoderOutput ConversionModel::decode(const ContentCode& code, const Var& spk, int B, int T, bool training) {
  if (code.batch != B) throw std::invalid_argument("decode: batch mismatch with content code");
  if (code.n_positions * cfg_.freq != T) throw std::invalid_argument("decode: code positions do not cover T frames");
  if (code.combined->value.cols != 2 * cfg_.dim_neck)
    throw std::invalid_argument("decode: unexpected code width " + std::to_string(code.combined->value.cols));
  if (spk->value.rows != B || spk->value.cols != cfg_.spk_dim)
    throw std::invalid_argument("decode: speaker embedding must be " + std::to_string(B) + "x" +
                                std::to_string(cfg_.spk_dim));

  // each code row covers freq consecutive frames
  std::vector<int> up_idx(T * B), bidx(T * B);
  for (int t = 0; t < T; ++t)
    for (int b = 0; b < B; ++b) {
      up_idx[t * B + b] = (t / cfg_.freq) * B + b;
      bidx[t * B + b] = b;
    }
  Var x = ad::concat_cols(ad::gather_rows(code.combined, up_idx), ad::gather_rows(spk, bidx));

  x = dl1_.forward(x, B, T, false);
  x = ad::relu_v(db1_.forward(dc1_.forward(x, B, T), 1, training));
  x = ad::relu_v(db2_.forward(dc2_.forward(x, B, T), 1, training));
  x = ad::relu_v(db3_.forward(dc3_.forward(x, B, T), 1, training));
  x = dl2a_.forward(x, B, T, false);
  x = dl2b_.forward(x, B, T, false);
  x = dl2c_.forward(x, B, T, false);

  DecoderOutput out;
  out.x_prime = dout_.forward(x);

  Var r = out.x_prime;
  for (int i = 0; i < 4; ++i) r = ad::tanh_v(pbn_[i].forward(pconv_[i].forward(r, B, T), 1, training));
  r = pbn_[4].forward(pconv_[4].forward(r, B, T), 1, training);
  out.residual = r;
  out.x_dprime = ad::add(out.x_prime, r);
  return out;
}

ConversionModel::Reconstruction ConversionModel::reconstruct(const Var& mel, const Var& spk, int B, int T,
                                                             bool training) {
  Reconstruction rec;
  rec.codes = encode_content(mel, spk, B, T, training);
  rec.out = decode(rec.codes, spk, B, T, training);
  return rec;
}

Mat ConversionModel::convert(const Mat& src_mel, const Mat& spk_src, const Mat& spk_tgt, double pad_value) {
  if (src_mel.rows < 1) throw std::invalid_argument("convert: empty source mel");
  if (spk_src.rows != 1 || spk_tgt.rows != 1 || spk_src.cols != cfg_.spk_dim || spk_tgt.cols != cfg_.spk_dim)
    throw std::invalid_argument("convert: speaker embeddings must be 1x" + std::to_string(cfg_.spk_dim));
  ad::NoGradGuard ng;
  const int W = cfg_.window_frames;
  const int n_win = (src_mel.rows + W - 1) / W;
  const int padded_T = n_win * W;

  Mat out(padded_T, cfg_.n_mels);
  Var sv = ad::constant(spk_src);
  Var tv = ad::constant(spk_tgt);
  for (int win = 0; win < n_win; ++win) {
    Mat window(W, cfg_.n_mels, pad_value);
    const int start = win * W;
    const int copy = std::min(W, src_mel.rows - start);
    for (int t = 0; t < copy; ++t)
      std::memcpy(window.row_ptr(t), src_mel.row_ptr(start + t), sizeof(double) * cfg_.n_mels);
    ContentCode code = encode_content(ad::constant(std::move(window)), sv, 1, W, false);
    DecoderOutput dec = decode(code, tv, 1, W, false);
    for (int t = 0; t < W; ++t)
      std::memcpy(out.row_ptr(start + t), dec.x_dprime->value.row_ptr(t), sizeof(double) * cfg_.n_mels);
  }
  return out;
}

nn::ParamList ConversionModel::params() {
  nn::ParamList out;
  ec1_.collect("conv.enc.c1", out);
  ec2_.collect("conv.enc.c2", out);
  ec3_.collect("conv.enc.c3", out);
  eb1_.collect("conv.enc.bn1", out);
  eb2_.collect("conv.enc.bn2", out);
  eb3_.collect("conv.enc.bn3", out);
  efwd1_.collect("conv.enc.fwd1", out);
  ebwd1_.collect("conv.enc.bwd1", out);
  efwd2_.collect("conv.enc.fwd2", out);
  ebwd2_.collect("conv.enc.bwd2", out);
  dl1_.collect("conv.dec.l1", out);
  dc1_.collect("conv.dec.c1", out);
  dc2_.collect("conv.dec.c2", out);
  dc3_.collect("conv.dec.c3", out);
  db1_.collect("conv.dec.bn1", out);
  db2_.collect("conv.dec.bn2", out);
  db3_.collect("conv.dec.bn3", out);
  dl2a_.collect("conv.dec.l2a", out);
  dl2b_.collect("conv.dec.l2b", out);
  dl2c_.collect("conv.dec.l2c", out);
  dout_.collect("conv.dec.out", out);
  for (size_t i = 0; i < pconv_.size(); ++i) pconv_[i].collect("conv.post.c" + std::to_string(i + 1), out);
  for (size_t i = 0; i < pbn_.size(); ++i) pbn_[i].collect("conv.post.bn" + std::to_string(i + 1), out);
  return out;
}

std::vector<std::pair<std::string, Mat*>> ConversionModel::buffers() {
  std::vector<std::pair<std::string, Mat*>> out;
  eb1_.collect_buffers("conv.enc.bn1", out);
  eb2_.collect_buffers("conv.enc.bn2", out);
  eb3_.collect_buffers("conv.enc.bn3", out);
  db1_.collect_buffers("conv.dec.bn1", out);
  db2_.collect_buffers("conv.dec.bn2", out);
  db3_.collect_buffers("conv.dec.bn3", out);
  for (size_t i = 0; i < pbn_.size(); ++i) pbn_[i].collect_buffers("conv.post.bn" + std::to_string(i + 1), out);
  return out;
}

}  // namespace dgcvc::conv
