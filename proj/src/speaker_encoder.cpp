#include "dgcvc/speaker_encoder.hpp"

#include <cmath>
#include <stdexcept>

#include "dgcvc/rng.hpp"

namespace dgcvc::spk {

Variant parse_variant(const std::string& s) {
  if (s == "d") return Variant::kD;
  if (s == "g") return Variant::kG;
  if (s == "dg") return Variant::kDg;
  if (s == "dgc") return Variant::kDgc;
  throw std::invalid_argument("unknown variant '" + s + "' (expected d, g, dg or dgc)");
}

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::kD: return "d";
    case Variant::kG: return "g";
    case Variant::kDg: return "dg";
    case Variant::kDgc: return "dgc";
  }
  return "?";
}

bool variant_needs_asv(Variant v) { return v != Variant::kG; }
bool variant_has_gst(Variant v) { return v != Variant::kD; }

// ---------------------------------------------------------------------------
// ReferenceEncoder
// ---------------------------------------------------------------------------

ReferenceEncoder::ReferenceEncoder(const SpeakerEncoderConfig& cfg, int input_width, uint64_t seed)
    : cfg_(cfg), input_width_(input_width) {
  if (input_width < kMinReferenceFrames)
    throw std::invalid_argument("reference encoder input width must be >= 8");
  auto rng = make_rng(seed, "refenc.init");
  conv1_ = nn::Conv2dS2(1, cfg.ref_ch1, rng);
  conv2_ = nn::Conv2dS2(cfg.ref_ch1, cfg.ref_ch2, rng);
  conv3_ = nn::Conv2dS2(cfg.ref_ch2, cfg.ref_ch3, rng);
  bn1_ = nn::BatchNorm(cfg.ref_ch1);
  bn2_ = nn::BatchNorm(cfg.ref_ch2);
  bn3_ = nn::BatchNorm(cfg.ref_ch3);
  const int w3 = (((input_width + 1) / 2 + 1) / 2 + 1) / 2;
  gru_ = nn::GruLayer(cfg.ref_ch3 * w3, cfg.gru_hidden, rng);
}

Var ReferenceEncoder::forward(const Var& x, int B, int T, bool training) {
  if (T < kMinReferenceFrames)
    throw std::invalid_argument("reference encoder needs at least " + std::to_string(kMinReferenceFrames) +
                                " frames, got " + std::to_string(T));
  if (x->value.cols != input_width_)
    throw std::invalid_argument("reference encoder built for width " + std::to_string(input_width_) + ", got " +
                                std::to_string(x->value.cols));
  int t = T, w = input_width_;
  Var h = conv1_.forward(x, B, t, w);
  t = (t + 1) / 2;
  w = (w + 1) / 2;
  h = ad::relu_v(bn1_.forward(h, w, training));
  h = conv2_.forward(h, B, t, w);
  t = (t + 1) / 2;
  w = (w + 1) / 2;
  h = ad::relu_v(bn2_.forward(h, w, training));
  h = conv3_.forward(h, B, t, w);
  t = (t + 1) / 2;
  w = (w + 1) / 2;
  h = ad::relu_v(bn3_.forward(h, w, training));
  h = gru_.forward(h, B, t);
  std::vector<int> last(B);
  for (int b = 0; b < B; ++b) last[b] = (t - 1) * B + b;
  return ad::gather_rows(h, last);
}

void ReferenceEncoder::collect(const std::string& prefix, nn::ParamList& out) const {
  conv1_.collect(prefix + ".conv1", out);
  conv2_.collect(prefix + ".conv2", out);
  conv3_.collect(prefix + ".conv3", out);
  bn1_.collect(prefix + ".bn1", out);
  bn2_.collect(prefix + ".bn2", out);
  bn3_.collect(prefix + ".bn3", out);
  gru_.collect(prefix + ".gru", out);
}

void ReferenceEncoder::collect_buffers(const std::string& prefix, std::vector<std::pair<std::string, Mat*>>& out) {
  bn1_.collect_buffers(prefix + ".bn1", out);
  bn2_.collect_buffers(prefix + ".bn2", out);
  bn3_.collect_buffers(prefix + ".bn3", out);
}

// ---------------------------------------------------------------------------
// StyleAttention
// ---------------------------------------------------------------------------

StyleAttention::StyleAttention(const SpeakerEncoderConfig& cfg, int query_dim, uint64_t seed) : cfg_(cfg) {
  if (cfg.n_tokens < 1) throw std::invalid_argument("style attention needs at least one token");
  if (cfg.token_dim % cfg.heads != 0 || cfg.embed_dim % cfg.heads != 0)
    throw std::invalid_argument("token_dim and embed_dim must be divisible by the head count");
  auto rng = make_rng(seed, "gst.init");
  tokens_ = ad::param(nn::normal_init(cfg.n_tokens, cfg.token_dim, cfg.token_sigma, rng));
  const double kq = 1.0 / std::sqrt(static_cast<double>(query_dim));
  const double kt = 1.0 / std::sqrt(static_cast<double>(cfg.token_dim));
  wq_ = ad::param(nn::uniform_init(query_dim, cfg.embed_dim, kq, rng));
  wk_ = ad::param(nn::uniform_init(cfg.token_dim, cfg.embed_dim, kt, rng));
  wv_ = ad::param(nn::uniform_init(cfg.token_dim, cfg.embed_dim, kt, rng));
}

AttentionResult StyleAttention::forward(const Var& query) const {
  const int H = cfg_.heads;
  const int dh = cfg_.embed_dim / H;
  Var q = ad::matmul(query, wq_);
  Var keys = ad::matmul(ad::tanh_v(tokens_), wk_);
  Var values = ad::matmul(ad::tanh_v(tokens_), wv_);

  AttentionResult res;
  Var out;
  for (int h = 0; h < H; ++h) {
    Var qh = ad::slice_cols(q, h * dh, (h + 1) * dh);
    Var kh = ad::slice_cols(keys, h * dh, (h + 1) * dh);
    Var vh = ad::slice_cols(values, h * dh, (h + 1) * dh);
    Var scores = ad::scale(ad::matmul_nt(qh, kh), 1.0 / std::sqrt(static_cast<double>(dh)));
    Var attn = ad::softmax_rows(scores);
    res.head_weights.push_back(attn);
    Var oh = ad::matmul(attn, vh);
    out = (h == 0) ? oh : ad::concat_cols(out, oh);
  }
  res.embedding = out;
  return res;
}

void StyleAttention::collect(const std::string& prefix, nn::ParamList& out) const {
  out.push_back({prefix + ".tokens", tokens_});
  out.push_back({prefix + ".wq", wq_});
  out.push_back({prefix + ".wk", wk_});
  out.push_back({prefix + ".wv", wv_});
}

// ---------------------------------------------------------------------------
// SpeakerEncoder
// ---------------------------------------------------------------------------

SpeakerEncoder::SpeakerEncoder(const SpeakerEncoderConfig& cfg, Variant variant, int mel_dim,
                               const asv::AsvModel* asv_model, uint64_t seed)
    : cfg_(cfg), variant_(variant), asv_(asv_model) {
  if (variant_needs_asv(variant) && asv_ == nullptr)
    throw std::invalid_argument("variant '" + variant_name(variant) + "' requires a pretrained verification model");
  if (variant_has_gst(variant)) {
    const int width = (variant == Variant::kG) ? mel_dim : asv_->config().proj;
    ref_ = ReferenceEncoder(cfg, width, seed);
    att_ = StyleAttention(cfg, cfg.gru_hidden, seed);
  }
  if (variant == Variant::kD && asv_->config().embed_dim != cfg.embed_dim)
    throw std::invalid_argument("d-vector width does not match the configured embedding dimension");
}

Var SpeakerEncoder::reference_features(const Mat& mel_windows, int B, int T) const {
  if (variant_ == Variant::kG) return ad::constant(mel_windows);
  // frozen d-sequence; no gradient may reach the verification model
  ad::NoGradGuard ng;
  Var x = ad::constant(mel_windows);
  return ad::constant(asv_->dsequence_var(x, B, T)->value);
}

Var SpeakerEncoder::embed_batch(const Mat& mel_windows, int B, int T, bool training, double pad_value) {
  (void)pad_value;
  if (mel_windows.rows != T * B) throw std::invalid_argument("embed_batch: rows != T*B");
  if (variant_ == Variant::kD) {
    ad::NoGradGuard ng;
    return ad::constant(asv_->embed_window_var(ad::constant(mel_windows), B, T)->value);
  }
  Var feats = reference_features(mel_windows, B, T);
  Var query = ref_.forward(feats, B, T, training);
  return att_.forward(query).embedding;
}

Mat SpeakerEncoder::embed_utterance(const Mat& mel, double pad_value) {
  if (variant_ == Variant::kD) return asv_->dvector(mel, pad_value);
  ad::NoGradGuard ng;
  Mat padded = mel;
  if (padded.rows < kMinReferenceFrames) {
    Mat grown(kMinReferenceFrames, mel.cols, pad_value);
    for (int t = 0; t < mel.rows; ++t)
      for (int j = 0; j < mel.cols; ++j) grown(t, j) = mel(t, j);
    padded = std::move(grown);
  }
  return embed_batch(padded, 1, padded.rows, false, pad_value)->value;
}

AttentionResult SpeakerEncoder::attend_reference(const Mat& mel_window, int T, double pad_value) {
  (void)pad_value;
  if (!variant_has_gst(variant_))
    throw std::logic_error("attention weights only exist for the gst variants");
  ad::NoGradGuard ng;
  Var feats = reference_features(mel_window, 1, T);
  Var query = ref_.forward(feats, 1, T, false);
  return att_.forward(query);
}

nn::ParamList SpeakerEncoder::params() {
  nn::ParamList out;
  if (variant_has_gst(variant_)) {
    ref_.collect("spkenc.ref", out);
    att_.collect("spkenc.gst", out);
  }
  return out;
}

std::vector<std::pair<std::string, Mat*>> SpeakerEncoder::buffers() {
  std::vector<std::pair<std::string, Mat*>> out;
  if (variant_has_gst(variant_)) ref_.collect_buffers("spkenc.ref", out);
  return out;
}

}  // namespace dgcvc::spk
