#pragma once

#include <string>
#include <vector>

#include "dgcvc/asv.hpp"
#include "dgcvc/nn.hpp"

namespace dgcvc::spk {

using ad::Var;

enum class Variant { kD, kG, kDg, kDgc };
Variant parse_variant(const std::string& s);
std::string variant_name(Variant v);
// d-sequence-based variants need the frozen verification model
bool variant_needs_asv(Variant v);
// gst pathway (everything except the plain d-vector)
bool variant_has_gst(Variant v);

struct SpeakerEncoderConfig {
  int embed_dim = 256;
  int n_tokens = 10;
  int heads = 4;
  int token_dim = 256;
  double token_sigma = 0.5;
  int ref_ch1 = 32;
  int ref_ch2 = 64;
  int ref_ch3 = 128;
  int gru_hidden = 256;
};

constexpr int kMinReferenceFrames = 8;

// Three stride-2 conv+bn+relu stages over the (time x feature) map, then a
// GRU whose final state is the fixed-size utterance summary.
class ReferenceEncoder {
 public:
  ReferenceEncoder() = default;
  ReferenceEncoder(const SpeakerEncoderConfig& cfg, int input_width, uint64_t seed);
  // x: (T*B) x input_width, returns B x gru_hidden
  Var forward(const Var& x, int B, int T, bool training);
  int input_width() const { return input_width_; }
  void collect(const std::string& prefix, nn::ParamList& out) const;
  void collect_buffers(const std::string& prefix, std::vector<std::pair<std::string, Mat*>>& out);

 private:
  SpeakerEncoderConfig cfg_;
  int input_width_ = 0;
  nn::Conv2dS2 conv1_, conv2_, conv3_;
  nn::BatchNorm bn1_, bn2_, bn3_;
  nn::GruLayer gru_;
};

struct AttentionResult {
  Var embedding;                  // B x embed_dim
  std::vector<Var> head_weights;  // per head: B x n_tokens, rows on the simplex
};

// Multi-head attention with the learnable token bank as keys and values;
// output is the concatenation of the head outputs.
class StyleAttention {
 public:
  StyleAttention() = default;
  StyleAttention(const SpeakerEncoderConfig& cfg, int query_dim, uint64_t seed);
  AttentionResult forward(const Var& query) const;
  void collect(const std::string& prefix, nn::ParamList& out) const;
  Var tokens() const { return tokens_; }

 private:
  SpeakerEncoderConfig cfg_;
  Var tokens_;          // n_tokens x token_dim
  Var wq_, wk_, wv_;    // projections into embed_dim
};

// E_s under the four variants. D is a frozen passthrough to the ASV
// d-vector; G attends over the mel reference; DG and DGC attend over the
// frozen d-sequence (identical architecture, the classifier only shapes
// DGC's training).
class SpeakerEncoder {
 public:
  SpeakerEncoder(const SpeakerEncoderConfig& cfg, Variant variant, int mel_dim, const asv::AsvModel* asv_model,
                 uint64_t seed);

  Variant variant() const { return variant_; }
  const SpeakerEncoderConfig& config() const { return cfg_; }

  // training-time embedding of a batch of reference windows (time-major)
  Var embed_batch(const Mat& mel_windows, int B, int T, bool training, double pad_value);
  // inference over one full utterance mel
  Mat embed_utterance(const Mat& mel, double pad_value);
  // attention introspection for the structural tests (gst variants only)
  AttentionResult attend_reference(const Mat& mel_window, int T, double pad_value);

  nn::ParamList params();
  std::vector<std::pair<std::string, Mat*>> buffers();

 private:
  Var reference_features(const Mat& mel_windows, int B, int T) const;  // constants
  SpeakerEncoderConfig cfg_;
  Variant variant_;
  const asv::AsvModel* asv_ = nullptr;
  ReferenceEncoder ref_;
  StyleAttention att_;
};

}  // namespace dgcvc::spk
