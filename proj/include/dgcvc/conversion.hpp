#pragma once

#include <vector>

#include "dgcvc/nn.hpp"

namespace dgcvc::conv {

using ad::Var;

struct ConversionConfig {
  int n_mels = 80;
  int spk_dim = 256;            // speaker embedding width
  int dim_neck = 32;            // bottleneck width per direction
  int freq = 32;                // temporal downsampling factor
  int enc_channels = 512;       // three 5x1 conv layers
  int dec_lstm1 = 512;
  int dec_channels = 512;       // three 5x1 conv layers
  int dec_lstm2 = 1024;         // three stacked layers
  int postnet_channels = 512;   // five 5x1 conv layers
  int window_frames = 160;
};

// Temporally downsampled bidirectional bottleneck codes. Rows are code
// positions in time-major batch layout: row p*B + b. The forward direction is
// sampled at frames {f-1, 2f-1, ...}, the backward direction at {0, f, ...}.
struct ContentCode {
  Var forward_codes;   // (n*B) x dim_neck
  Var backward_codes;  // (n*B) x dim_neck
  Var combined;        // (n*B) x 2*dim_neck
  int n_positions = 0;
  int batch = 0;
};

struct DecoderOutput {
  Var x_prime;    // (T*B) x n_mels, pre-postnet
  Var x_dprime;   // (T*B) x n_mels, x_prime + postnet residual
  Var residual;   // postnet output
};

// Content encoder, decoder and postnet of the bottleneck autoencoder.
class ConversionModel {
 public:
  ConversionModel(const ConversionConfig& cfg, uint64_t seed);

  const ConversionConfig& config() const { return cfg_; }

  // mel: (T*B) x n_mels time-major, spk: B x spk_dim. T must be a multiple of
  // the downsampling factor.
  ContentCode encode_content(const Var& mel, const Var& spk, int B, int T, bool training);
  DecoderOutput decode(const ContentCode& code, const Var& spk, int B, int T, bool training);

  struct Reconstruction {
    ContentCode codes;
    DecoderOutput out;
  };
  // training forward pass: the same utterance provides content and target
  Reconstruction reconstruct(const Var& mel, const Var& spk, int B, int T, bool training);

  // inference: arbitrary-length source mel processed in non-overlapping
  // window_frames windows (final window padded with pad_value); the output
  // keeps the padded frame count
  Mat convert(const Mat& src_mel, const Mat& spk_src, const Mat& spk_tgt, double pad_value);

  nn::ParamList params();
  std::vector<std::pair<std::string, Mat*>> buffers();

 private:
  ConversionConfig cfg_;
  // content encoder
  nn::Conv1d ec1_, ec2_, ec3_;
  nn::BatchNorm eb1_, eb2_, eb3_;
  nn::LstmLayer efwd1_, ebwd1_, efwd2_, ebwd2_;
  // decoder
  nn::LstmLayer dl1_;
  nn::Conv1d dc1_, dc2_, dc3_;
  nn::BatchNorm db1_, db2_, db3_;
  nn::LstmLayer dl2a_, dl2b_, dl2c_;
  nn::Linear dout_;
  // postnet
  std::vector<nn::Conv1d> pconv_;
  std::vector<nn::BatchNorm> pbn_;
};

}  // namespace dgcvc::conv
