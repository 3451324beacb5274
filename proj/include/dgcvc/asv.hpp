#pragma once

#include <memory>
#include <vector>

#include "dgcvc/corpus.hpp"
#include "dgcvc/nn.hpp"
#include "dgcvc/signal.hpp"

namespace dgcvc::asv {

using ad::Var;

struct AsvConfig {
  int input_dim = 80;
  int layers = 3;
  int hidden = 256;
  int proj = 256;       // D-sequence width (post-projection recurrent output)
  int embed_dim = 256;  // D-vector width (FC output)
  double ge2e_w_init = 10.0;
  double ge2e_b_init = -5.0;
  int batch_speakers = 4;
  int batch_utts = 4;
  int steps = 500;
  double lr = 1e-3;
  int window_frames = 160;
  int window_hop = 80;  // sliding-window D-vector inference, 50% overlap
};

// Stacked projected LSTM speaker-verification model. The D-sequence is the
// last recurrent layer's projected output; the D-vector is the FC-projected,
// L2-normalized final-frame state. Once frozen the parameters are immutable
// and inference is safe from any number of threads.
class AsvModel {
 public:
  AsvModel(const AsvConfig& cfg, uint64_t seed);

  const AsvConfig& config() const { return cfg_; }

  // time-major batch forwards used during GE2E training
  Var dsequence_var(const Var& x, int B, int T) const;
  Var embed_window_var(const Var& x, int B, int T) const;  // B x embed_dim, unit rows

  // single-utterance inference (mel rows = frames); never records gradients
  Mat dsequence(const Mat& mel) const;
  Mat dvector(const Mat& mel, double pad_value) const;  // 1 x embed_dim

  void freeze() { frozen_ = true; }
  bool frozen() const { return frozen_; }
  uint64_t checksum();

  nn::ParamList params();
  Var ge2e_w, ge2e_b;

 private:
  AsvConfig cfg_;
  std::vector<nn::LstmLayer> lstm_;
  std::vector<nn::Linear> proj_;
  nn::Linear fc_;
  bool frozen_ = false;
};

// Generalized end-to-end softmax loss over an (N*M) x d embedding block,
// row j*M+i = utterance i of speaker j. Similarity S(j,i,k) = w*cos(e_ji,
// c_k) + b where c_j excludes e_ji itself. Returns a 1x1 graph node.
Var ge2e_loss(const Var& embeddings, int N, int M, const Var& w, const Var& b);

struct AsvTrainLog {
  std::vector<std::pair<int, double>> steps;  // (step index, batch loss)
};

// One optimizer step on a batch drawn deterministically from (seed, step).
double asv_train_step(AsvModel& model, nn::Adam& opt, const std::vector<std::vector<Mat>>& mels_by_speaker,
                      uint64_t seed, int step);
// GE2E loss on a deterministic batch, no parameter updates.
double asv_eval_loss(AsvModel& model, const std::vector<std::vector<Mat>>& mels_by_speaker, uint64_t seed);

// Full pretraining entry point: extracts mels for the training split, trains
// from start_step for cfg.steps total. Throws if model is frozen or the
// corpus has fewer than two speakers / two utterances per speaker.
AsvTrainLog train_asv(AsvModel& model, nn::Adam& opt, const corpus::Corpus& c, const signal::FeatureConfig& fc,
                      uint64_t seed, int start_step = 0);

// Mel windows for every utterance of the selected speakers, padded/cropped to
// cfg.window_frames at training time.
std::vector<std::vector<Mat>> collect_speaker_mels(const corpus::Corpus& c, const std::vector<int>& speaker_indices,
                                                   const signal::FeatureConfig& fc);

}  // namespace dgcvc::asv
