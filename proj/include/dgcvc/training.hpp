#pragma once

#include <vector>

#include "dgcvc/conversion.hpp"
#include "dgcvc/signal.hpp"
#include "dgcvc/speaker_encoder.hpp"

namespace dgcvc::train {

using ad::Var;

struct TrainingConfig {
  double lambda_rec = 1.0;
  double lambda_class = 0.5;
  int steps = 2000;
  int batch_size = 8;
  double lr = 1e-4;
  uint64_t seed = 42;
  spk::Variant variant = spk::Variant::kDgc;
  int checkpoint_every = 500;
};

// lambdas must be nonnegative; classification supervision exists only for the
// dgc variant, so lambda_class is forced to zero everywhere else
void validate_training(TrainingConfig& cfg);

// sum of the two mean-squared reconstruction terms and the mean-absolute
// content-code term (means over all elements)
Var reconstruction_loss(const Var& x, const Var& x_prime, const Var& x_dprime, const Var& codes_x,
                        const Var& codes_x_dprime);

// single fully-connected layer from speaker embedding to speaker logits
class AuxClassifier {
 public:
  AuxClassifier() = default;
  AuxClassifier(int embed_dim, int n_classes, uint64_t seed);
  Var logits(const Var& embedding) const;
  int n_classes() const { return n_classes_; }
  nn::ParamList params() const;

 private:
  nn::Linear fc_;
  int n_classes_ = 0;
};

Var classification_loss(const AuxClassifier& classifier, const Var& embedding, const std::vector<int>& labels);

Var total_loss(const Var& l_rec, const Var& l_class, double lambda_rec, double lambda_class);

double classifier_accuracy(const AuxClassifier& classifier, const Mat& embeddings, const std::vector<int>& labels);

struct TrainSample {
  Mat mel;  // full utterance, rows = frames
  int label = 0;
};

struct StepLosses {
  double rec = 0.0;
  double cls = 0.0;
  double total = 0.0;
};

// Joint optimization of content encoder, decoder, postnet, the gst speaker
// encoder and (dgc) the classifier. The verification model is never updated;
// its features enter the graph as constants.
class VcTrainer {
 public:
  VcTrainer(conv::ConversionModel* model, spk::SpeakerEncoder* encoder, AuxClassifier* classifier,
            const TrainingConfig& tc, const signal::FeatureConfig& fc);

  // one optimizer step on a batch drawn deterministically from (seed, step)
  StepLosses step(const std::vector<TrainSample>& dataset, int step_index);

  // loss evaluation without parameter updates (eval-mode normalization)
  StepLosses eval(const std::vector<TrainSample>& dataset, uint64_t batch_key);

  nn::ParamList trainable_params();
  nn::Adam& optimizer() { return opt_; }

 private:
  StepLosses forward_losses(const std::vector<TrainSample>& dataset, std::mt19937_64& rng, bool training,
                            Var* total_out);
  conv::ConversionModel* model_;
  spk::SpeakerEncoder* encoder_;
  AuxClassifier* classifier_;
  TrainingConfig tc_;
  signal::FeatureConfig fc_;
  nn::Adam opt_;
};

}  // namespace dgcvc::train
