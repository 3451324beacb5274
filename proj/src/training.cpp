#include "dgcvc/training.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

#include "dgcvc/rng.hpp"

namespace dgcvc::train {

void validate_training(TrainingConfig& cfg) {
  if (cfg.lambda_rec < 0.0 || cfg.lambda_class < 0.0)
    throw std::invalid_argument("loss weights must be nonnegative");
  if (cfg.batch_size < 1 || cfg.steps < 0) throw std::invalid_argument("invalid batch size or step count");
  if (cfg.variant != spk::Variant::kDgc) cfg.lambda_class = 0.0;
}

Var reconstruction_loss(const Var& x, const Var& x_prime, const Var& x_dprime, const Var& codes_x,
                        const Var& codes_x_dprime) {
  Var l = ad::add(ad::mse_loss(x, x_prime), ad::mse_loss(x, x_dprime));
  return ad::add(l, ad::mae_loss(codes_x, codes_x_dprime));
}

AuxClassifier::AuxClassifier(int embed_dim, int n_classes, uint64_t seed) : n_classes_(n_classes) {
  if (n_classes < 2) throw std::invalid_argument("classifier needs at least two speakers");
  auto rng = make_rng(seed, "classifier.init");
  fc_ = nn::Linear(embed_dim, n_classes, rng);
}

Var AuxClassifier::logits(const Var& embedding) const { return fc_.forward(embedding); }

nn::ParamList AuxClassifier::params() const {
  nn::ParamList out;
  fc_.collect("classifier.fc", out);
  return out;
}

Var classification_loss(const AuxClassifier& classifier, const Var& embedding, const std::vector<int>& labels) {
  for (int l : labels)
    if (l < 0 || l >= classifier.n_classes())
      throw std::invalid_argument("classification_loss: label " + std::to_string(l) + " out of range [0, " +
                                  std::to_string(classifier.n_classes()) + ")");
  return ad::cross_entropy(classifier.logits(embedding), labels);
}

Var total_loss(const Var& l_rec, const Var& l_class, double lambda_rec, double lambda_class) {
  return ad::add(ad::scale(l_rec, lambda_rec), ad::scale(l_class, lambda_class));
}

double classifier_accuracy(const AuxClassifier& classifier, const Mat& embeddings, const std::vector<int>& labels) {
  if (embeddings.rows != static_cast<int>(labels.size()))
    throw std::invalid_argument("classifier_accuracy: row/label count mismatch");
  ad::NoGradGuard ng;
  Mat logits = classifier.logits(ad::constant(embeddings))->value;
  int hits = 0;
  for (int i = 0; i < logits.rows; ++i) {
    int arg = 0;
    for (int j = 1; j < logits.cols; ++j)
      if (logits(i, j) > logits(i, arg)) arg = j;
    if (arg == labels[i]) ++hits;
  }
  return embeddings.rows == 0 ? 0.0 : static_cast<double>(hits) / embeddings.rows;
}

VcTrainer::VcTrainer(conv::ConversionModel* model, spk::SpeakerEncoder* encoder, AuxClassifier* classifier,
                     const TrainingConfig& tc, const signal::FeatureConfig& fc)
    : model_(model), encoder_(encoder), classifier_(classifier), tc_(tc), fc_(fc), opt_(tc.lr) {
  validate_training(tc_);
  if (tc_.variant == spk::Variant::kDgc && classifier_ == nullptr)
    throw std::invalid_argument("dgc training requires the auxiliary classifier");
  if (tc_.variant != spk::Variant::kDgc && classifier_ != nullptr)
    throw std::invalid_argument("only the dgc variant trains a classifier");
  if (encoder_->variant() != tc_.variant) throw std::invalid_argument("speaker encoder variant mismatch");
}

nn::ParamList VcTrainer::trainable_params() {
  nn::ParamList out = model_->params();
  for (auto& np : encoder_->params()) out.push_back(np);
  if (classifier_)
    for (auto& np : classifier_->params()) out.push_back(np);
  return out;
}

StepLosses VcTrainer::forward_losses(const std::vector<TrainSample>& dataset, std::mt19937_64& rng, bool training,
                                     Var* total_out) {
  if (dataset.empty()) throw std::invalid_argument("vc training: empty dataset");
  const int B = tc_.batch_size;
  const int T = fc_.window_frames;
  const double pad = std::log(fc_.log_floor);

  std::uniform_int_distribution<size_t> pick(0, dataset.size() - 1);
  std::vector<int> labels(B);
  Mat x(T * B, fc_.n_mels, pad);
  for (int b = 0; b < B; ++b) {
    const TrainSample& s = dataset[pick(rng)];
    labels[b] = s.label;
    int start = 0;
    if (s.mel.rows > T) {
      std::uniform_int_distribution<int> d(0, s.mel.rows - T);
      start = d(rng);
    }
    const int copy = std::min(T, s.mel.rows);
    for (int t = 0; t < copy; ++t)
      std::memcpy(x.row_ptr(t * B + b), s.mel.row_ptr(start + t), sizeof(double) * fc_.n_mels);
  }

  // the reference window is the reconstruction target itself
  Var spk_emb = encoder_->embed_batch(x, B, T, training, pad);
  Var xc = ad::constant(x);
  auto rec = model_->reconstruct(xc, spk_emb, B, T, training);
  auto codes2 = model_->encode_content(rec.out.x_dprime, spk_emb, B, T, training);
  Var l_rec = reconstruction_loss(xc, rec.out.x_prime, rec.out.x_dprime, rec.codes.combined, codes2.combined);

  StepLosses out;
  Var total;
  if (classifier_) {
    Var l_cls = classification_loss(*classifier_, spk_emb, labels);
    total = total_loss(l_rec, l_cls, tc_.lambda_rec, tc_.lambda_class);
    out.cls = l_cls->value(0, 0);
  } else {
    total = ad::scale(l_rec, tc_.lambda_rec);
  }
  out.rec = l_rec->value(0, 0);
  out.total = total->value(0, 0);
  if (total_out) *total_out = total;
  return out;
}

StepLosses VcTrainer::step(const std::vector<TrainSample>& dataset, int step_index) {
  auto rng = make_rng(tc_.seed, "vc.batch", static_cast<uint64_t>(step_index));
  auto params = trainable_params();
  opt_.zero_grad(params);
  Var total;
  StepLosses losses = forward_losses(dataset, rng, true, &total);
  ad::backward(total);
  opt_.step(params);
  return losses;
}

StepLosses VcTrainer::eval(const std::vector<TrainSample>& dataset, uint64_t batch_key) {
  ad::NoGradGuard ng;
  auto rng = make_rng(tc_.seed, "vc.eval", batch_key);
  return forward_losses(dataset, rng, false, nullptr);
}

}  // namespace dgcvc::train
