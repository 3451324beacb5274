#include "dgcvc/asv.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <stdexcept>

#include "dgcvc/rng.hpp"

namespace dgcvc::asv {

AsvModel::AsvModel(const AsvConfig& cfg, uint64_t seed) : cfg_(cfg) {
  auto rng = make_rng(seed, "asv.init");
  int in = cfg.input_dim;
  for (int l = 0; l < cfg.layers; ++l) {
    lstm_.emplace_back(in, cfg.hidden, rng);
    proj_.emplace_back(cfg.hidden, cfg.proj, rng);
    in = cfg.proj;
  }
  fc_ = nn::Linear(cfg.proj, cfg.embed_dim, rng);
  ge2e_w = ad::param(Mat(1, 1, cfg.ge2e_w_init));
  ge2e_b = ad::param(Mat(1, 1, cfg.ge2e_b_init));
}

Var AsvModel::dsequence_var(const Var& x, int B, int T) const {
  Var h = x;
  for (size_t l = 0; l < lstm_.size(); ++l) {
    h = lstm_[l].forward(h, B, T);
    h = proj_[l].forward(h);
  }
  return h;
}

Var AsvModel::embed_window_var(const Var& x, int B, int T) const {
  Var d = dsequence_var(x, B, T);
  std::vector<int> last(B);
  for (int b = 0; b < B; ++b) last[b] = (T - 1) * B + b;
  Var final_frames = ad::gather_rows(d, last);
  return ad::l2_normalize_rows(fc_.forward(final_frames));
}

Mat AsvModel::dsequence(const Mat& mel) const {
  if (mel.rows < 1) throw std::invalid_argument("dsequence: empty mel");
  if (mel.cols != cfg_.input_dim) throw std::invalid_argument("dsequence: expected " +
                                                              std::to_string(cfg_.input_dim) + " mel channels");
  ad::NoGradGuard ng;
  return dsequence_var(ad::constant(mel), 1, mel.rows)->value;
}

Mat AsvModel::dvector(const Mat& mel, double pad_value) const {
  if (mel.rows < 1 || mel.cols != cfg_.input_dim) throw std::invalid_argument("dvector: empty or misshaped mel");
  ad::NoGradGuard ng;
  const int W = cfg_.window_frames;
  const int T = mel.rows;

  std::vector<int> starts;
  if (T <= W) {
    starts.push_back(0);
  } else {
    for (int s = 0; s + W <= T; s += cfg_.window_hop) starts.push_back(s);
    if (starts.back() != T - W) starts.push_back(T - W);
  }
  const int B = static_cast<int>(starts.size());
  Mat batch(W * B, cfg_.input_dim, pad_value);
  for (int b = 0; b < B; ++b) {
    const int copy = std::min(W, T - starts[b]);
    for (int t = 0; t < copy; ++t)
      std::memcpy(batch.row_ptr(t * B + b), mel.row_ptr(starts[b] + t), sizeof(double) * cfg_.input_dim);
  }
  Mat embs = embed_window_var(ad::constant(std::move(batch)), B, W)->value;

  Mat out(1, cfg_.embed_dim);
  for (int b = 0; b < B; ++b)
    for (int j = 0; j < cfg_.embed_dim; ++j) out(0, j) += embs(b, j);
  double norm = 0.0;
  for (int j = 0; j < cfg_.embed_dim; ++j) norm += out(0, j) * out(0, j);
  norm = std::max(std::sqrt(norm), 1e-12);
  for (int j = 0; j < cfg_.embed_dim; ++j) out(0, j) /= norm;
  return out;
}

nn::ParamList AsvModel::params() {
  nn::ParamList out;
  for (size_t l = 0; l < lstm_.size(); ++l) {
    lstm_[l].collect("asv.lstm" + std::to_string(l), out);
    proj_[l].collect("asv.proj" + std::to_string(l), out);
  }
  fc_.collect("asv.fc", out);
  out.push_back({"asv.ge2e_w", ge2e_w});
  out.push_back({"asv.ge2e_b", ge2e_b});
  return out;
}

uint64_t AsvModel::checksum() { return nn::param_checksum(params()); }

Var ge2e_loss(const Var& embeddings, int N, int M, const Var& w, const Var& b) {
  if (N < 2 || M < 2) throw std::invalid_argument("ge2e_loss: need N >= 2 speakers and M >= 2 utterances");
  if (embeddings->value.rows != N * M) throw std::invalid_argument("ge2e_loss: embeddings rows != N*M");
  if (w->value(0, 0) <= 0.0) throw std::invalid_argument("ge2e_loss: similarity scale w must be positive");

  Var e = ad::l2_normalize_rows(embeddings);

  Mat p(N, N * M);
  for (int j = 0; j < N; ++j)
    for (int m = 0; m < M; ++m) p(j, j * M + m) = 1.0;
  Var speaker_sums = ad::matmul(ad::constant(std::move(p)), e);  // N x d

  Var centroids = ad::l2_normalize_rows(ad::scale(speaker_sums, 1.0 / M));
  Var cos_all = ad::matmul_nt(e, centroids);  // (N*M) x N

  Mat q(N * M, N);
  for (int j = 0; j < N; ++j)
    for (int m = 0; m < M; ++m) q(j * M + m, j) = 1.0;
  Var own_sums = ad::matmul(ad::constant(q), speaker_sums);  // (N*M) x d
  Var excl = ad::l2_normalize_rows(ad::scale(ad::sub(own_sums, e), 1.0 / (M - 1)));
  Var cos_excl = ad::rowwise_dot(e, excl);  // (N*M) x 1

  Mat mask(N * M, N), inv_mask(N * M, N, 1.0), ones_row(1, N, 1.0);
  for (int j = 0; j < N; ++j)
    for (int m = 0; m < M; ++m) {
      mask(j * M + m, j) = 1.0;
      inv_mask(j * M + m, j) = 0.0;
    }
  Var mask_v = ad::constant(std::move(mask));
  Var cos_fixed = ad::add(ad::mul(cos_all, ad::constant(std::move(inv_mask))),
                          ad::mul(ad::matmul(cos_excl, ad::constant(std::move(ones_row))), mask_v));

  Var sim = ad::add_scalar(ad::mul_scalar(cos_fixed, w), b);
  Var own = ad::row_sum(ad::mul(sim, mask_v));
  return ad::sum_all(ad::sub(ad::logsumexp_rows(sim), own));
}

std::vector<std::vector<Mat>> collect_speaker_mels(const corpus::Corpus& c, const std::vector<int>& speaker_indices,
                                                   const signal::FeatureConfig& fc) {
  std::vector<std::vector<Mat>> out;
  for (int si : speaker_indices) {
    std::vector<Mat> mels;
    for (const auto& path : c.speakers[si].utterances)
      mels.push_back(signal::compute_mel(signal::load_wav(path, fc.sample_rate), fc).frames);
    out.push_back(std::move(mels));
  }
  return out;
}

namespace {

// deterministic GE2E batch for (seed, step): N speakers x M windows, time-major
Mat sample_batch(const std::vector<std::vector<Mat>>& mels, const AsvConfig& cfg, double pad_value, uint64_t seed,
                 uint64_t step, int* n_out, int* m_out) {
  const int n_spk = static_cast<int>(mels.size());
  const int N = std::min(cfg.batch_speakers, n_spk);
  int min_utts = INT32_MAX;
  for (const auto& s : mels) min_utts = std::min(min_utts, static_cast<int>(s.size()));
  const int M = std::min(cfg.batch_utts, min_utts);
  if (N < 2 || M < 2) throw std::invalid_argument("asv batch: need >= 2 speakers with >= 2 utterances each");

  auto rng = make_rng(seed, "asv.batch", step);
  std::vector<int> spk(n_spk);
  std::iota(spk.begin(), spk.end(), 0);
  std::shuffle(spk.begin(), spk.end(), rng);

  const int W = cfg.window_frames;
  const int B = N * M;
  Mat batch(W * B, cfg.input_dim, pad_value);
  for (int j = 0; j < N; ++j) {
    const auto& utts = mels[spk[j]];
    std::vector<int> pick(utts.size());
    std::iota(pick.begin(), pick.end(), 0);
    std::shuffle(pick.begin(), pick.end(), rng);
    for (int m = 0; m < M; ++m) {
      const Mat& mel = utts[pick[m % pick.size()]];
      int start = 0;
      if (mel.rows > W) {
        std::uniform_int_distribution<int> d(0, mel.rows - W);
        start = d(rng);
      }
      const int copy = std::min(W, mel.rows);
      const int col = j * M + m;
      for (int t = 0; t < copy; ++t)
        std::memcpy(batch.row_ptr(t * B + col), mel.row_ptr(start + t), sizeof(double) * cfg.input_dim);
    }
  }
  *n_out = N;
  *m_out = M;
  return batch;
}

}  // namespace

double asv_train_step(AsvModel& model, nn::Adam& opt, const std::vector<std::vector<Mat>>& mels_by_speaker,
                      uint64_t seed, int step) {
  if (model.frozen()) throw std::logic_error("asv_train_step: cannot train a frozen model");
  const AsvConfig& cfg = model.config();
  int N = 0, M = 0;
  Mat batch = sample_batch(mels_by_speaker, cfg, std::log(1e-5), seed, static_cast<uint64_t>(step), &N, &M);
  auto params = model.params();
  opt.zero_grad(params);
  Var emb = model.embed_window_var(ad::constant(std::move(batch)), N * M, cfg.window_frames);
  Var loss = ge2e_loss(emb, N, M, model.ge2e_w, model.ge2e_b);
  ad::backward(loss);
  opt.step(params);
  // scale stays positive after every update
  model.ge2e_w->value(0, 0) = std::max(model.ge2e_w->value(0, 0), 1e-6);
  return loss->value(0, 0);
}

double asv_eval_loss(AsvModel& model, const std::vector<std::vector<Mat>>& mels_by_speaker, uint64_t seed) {
  ad::NoGradGuard ng;
  const AsvConfig& cfg = model.config();
  int N = 0, M = 0;
  Mat batch = sample_batch(mels_by_speaker, cfg, std::log(1e-5), seed, 0, &N, &M);
  Var emb = model.embed_window_var(ad::constant(std::move(batch)), N * M, cfg.window_frames);
  return ge2e_loss(emb, N, M, model.ge2e_w, model.ge2e_b)->value(0, 0);
}

AsvTrainLog train_asv(AsvModel& model, nn::Adam& opt, const corpus::Corpus& c, const signal::FeatureConfig& fc,
                      uint64_t seed, int start_step) {
  if (model.frozen()) throw std::logic_error("train_asv: cannot train a frozen model");
  std::vector<int> train_idx = c.has_splits ? c.train_speakers : std::vector<int>{};
  if (train_idx.empty()) {
    train_idx.resize(c.speakers.size());
    std::iota(train_idx.begin(), train_idx.end(), 0);
  }
  if (train_idx.size() < 2) throw std::invalid_argument("train_asv: need at least two training speakers");
  for (int si : train_idx)
    if (c.speakers[si].utterances.size() < 2)
      throw std::invalid_argument("train_asv: speaker " + c.speakers[si].id + " has fewer than two utterances");

  auto mels = collect_speaker_mels(c, train_idx, fc);
  AsvTrainLog log;
  for (int step = start_step; step < model.config().steps; ++step) {
    const double l = asv_train_step(model, opt, mels, seed, step);
    if (step % 25 == 0 || step == model.config().steps - 1) log.steps.push_back({step, l});
  }
  return log;
}

}  // namespace dgcvc::asv
