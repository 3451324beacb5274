#include "dgcvc/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "dgcvc/rng.hpp"

namespace fs = std::filesystem;

namespace dgcvc::corpus {

Corpus load_corpus(const std::string& root) {
  if (!fs::exists(root) || !fs::is_directory(root))
    throw std::runtime_error("corpus root does not exist or is not a directory: " + root);
  Corpus c;
  c.root = root;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (!entry.is_directory()) continue;
    Speaker s;
    s.id = entry.path().filename().string();
    for (const auto& f : fs::directory_iterator(entry.path())) {
      if (!f.is_regular_file()) continue;
      if (f.path().extension() == ".wav") {
        std::ifstream probe(f.path(), std::ios::binary);
        if (!probe) throw std::runtime_error("unreadable utterance file: " + f.path().string());
        s.utterances.push_back(f.path().string());
      } else if (f.path().filename() == "meta") {
        std::ifstream meta(f.path());
        std::string line;
        if (std::getline(meta, line) && !line.empty() && (line[0] == 'F' || line[0] == 'M')) s.gender = line[0];
      }
    }
    std::sort(s.utterances.begin(), s.utterances.end());
    if (!s.utterances.empty()) c.speakers.push_back(std::move(s));
  }
  std::sort(c.speakers.begin(), c.speakers.end(), [](const Speaker& a, const Speaker& b) { return a.id < b.id; });
  if (c.speakers.empty()) throw std::runtime_error("corpus root contains no speaker directories with wav files: " + root);
  return c;
}

void make_splits(Corpus& c, int n_train_speakers, uint64_t seed) {
  const int n = static_cast<int>(c.speakers.size());
  if (n_train_speakers < 1) throw std::invalid_argument("make_splits: need at least one training speaker");
  if (n_train_speakers >= n)
    throw std::invalid_argument("make_splits: n_train_speakers (" + std::to_string(n_train_speakers) +
                                ") must leave at least one held-out speaker of " + std::to_string(n));
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  auto rng = make_rng(seed, "corpus.splits");
  std::shuffle(idx.begin(), idx.end(), rng);
  c.train_speakers.assign(idx.begin(), idx.begin() + n_train_speakers);
  c.heldout_speakers.assign(idx.begin() + n_train_speakers, idx.end());
  std::sort(c.train_speakers.begin(), c.train_speakers.end());
  std::sort(c.heldout_speakers.begin(), c.heldout_speakers.end());
  c.has_splits = true;
}

const std::vector<ToySpeakerParams>& toy_speaker_slots() {
  // ordered so the first four cover all four base pitches
  static const std::vector<ToySpeakerParams> slots = {
      {110.0, -6.0, 4.5},  {150.0, -9.0, 5.5},  {200.0, -12.0, 5.0}, {260.0, -6.0, 5.8},
      {110.0, -9.0, 6.0},  {150.0, -6.0, 6.5},  {200.0, -6.0, 4.6},  {260.0, -12.0, 4.4},
      {110.0, -12.0, 5.2}, {150.0, -12.0, 4.8}, {200.0, -9.0, 6.2},  {260.0, -9.0, 5.4},
  };
  return slots;
}

signal::Waveform synth_toy_utterance(const ToySpeakerParams& spk, uint64_t seed, int utt_index) {
  constexpr int kSr = 16000;
  constexpr double kSeconds = 2.0;
  constexpr double kPi = 3.14159265358979323846;
  const int n = static_cast<int>(kSr * kSeconds);

  // the contour stream depends only on (seed, utterance index): every speaker
  // renders the same "sentence"
  auto contour_rng = make_rng(seed, "toy.contour", static_cast<uint64_t>(utt_index));
  std::uniform_real_distribution<double> u01(0.0, 1.0);

  // amplitude envelope: base level plus a few raised-cosine bumps
  const int n_bumps = 3 + static_cast<int>(u01(contour_rng) * 3);
  std::vector<double> centers(n_bumps), widths(n_bumps), heights(n_bumps);
  for (int i = 0; i < n_bumps; ++i) {
    centers[i] = u01(contour_rng) * kSeconds;
    widths[i] = 0.15 + 0.25 * u01(contour_rng);
    heights[i] = 0.4 + 0.6 * u01(contour_rng);
  }
  const double drift_rate = 0.4 + 0.8 * u01(contour_rng);
  const double drift_phase = 2.0 * kPi * u01(contour_rng);
  const double noise_seed_mix = u01(contour_rng);

  auto envelope = [&](double t) {
    double e = 0.25;
    for (int i = 0; i < n_bumps; ++i) {
      const double d = (t - centers[i]) / widths[i];
      if (std::abs(d) < 1.0) e += heights[i] * 0.5 * (1.0 + std::cos(kPi * d));
    }
    return std::min(e, 1.0);
  };

  // shared intonation drift (relative), speaker-specific vibrato
  auto f0_at = [&](double t) {
    const double drift = 0.02 * std::sin(2.0 * kPi * drift_rate * t + drift_phase);
    const double vib = 0.02 * std::sin(2.0 * kPi * spk.vibrato_hz * t);
    return spk.base_f0 * (1.0 + drift + vib);
  };

  const int max_harm = static_cast<int>(std::floor(7600.0 / spk.base_f0));
  std::vector<double> harm_amp(max_harm + 1, 0.0);
  double amp_norm = 0.0;
  for (int k = 1; k <= max_harm; ++k) {
    harm_amp[k] = std::pow(10.0, spk.tilt_db_per_octave * std::log2(static_cast<double>(k)) / 20.0);
    amp_norm += harm_amp[k];
  }

  auto noise_rng = make_rng(seed ^ static_cast<uint64_t>(noise_seed_mix * 1e9), "toy.noise",
                            static_cast<uint64_t>(utt_index));
  std::normal_distribution<double> gauss(0.0, 1.0);

  signal::Waveform w;
  w.sample_rate = kSr;
  w.samples.resize(n);
  double phase = 0.0;
  double lp = 0.0;  // one-pole lowpass for the aspiration noise
  for (int i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / kSr;
    phase += 2.0 * kPi * f0_at(t) / kSr;
    double harm = 0.0;
    for (int k = 1; k <= max_harm; ++k) harm += harm_amp[k] * std::sin(k * phase);
    harm /= amp_norm;
    lp = 0.85 * lp + 0.15 * gauss(noise_rng);
    double s = envelope(t) * (0.75 * harm + 0.03 * lp);
    // 10 ms fades
    const double edge = std::min({1.0, t / 0.01, (kSeconds - t) / 0.01});
    w.samples[i] = s * std::max(edge, 0.0);
  }
  double peak = 0.0;
  for (double s : w.samples) peak = std::max(peak, std::abs(s));
  if (peak > 0.9)
    for (double& s : w.samples) s *= 0.9 / peak;
  return w;
}

Corpus synth_toy_corpus(int n_speakers, int utts_per_speaker, uint64_t seed, const std::string& out_dir) {
  const auto& slots = toy_speaker_slots();
  if (n_speakers < 1 || utts_per_speaker < 1) throw std::invalid_argument("synth_toy_corpus: counts must be positive");
  if (n_speakers > static_cast<int>(slots.size()))
    throw std::invalid_argument("synth_toy_corpus: requested " + std::to_string(n_speakers) +
                                " speakers but only " + std::to_string(slots.size()) + " parameter slots exist");
  fs::create_directories(out_dir);
  for (int s = 0; s < n_speakers; ++s) {
    char id[16];
    std::snprintf(id, sizeof(id), "spk%02d", s);
    const fs::path dir = fs::path(out_dir) / id;
    fs::create_directories(dir);
    std::ofstream meta(dir / "meta");
    meta << (slots[s].base_f0 >= 175.0 ? 'F' : 'M') << "\n";
    for (int u = 0; u < utts_per_speaker; ++u) {
      char name[32];
      std::snprintf(name, sizeof(name), "utt%03d.wav", u);
      signal::save_wav((dir / name).string(), synth_toy_utterance(slots[s], seed, u));
    }
  }
  return load_corpus(out_dir);
}

}  // namespace dgcvc::corpus
