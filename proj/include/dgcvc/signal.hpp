#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "dgcvc/mat.hpp"

namespace dgcvc::signal {

struct FeatureConfig {
  int sample_rate = 16000;
  int n_fft = 1024;
  int win_length = 1024;
  int hop_length = 256;
  int n_mels = 80;
  double fmin = 0.0;
  double fmax = 8000.0;
  double log_floor = 1e-5;  // magnitude floor applied before the log
  double f0_min = 50.0;
  double f0_max = 600.0;
  double f0_voicing_threshold = 0.3;
  int mcep_order = 25;  // c0..c24
  int griffin_lim_iters = 60;
  int window_frames = 160;
};

struct Waveform {
  std::vector<double> samples;  // in [-1, 1]
  int sample_rate = 16000;
};

// Rows are time frames, columns the 80 mel channels.
struct MelSpectrogram {
  Mat frames;
  int hop_length = 256;
  int n_frames() const { return frames.rows; }
};

struct F0Track {
  std::vector<double> f0_hz;  // 0 where unvoiced
  std::vector<bool> voiced;
};

struct McepSequence {
  Mat coeffs;  // T x order
};

// Triangular mel filterbank (HTK scale), n_mels x (n_fft/2 + 1), peak gain 1.
Mat mel_filterbank(const FeatureConfig& cfg);
// Center frequencies (Hz) of the n_mels filters.
std::vector<double> mel_center_frequencies(const FeatureConfig& cfg);

int frame_count(size_t n_samples, const FeatureConfig& cfg);

MelSpectrogram compute_mel(const Waveform& w, const FeatureConfig& cfg);

enum class WindowMode { kTrain, kEval };
// Crop or pad to exactly cfg.window_frames rows. Train mode picks a uniform
// random start from rng; eval mode starts at frame 0. Pads with log(floor).
Mat fixed_window(const MelSpectrogram& m, const FeatureConfig& cfg, WindowMode mode, std::mt19937_64* rng = nullptr,
                 int frames = -1);

F0Track extract_f0(const Waveform& w, const FeatureConfig& cfg);

McepSequence compute_mcep(const Waveform& w, const FeatureConfig& cfg);

Waveform mel_to_waveform(const MelSpectrogram& m, const FeatureConfig& cfg, int iterations = -1);

// 16-bit PCM mono WAV. Non-16 kHz files are linearly resampled on load.
Waveform load_wav(const std::string& path, int target_rate = 16000);
void save_wav(const std::string& path, const Waveform& w);

}  // namespace dgcvc::signal
