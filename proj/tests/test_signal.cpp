#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include "dgcvc/signal.hpp"
#include "doctest.h"

using namespace dgcvc;
using namespace dgcvc::signal;

namespace {

constexpr double kPi = 3.14159265358979323846;

Waveform sine(double freq, double seconds, double amp = 0.5, int sr = 16000) {
  Waveform w;
  w.sample_rate = sr;
  const size_t n = static_cast<size_t>(seconds * sr);
  w.samples.resize(n);
  for (size_t i = 0; i < n; ++i) w.samples[i] = amp * std::sin(2.0 * kPi * freq * i / sr);
  return w;
}

Waveform sawtooth(double freq, double seconds, double amp = 0.5, int sr = 16000) {
  Waveform w;
  w.sample_rate = sr;
  const size_t n = static_cast<size_t>(seconds * sr);
  w.samples.resize(n);
  for (size_t i = 0; i < n; ++i) {
    const double phase = std::fmod(freq * i / sr, 1.0);
    w.samples[i] = amp * (2.0 * phase - 1.0);
  }
  return w;
}

double median_voiced_f0(const F0Track& t) {
  std::vector<double> v;
  for (size_t i = 0; i < t.f0_hz.size(); ++i)
    if (t.voiced[i]) v.push_back(t.f0_hz[i]);
  REQUIRE(!v.empty());
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

}  // namespace

TEST_CASE("mel of digital silence sits exactly at the log floor") {
  FeatureConfig cfg;
  Waveform w;
  w.samples.assign(16000, 0.0);
  MelSpectrogram m = compute_mel(w, cfg);
  const double floor_val = std::log(cfg.log_floor);
  for (double v : m.frames.data) CHECK(v == floor_val);
}

TEST_CASE("mel frame count follows 1 + floor((len - win)/hop)") {
  FeatureConfig cfg;
  Waveform w;
  w.samples.assign(16384, 0.0);
  CHECK(compute_mel(w, cfg).n_frames() == 61);
  CHECK(frame_count(16384, cfg) == 61);
}

TEST_CASE("mel rejects waveforms shorter than one analysis window") {
  FeatureConfig cfg;
  Waveform w;
  w.samples.assign(1000, 0.1);
  CHECK_THROWS_WITH_AS(compute_mel(w, cfg), doctest::Contains("too short"), std::invalid_argument);
  CHECK_THROWS(compute_mcep(w, cfg));
}

TEST_CASE("440 Hz sine peaks in the mel bin whose center is nearest 440 Hz") {
  FeatureConfig cfg;
  // analytic filter centers: n_mels+2 points equally spaced on the HTK mel
  // axis between fmin and fmax; filter m is centered on interior point m+1
  auto hz2mel = [](double f) { return 2595.0 * std::log10(1.0 + f / 700.0); };
  auto mel2hz = [](double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); };
  const double lo = hz2mel(cfg.fmin), hi = hz2mel(cfg.fmax);
  int expected = -1;
  double best = 1e18;
  for (int m = 0; m < cfg.n_mels; ++m) {
    const double center = mel2hz(lo + (hi - lo) * (m + 1) / (cfg.n_mels + 1));
    if (std::abs(center - 440.0) < best) {
      best = std::abs(center - 440.0);
      expected = m;
    }
  }
  MelSpectrogram m = compute_mel(sine(440.0, 1.0), cfg);
  for (int t = 0; t < m.n_frames(); ++t) {
    const double* row = m.frames.row_ptr(t);
    int argmax = 0;
    for (int j = 1; j < cfg.n_mels; ++j)
      if (row[j] > row[argmax]) argmax = j;
    CHECK(argmax == expected);
  }
}

TEST_CASE("compute_mel is deterministic") {
  FeatureConfig cfg;
  Waveform w = sine(300.0, 0.5);
  MelSpectrogram a = compute_mel(w, cfg);
  MelSpectrogram b = compute_mel(w, cfg);
  CHECK(a.frames.data == b.frames.data);
}

TEST_CASE("fixed_window identity, padding and eval crop") {
  FeatureConfig cfg;
  const double floor_val = std::log(cfg.log_floor);

  MelSpectrogram m;
  m.frames = Mat(160, 80);
  for (size_t i = 0; i < m.frames.size(); ++i) m.frames.data[i] = 0.001 * i;
  Mat w = fixed_window(m, cfg, WindowMode::kEval);
  CHECK(w.rows == 160);
  CHECK(w.cols == 80);
  CHECK(w.data == m.frames.data);

  MelSpectrogram short_m;
  short_m.frames = Mat(100, 80, 1.0);
  Mat padded = fixed_window(short_m, cfg, WindowMode::kEval);
  for (int t = 0; t < 100; ++t)
    for (int j = 0; j < 80; ++j) CHECK(padded(t, j) == 1.0);
  for (int t = 100; t < 160; ++t)
    for (int j = 0; j < 80; ++j) CHECK(padded(t, j) == floor_val);

  MelSpectrogram long_m;
  long_m.frames = Mat(400, 80);
  for (size_t i = 0; i < long_m.frames.size(); ++i) long_m.frames.data[i] = 0.001 * i;
  Mat crop = fixed_window(long_m, cfg, WindowMode::kEval);
  for (int t = 0; t < 160; ++t)
    for (int j = 0; j < 80; ++j) CHECK(crop(t, j) == long_m.frames(t, j));

  std::mt19937_64 rng(3);
  Mat train_crop = fixed_window(long_m, cfg, WindowMode::kTrain, &rng);
  CHECK(train_crop.rows == 160);
}

TEST_CASE("f0 of a 220 Hz sine") {
  FeatureConfig cfg;
  F0Track t = extract_f0(sine(220.0, 1.0), cfg);
  int voiced = 0;
  for (bool v : t.voiced) voiced += v ? 1 : 0;
  CHECK(static_cast<double>(voiced) / t.voiced.size() > 0.9);
  CHECK(std::abs(median_voiced_f0(t) - 220.0) < 3.0);
}

TEST_CASE("f0 of a 110 Hz sawtooth") {
  FeatureConfig cfg;
  F0Track t = extract_f0(sawtooth(110.0, 1.0), cfg);
  CHECK(std::abs(median_voiced_f0(t) - 110.0) < 3.0);
}

TEST_CASE("f0 of silence is all-unvoiced with zero hertz") {
  FeatureConfig cfg;
  Waveform w;
  w.samples.assign(16000, 0.0);
  F0Track t = extract_f0(w, cfg);
  for (size_t i = 0; i < t.voiced.size(); ++i) {
    CHECK_FALSE(t.voiced[i]);
    CHECK(t.f0_hz[i] == 0.0);
  }
}

TEST_CASE("voiced flag and positive f0 always agree") {
  FeatureConfig cfg;
  std::mt19937_64 rng(9);
  std::normal_distribution<double> d(0.0, 0.1);
  Waveform w;
  w.samples.resize(16000);
  for (auto& s : w.samples) s = d(rng);
  F0Track t = extract_f0(w, cfg);
  for (size_t i = 0; i < t.voiced.size(); ++i) {
    CHECK(t.voiced[i] == (t.f0_hz[i] > 0.0));
    if (t.voiced[i]) {
      CHECK(t.f0_hz[i] >= cfg.f0_min);
      CHECK(t.f0_hz[i] <= cfg.f0_max);
    }
  }
}

TEST_CASE("mcep is deterministic, fixed width, and gain moves only c0") {
  FeatureConfig cfg;
  // harmonic-plus-noise signal keeps every mel band above the floor so the
  // gain shift is a pure constant in the log domain
  std::mt19937_64 rng(17);
  std::normal_distribution<double> noise(0.0, 0.01);
  Waveform w = sawtooth(150.0, 0.7, 0.4);
  for (auto& s : w.samples) s += noise(rng);

  McepSequence a = compute_mcep(w, cfg);
  McepSequence b = compute_mcep(w, cfg);
  CHECK(a.coeffs.data == b.coeffs.data);
  CHECK(a.coeffs.cols == 25);

  Waveform half = w;
  for (auto& s : half.samples) s *= 0.5;
  McepSequence h = compute_mcep(half, cfg);
  for (int t = 0; t < a.coeffs.rows; ++t) {
    CHECK(std::abs(a.coeffs(t, 0) - h.coeffs(t, 0)) > 1e-3);
    for (int k = 1; k < 25; ++k) CHECK(a.coeffs(t, k) == doctest::Approx(h.coeffs(t, k)).epsilon(1e-6));
  }
}

TEST_CASE("mel, f0 and mcep frame counts agree") {
  FeatureConfig cfg;
  Waveform w = sine(200.0, 0.83);
  const int tm = compute_mel(w, cfg).n_frames();
  CHECK(static_cast<int>(extract_f0(w, cfg).f0_hz.size()) == tm);
  CHECK(compute_mcep(w, cfg).coeffs.rows == tm);
}

TEST_CASE("griffin-lim round trip: shape, dominant bin, silence") {
  FeatureConfig cfg;
  Waveform w = sine(440.0, 0.6);
  MelSpectrogram m = compute_mel(w, cfg);
  Waveform rec = mel_to_waveform(m, cfg, 30);
  MelSpectrogram m2 = compute_mel(rec, cfg);
  CHECK(m2.n_frames() == m.n_frames());
  for (int t = 0; t < m.n_frames(); ++t) {
    int a1 = 0, a2 = 0;
    for (int j = 1; j < 80; ++j) {
      if (m.frames(t, j) > m.frames(t, a1)) a1 = j;
      if (m2.frames(t, j) > m2.frames(t, a2)) a2 = j;
    }
    CHECK(a1 == a2);
  }

  MelSpectrogram zero;
  zero.frames = Mat(40, 80, std::log(cfg.log_floor));
  Waveform silent = mel_to_waveform(zero, cfg, 10);
  double rms = 0.0;
  for (double s : silent.samples) rms += s * s;
  rms = std::sqrt(rms / silent.samples.size());
  CHECK(rms < 1e-3);
}

TEST_CASE("griffin-lim recovers natural-like spectra with high frame correlation") {
  FeatureConfig cfg;
  std::mt19937_64 rng(23);
  std::normal_distribution<double> noise(0.0, 0.02);
  Waveform w = sawtooth(180.0, 0.7, 0.4);
  for (auto& s : w.samples) s += noise(rng);
  MelSpectrogram m = compute_mel(w, cfg);
  MelSpectrogram m2 = compute_mel(mel_to_waveform(m, cfg), cfg);
  for (int t = 0; t < m.n_frames(); ++t) {
    double ma = 0, mb = 0;
    for (int j = 0; j < 80; ++j) {
      ma += m.frames(t, j);
      mb += m2.frames(t, j);
    }
    ma /= 80;
    mb /= 80;
    double num = 0, da = 0, db = 0;
    for (int j = 0; j < 80; ++j) {
      num += (m.frames(t, j) - ma) * (m2.frames(t, j) - mb);
      da += (m.frames(t, j) - ma) * (m.frames(t, j) - ma);
      db += (m2.frames(t, j) - mb) * (m2.frames(t, j) - mb);
    }
    CHECK(num / std::sqrt(da * db + 1e-12) > 0.9);
  }
}

TEST_CASE("wav io round trip with resampling path") {
  Waveform w = sine(330.0, 0.3, 0.4);
  const std::string path = "/tmp/dgcvc_test_io.wav";
  save_wav(path, w);
  Waveform r = load_wav(path);
  CHECK(r.sample_rate == 16000);
  REQUIRE(r.samples.size() == w.samples.size());
  for (size_t i = 0; i < w.samples.size(); ++i) CHECK(std::abs(r.samples[i] - w.samples[i]) < 1e-4);

  Waveform w8;
  w8.sample_rate = 8000;
  w8.samples.assign(8000, 0.25);
  save_wav(path, w8);
  Waveform up = load_wav(path);
  CHECK(up.sample_rate == 16000);
  CHECK(up.samples.size() > 15000);
  std::remove(path.c_str());
}

TEST_CASE("load_wav reports missing files") { CHECK_THROWS(load_wav("/nonexistent/file.wav")); }
