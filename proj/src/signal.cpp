#include "dgcvc/signal.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "dgcvc/kernels.hpp"

namespace dgcvc::signal {

namespace {

constexpr double kPi = 3.14159265358979323846;

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

std::vector<double> hann_window(int n) {
  std::vector<double> w(n);
  for (int i = 0; i < n; ++i) w[i] = 0.5 - 0.5 * std::cos(2.0 * kPi * i / n);
  return w;
}

// magnitude spectrum of one windowed frame, n_fft/2+1 bins
void frame_magnitude(const double* x, const std::vector<double>& win, int n_fft, std::vector<double>& re,
                     std::vector<double>& im, std::vector<double>& mag) {
  const int n = n_fft;
  for (int i = 0; i < n; ++i) {
    re[i] = x[i] * win[i];
    im[i] = 0.0;
  }
  kernels::fft(re.data(), im.data(), n, false);
  const int bins = n / 2 + 1;
  for (int k = 0; k < bins; ++k) mag[k] = std::sqrt(re[k] * re[k] + im[k] * im[k]);
}

void validate_waveform(const Waveform& w) {
  if (w.samples.empty()) throw std::invalid_argument("waveform is empty");
  for (double s : w.samples)
    if (!std::isfinite(s)) throw std::invalid_argument("waveform contains non-finite samples");
}

}  // namespace

Mat mel_filterbank(const FeatureConfig& cfg) {
  const int bins = cfg.n_fft / 2 + 1;
  const double mel_lo = hz_to_mel(cfg.fmin);
  const double mel_hi = hz_to_mel(cfg.fmax);
  std::vector<double> pts(cfg.n_mels + 2);
  for (int i = 0; i < cfg.n_mels + 2; ++i) pts[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (cfg.n_mels + 1));
  Mat fb(cfg.n_mels, bins);
  for (int m = 0; m < cfg.n_mels; ++m) {
    const double f0 = pts[m], f1 = pts[m + 1], f2 = pts[m + 2];
    for (int k = 0; k < bins; ++k) {
      const double fk = static_cast<double>(k) * cfg.sample_rate / cfg.n_fft;
      double w = 0.0;
      if (fk > f0 && fk < f1)
        w = (fk - f0) / (f1 - f0);
      else if (fk >= f1 && fk < f2)
        w = (f2 - fk) / (f2 - f1);
      fb(m, k) = w;
    }
  }
  return fb;
}

std::vector<double> mel_center_frequencies(const FeatureConfig& cfg) {
  const double mel_lo = hz_to_mel(cfg.fmin);
  const double mel_hi = hz_to_mel(cfg.fmax);
  std::vector<double> centers(cfg.n_mels);
  for (int m = 0; m < cfg.n_mels; ++m)
    centers[m] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * (m + 1) / (cfg.n_mels + 1));
  return centers;
}

int frame_count(size_t n_samples, const FeatureConfig& cfg) {
  if (n_samples < static_cast<size_t>(cfg.win_length)) return 0;
  return 1 + static_cast<int>((n_samples - cfg.win_length) / cfg.hop_length);
}

MelSpectrogram compute_mel(const Waveform& w, const FeatureConfig& cfg) {
  validate_waveform(w);
  if (w.sample_rate != cfg.sample_rate) throw std::invalid_argument("compute_mel: unexpected sample rate");
  const int T = frame_count(w.samples.size(), cfg);
  if (T < 1)
    throw std::invalid_argument("compute_mel: waveform too short (" + std::to_string(w.samples.size()) +
                                " samples < one " + std::to_string(cfg.win_length) + "-sample window)");
  const Mat fb = mel_filterbank(cfg);
  const auto win = hann_window(cfg.win_length);
  const int bins = cfg.n_fft / 2 + 1;

  MelSpectrogram out;
  out.hop_length = cfg.hop_length;
  out.frames = Mat(T, cfg.n_mels);
#pragma omp parallel
  {
    std::vector<double> re(cfg.n_fft), im(cfg.n_fft), mag(bins);
#pragma omp for schedule(static)
    for (int t = 0; t < T; ++t) {
      frame_magnitude(w.samples.data() + static_cast<size_t>(t) * cfg.hop_length, win, cfg.n_fft, re, im, mag);
      double* row = out.frames.row_ptr(t);
      for (int m = 0; m < cfg.n_mels; ++m) {
        double e = 0.0;
        const double* f = fb.row_ptr(m);
        for (int k = 0; k < bins; ++k) e += f[k] * mag[k];
        row[m] = std::log(std::max(e, cfg.log_floor));
      }
    }
  }
  return out;
}

Mat fixed_window(const MelSpectrogram& m, const FeatureConfig& cfg, WindowMode mode, std::mt19937_64* rng,
                 int frames) {
  const int len = frames > 0 ? frames : cfg.window_frames;
  if (len <= 0) throw std::invalid_argument("fixed_window: length must be positive");
  const int T = m.n_frames();
  const double floor_val = std::log(cfg.log_floor);
  Mat out(len, cfg.n_mels, floor_val);
  int start = 0;
  if (mode == WindowMode::kTrain && T > len) {
    if (!rng) throw std::invalid_argument("fixed_window: train mode needs an rng");
    std::uniform_int_distribution<int> d(0, T - len);
    start = d(*rng);
  }
  const int copy = std::min(len, T);
  for (int t = 0; t < copy; ++t)
    std::memcpy(out.row_ptr(t), m.frames.row_ptr(start + t), sizeof(double) * cfg.n_mels);
  return out;
}

F0Track extract_f0(const Waveform& w, const FeatureConfig& cfg) {
  validate_waveform(w);
  const int T = frame_count(w.samples.size(), cfg);
  F0Track track;
  track.f0_hz.assign(std::max(T, 0), 0.0);
  track.voiced.assign(std::max(T, 0), false);
  if (T < 1) return track;  // degenerate input: all-unvoiced

  const int win = cfg.win_length;
  const int lag_min = std::max(2, static_cast<int>(std::ceil(cfg.sample_rate / cfg.f0_max)));
  const int lag_max = std::min(win - 2, static_cast<int>(std::floor(cfg.sample_rate / cfg.f0_min)));

#pragma omp parallel
  {
    std::vector<double> nac(lag_max + 1, 0.0);
    std::vector<double> prefix_sq(win + 1);
#pragma omp for schedule(static)
    for (int t = 0; t < T; ++t) {
      const double* x = w.samples.data() + static_cast<size_t>(t) * cfg.hop_length;
      prefix_sq[0] = 0.0;
      for (int i = 0; i < win; ++i) prefix_sq[i + 1] = prefix_sq[i] + x[i] * x[i];
      if (prefix_sq[win] < 1e-12) continue;  // silence

      // normalized autocorrelation over the in-frame overlap
      for (int lag = lag_min; lag <= lag_max; ++lag) {
        const int n = win - lag;
        double num = 0.0;
        for (int i = 0; i < n; ++i) num += x[i] * x[i + lag];
        const double e1 = prefix_sq[n];
        const double e2 = prefix_sq[win] - prefix_sq[lag];
        nac[lag] = (e1 > 0.0 && e2 > 0.0) ? num / std::sqrt(e1 * e2) : 0.0;
      }

      double best = 0.0;
      for (int lag = lag_min; lag <= lag_max; ++lag) best = std::max(best, nac[lag]);
      if (best < cfg.f0_voicing_threshold) continue;

      // smallest-lag local maximum close to the global peak; avoids locking
      // onto period multiples for strongly periodic signals
      int pick = -1;
      for (int lag = lag_min; lag <= lag_max; ++lag) {
        const double l = (lag > lag_min) ? nac[lag - 1] : -2.0;
        const double r = (lag < lag_max) ? nac[lag + 1] : -2.0;
        if (nac[lag] >= l && nac[lag] >= r && nac[lag] >= 0.9 * best) {
          pick = lag;
          break;
        }
      }
      if (pick < 0) continue;

      double lag_hat = pick;
      if (pick > lag_min && pick < lag_max) {
        const double a = nac[pick - 1], b = nac[pick], c = nac[pick + 1];
        const double denom = a - 2.0 * b + c;
        if (std::abs(denom) > 1e-12) lag_hat += 0.5 * (a - c) / denom;
      }
      double f0 = cfg.sample_rate / lag_hat;
      f0 = std::clamp(f0, cfg.f0_min, cfg.f0_max);
      track.f0_hz[t] = f0;
      track.voiced[t] = true;
    }
  }
  return track;
}

McepSequence compute_mcep(const Waveform& w, const FeatureConfig& cfg) {
  validate_waveform(w);
  const int T = frame_count(w.samples.size(), cfg);
  if (T < 1) throw std::invalid_argument("compute_mcep: waveform too short");
  const Mat fb = mel_filterbank(cfg);
  const auto win = hann_window(cfg.win_length);
  const int bins = cfg.n_fft / 2 + 1;
  const int M = cfg.n_mels;
  const int order = cfg.mcep_order;

  // orthonormal DCT-II of the log mel energies; a pure gain change shifts all
  // log energies by a constant and therefore moves only c0
  Mat dct(order, M);
  for (int k = 0; k < order; ++k) {
    const double alpha = (k == 0) ? std::sqrt(1.0 / M) : std::sqrt(2.0 / M);
    for (int m = 0; m < M; ++m) dct(k, m) = alpha * std::cos(kPi * k * (2 * m + 1) / (2.0 * M));
  }

  McepSequence seq;
  seq.coeffs = Mat(T, order);
#pragma omp parallel
  {
    std::vector<double> re(cfg.n_fft), im(cfg.n_fft), mag(bins), loge(M);
#pragma omp for schedule(static)
    for (int t = 0; t < T; ++t) {
      frame_magnitude(w.samples.data() + static_cast<size_t>(t) * cfg.hop_length, win, cfg.n_fft, re, im, mag);
      for (int m = 0; m < M; ++m) {
        double e = 0.0;
        const double* f = fb.row_ptr(m);
        for (int k = 0; k < bins; ++k) e += f[k] * mag[k];
        loge[m] = std::log(std::max(e, 1e-10));
      }
      double* row = seq.coeffs.row_ptr(t);
      for (int k = 0; k < order; ++k) {
        double s = 0.0;
        for (int m = 0; m < M; ++m) s += dct(k, m) * loge[m];
        row[k] = s;
      }
    }
  }
  return seq;
}

Waveform mel_to_waveform(const MelSpectrogram& m, const FeatureConfig& cfg, int iterations) {
  const int iters = iterations > 0 ? iterations : cfg.griffin_lim_iters;
  const int T = m.n_frames();
  if (T < 1) throw std::invalid_argument("mel_to_waveform: empty mel");
  const int bins = cfg.n_fft / 2 + 1;
  const Mat fb = mel_filterbank(cfg);

  // mel -> linear magnitude: nonnegative least squares per frame via
  // multiplicative updates, seeded with the scaled transposed filterbank
  std::vector<double> colsum(bins, 0.0);
  for (int mm = 0; mm < cfg.n_mels; ++mm)
    for (int k = 0; k < bins; ++k) colsum[k] += fb(mm, k);
  Mat target(T, bins);
#pragma omp parallel
  {
    std::vector<double> mel_lin(cfg.n_mels), proj(cfg.n_mels), back(bins), num(bins);
#pragma omp for schedule(static)
    for (int t = 0; t < T; ++t) {
      const double* mel_row = m.frames.row_ptr(t);
      for (int mm = 0; mm < cfg.n_mels; ++mm) mel_lin[mm] = std::exp(mel_row[mm]);
      double* s = target.row_ptr(t);
      for (int k = 0; k < bins; ++k) {
        double v = 0.0;
        for (int mm = 0; mm < cfg.n_mels; ++mm) v += fb(mm, k) * mel_lin[mm];
        s[k] = std::max(v / std::max(colsum[k], 1e-8), 1e-10);
      }
      for (int k = 0; k < bins; ++k) {
        double v = 0.0;
        for (int mm = 0; mm < cfg.n_mels; ++mm) v += fb(mm, k) * mel_lin[mm];
        num[k] = v;
      }
      for (int iter = 0; iter < 30; ++iter) {
        for (int mm = 0; mm < cfg.n_mels; ++mm) {
          double v = 0.0;
          const double* f = fb.row_ptr(mm);
          for (int k = 0; k < bins; ++k) v += f[k] * s[k];
          proj[mm] = v;
        }
        for (int k = 0; k < bins; ++k) back[k] = 0.0;
        for (int mm = 0; mm < cfg.n_mels; ++mm) {
          const double* f = fb.row_ptr(mm);
          for (int k = 0; k < bins; ++k) back[k] += f[k] * proj[mm];
        }
        for (int k = 0; k < bins; ++k) s[k] *= num[k] / std::max(back[k], 1e-12);
      }
    }
  }

  const auto win = hann_window(cfg.win_length);
  const size_t out_len = static_cast<size_t>(cfg.win_length) + static_cast<size_t>(T - 1) * cfg.hop_length;

  // window-square overlap normalization
  std::vector<double> norm(out_len, 0.0);
  for (int t = 0; t < T; ++t)
    for (int i = 0; i < cfg.win_length; ++i) norm[static_cast<size_t>(t) * cfg.hop_length + i] += win[i] * win[i];

  Mat phase_re(T, bins, 1.0), phase_im(T, bins, 0.0);
  std::vector<double> x(out_len, 0.0);

  auto reconstruct = [&]() {
    std::fill(x.begin(), x.end(), 0.0);
    std::vector<double> re(cfg.n_fft), im(cfg.n_fft);
    for (int t = 0; t < T; ++t) {
      std::fill(re.begin(), re.end(), 0.0);
      std::fill(im.begin(), im.end(), 0.0);
      for (int k = 0; k < bins; ++k) {
        const double mr = target(t, k) * phase_re(t, k);
        const double mi = target(t, k) * phase_im(t, k);
        re[k] = mr;
        im[k] = mi;
        if (k > 0 && k < cfg.n_fft / 2) {  // hermitian mirror
          re[cfg.n_fft - k] = mr;
          im[cfg.n_fft - k] = -mi;
        }
      }
      kernels::fft(re.data(), im.data(), cfg.n_fft, true);
      double* xp = x.data() + static_cast<size_t>(t) * cfg.hop_length;
      for (int i = 0; i < cfg.win_length; ++i) xp[i] += re[i] * win[i];
    }
    for (size_t i = 0; i < out_len; ++i) x[i] /= std::max(norm[i], 1e-8);
  };

  reconstruct();
  for (int it = 0; it < iters; ++it) {
#pragma omp parallel
    {
      std::vector<double> re(cfg.n_fft), im(cfg.n_fft);
#pragma omp for schedule(static)
      for (int t = 0; t < T; ++t) {
        const double* xp = x.data() + static_cast<size_t>(t) * cfg.hop_length;
        for (int i = 0; i < cfg.n_fft; ++i) {
          re[i] = xp[i] * win[i];
          im[i] = 0.0;
        }
        kernels::fft(re.data(), im.data(), cfg.n_fft, false);
        for (int k = 0; k < bins; ++k) {
          const double mag = std::sqrt(re[k] * re[k] + im[k] * im[k]);
          if (mag > 1e-12) {
            phase_re(t, k) = re[k] / mag;
            phase_im(t, k) = im[k] / mag;
          } else {
            phase_re(t, k) = 1.0;
            phase_im(t, k) = 0.0;
          }
        }
      }
    }
    reconstruct();
  }

  Waveform w;
  w.sample_rate = cfg.sample_rate;
  w.samples = std::move(x);
  double peak = 0.0;
  for (double s : w.samples) peak = std::max(peak, std::abs(s));
  if (peak > 1.0)
    for (double& s : w.samples) s /= peak;
  return w;
}

// ---------------------------------------------------------------------------
// WAV io
// ---------------------------------------------------------------------------

namespace {
uint32_t read_u32(std::istream& s) {
  unsigned char b[4];
  s.read(reinterpret_cast<char*>(b), 4);
  return b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<uint32_t>(b[3]) << 24);
}
uint16_t read_u16(std::istream& s) {
  unsigned char b[2];
  s.read(reinterpret_cast<char*>(b), 2);
  return static_cast<uint16_t>(b[0] | (b[1] << 8));
}
void write_u32(std::ostream& s, uint32_t v) {
  char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff), static_cast<char>((v >> 16) & 0xff),
               static_cast<char>((v >> 24) & 0xff)};
  s.write(b, 4);
}
void write_u16(std::ostream& s, uint16_t v) {
  char b[2] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff)};
  s.write(b, 2);
}
}  // namespace

Waveform load_wav(const std::string& path, int target_rate) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open wav file: " + path);
  char tag[5] = {0};
  f.read(tag, 4);
  if (std::string(tag) != "RIFF") throw std::runtime_error("not a RIFF file: " + path);
  read_u32(f);
  f.read(tag, 4);
  if (std::string(tag) != "WAVE") throw std::runtime_error("not a WAVE file: " + path);

  uint16_t channels = 0, bits = 0, format = 0;
  uint32_t rate = 0;
  std::vector<int16_t> pcm;
  while (f && !f.eof()) {
    f.read(tag, 4);
    if (!f) break;
    const uint32_t size = read_u32(f);
    const std::string id(tag, 4);
    if (id == "fmt ") {
      format = read_u16(f);
      channels = read_u16(f);
      rate = read_u32(f);
      read_u32(f);
      read_u16(f);
      bits = read_u16(f);
      if (size > 16) f.seekg(size - 16, std::ios::cur);
    } else if (id == "data") {
      pcm.resize(size / 2);
      f.read(reinterpret_cast<char*>(pcm.data()), size);
      break;
    } else {
      f.seekg(size + (size & 1), std::ios::cur);
    }
  }
  if (format != 1 || bits != 16) throw std::runtime_error("unsupported wav encoding (want 16-bit PCM): " + path);
  if (channels != 1) throw std::runtime_error("unsupported channel count (want mono): " + path);
  if (pcm.empty()) throw std::runtime_error("wav file has no samples: " + path);

  Waveform w;
  w.sample_rate = static_cast<int>(rate);
  w.samples.resize(pcm.size());
  for (size_t i = 0; i < pcm.size(); ++i) w.samples[i] = pcm[i] / 32768.0;

  if (w.sample_rate != target_rate) {
    const double ratio = static_cast<double>(w.sample_rate) / target_rate;
    const size_t n_out = static_cast<size_t>(std::floor((w.samples.size() - 1) / ratio)) + 1;
    std::vector<double> out(n_out);
    for (size_t i = 0; i < n_out; ++i) {
      const double pos = i * ratio;
      const size_t i0 = static_cast<size_t>(pos);
      const size_t i1 = std::min(i0 + 1, w.samples.size() - 1);
      const double frac = pos - i0;
      out[i] = w.samples[i0] * (1.0 - frac) + w.samples[i1] * frac;
    }
    w.samples = std::move(out);
    w.sample_rate = target_rate;
  }
  return w;
}

void save_wav(const std::string& path, const Waveform& w) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write wav file: " + path);
  const uint32_t data_size = static_cast<uint32_t>(w.samples.size() * 2);
  f.write("RIFF", 4);
  write_u32(f, 36 + data_size);
  f.write("WAVE", 4);
  f.write("fmt ", 4);
  write_u32(f, 16);
  write_u16(f, 1);
  write_u16(f, 1);
  write_u32(f, static_cast<uint32_t>(w.sample_rate));
  write_u32(f, static_cast<uint32_t>(w.sample_rate * 2));
  write_u16(f, 2);
  write_u16(f, 16);
  f.write("data", 4);
  write_u32(f, data_size);
  for (double s : w.samples) {
    const double clamped = std::clamp(s, -1.0, 1.0);
    const int16_t q = static_cast<int16_t>(std::lround(clamped * 32767.0));
    char b[2] = {static_cast<char>(q & 0xff), static_cast<char>((q >> 8) & 0xff)};
    f.write(b, 2);
  }
}

}  // namespace dgcvc::signal
