#include "dgcvc/nn.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace dgcvc::nn {

Mat uniform_init(int rows, int cols, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> d(-bound, bound);
  Mat m(rows, cols);
  for (auto& v : m.data) v = d(rng);
  return m;
}

Mat normal_init(int rows, int cols, double sigma, std::mt19937_64& rng) {
  std::normal_distribution<double> d(0.0, sigma);
  Mat m(rows, cols);
  for (auto& v : m.data) v = d(rng);
  return m;
}

uint64_t param_checksum(const ParamList& params) {
  uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const void* data, size_t n) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& np : params) {
    mix(np.name.data(), np.name.size());
    mix(np.p->value.data.data(), np.p->value.size() * sizeof(double));
  }
  return h;
}

Linear::Linear(int in, int out, std::mt19937_64& rng) {
  const double k = 1.0 / std::sqrt(static_cast<double>(in));
  w = ad::param(uniform_init(in, out, k, rng));
  b = ad::param(uniform_init(1, out, k, rng));
}
Var Linear::forward(const Var& x) const { return ad::add_bias(ad::matmul(x, w), b); }
void Linear::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".w", w});
  out.push_back({prefix + ".b", b});
}

LstmLayer::LstmLayer(int in, int h, std::mt19937_64& rng) : hidden(h) {
  const double k = 1.0 / std::sqrt(static_cast<double>(h));
  wx = ad::param(uniform_init(in, 4 * h, k, rng));
  wh = ad::param(uniform_init(h, 4 * h, k, rng));
  b = ad::param(uniform_init(1, 4 * h, k, rng));
}
Var LstmLayer::forward(const Var& x, int B, int T, bool reverse) const {
  return ad::lstm_seq(x, wx, wh, b, B, T, reverse);
}
void LstmLayer::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".wx", wx});
  out.push_back({prefix + ".wh", wh});
  out.push_back({prefix + ".b", b});
}

GruLayer::GruLayer(int in, int h, std::mt19937_64& rng) : hidden(h) {
  const double k = 1.0 / std::sqrt(static_cast<double>(h));
  wx = ad::param(uniform_init(in, 3 * h, k, rng));
  wh = ad::param(uniform_init(h, 3 * h, k, rng));
  b = ad::param(uniform_init(1, 3 * h, k, rng));
}
Var GruLayer::forward(const Var& x, int B, int T) const { return ad::gru_seq(x, wx, wh, b, B, T); }
void GruLayer::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".wx", wx});
  out.push_back({prefix + ".wh", wh});
  out.push_back({prefix + ".b", b});
}

Conv1d::Conv1d(int cin, int cout, int k, std::mt19937_64& rng) : kernel(k) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(cin * k));
  w = ad::param(uniform_init(cout, cin * k, bound, rng));
  b = ad::param(uniform_init(1, cout, bound, rng));
}
Var Conv1d::forward(const Var& x, int B, int T) const { return ad::conv1d_seq(x, w, b, B, T, kernel); }
void Conv1d::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".w", w});
  out.push_back({prefix + ".b", b});
}

Conv2dS2::Conv2dS2(int cin_, int cout, std::mt19937_64& rng) : cin(cin_) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(cin_ * 9));
  w = ad::param(uniform_init(cout, cin_ * 9, bound, rng));
  b = ad::param(uniform_init(1, cout, bound, rng));
}
Var Conv2dS2::forward(const Var& x, int B, int T, int W) const { return ad::conv2d_s2(x, w, b, B, T, W, cin); }
void Conv2dS2::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".w", w});
  out.push_back({prefix + ".b", b});
}

BatchNorm::BatchNorm(int c) : channels(c) {
  gamma = ad::param(Mat(1, c, 1.0));
  beta = ad::param(Mat(1, c, 0.0));
  running_mean = Mat(1, c, 0.0);
  running_var = Mat(1, c, 1.0);
}
Var BatchNorm::forward(const Var& x, int G, bool training) {
  return ad::batchnorm(x, gamma, beta, channels, G, training, &running_mean, &running_var);
}
void BatchNorm::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".gamma", gamma});
  out.push_back({prefix + ".beta", beta});
}
void BatchNorm::collect_buffers(const std::string& prefix, std::vector<std::pair<std::string, Mat*>>& out) {
  out.push_back({prefix + ".running_mean", &running_mean});
  out.push_back({prefix + ".running_var", &running_var});
}

Adam::Adam(double lr, double beta1, double beta2, double eps) : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::zero_grad(const ParamList& params) {
  for (const auto& np : params) {
    np.p->ensure_grad();
    np.p->zero_grad();
  }
}

void Adam::step(const ParamList& params) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (const auto& np : params) {
    Mat& val = np.p->value;
    const Mat& g = np.p->grad;
    if (g.size() != val.size()) continue;  // never touched by backward
    Mat& m = m_[np.name];
    Mat& v = v_[np.name];
    if (m.size() != val.size()) m = Mat(val.rows, val.cols);
    if (v.size() != val.size()) v = Mat(val.rows, val.cols);
    for (size_t i = 0; i < val.size(); ++i) {
      m.data[i] = beta1_ * m.data[i] + (1.0 - beta1_) * g.data[i];
      v.data[i] = beta2_ * v.data[i] + (1.0 - beta2_) * g.data[i] * g.data[i];
      const double mhat = m.data[i] / bc1;
      const double vhat = v.data[i] / bc2;
      val.data[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

}  // namespace dgcvc::nn
