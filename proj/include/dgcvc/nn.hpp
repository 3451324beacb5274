#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dgcvc/autodiff.hpp"
#include "dgcvc/rng.hpp"

namespace dgcvc::nn {

using ad::Var;

struct NamedParam {
  std::string name;
  Var p;
};
using ParamList = std::vector<NamedParam>;

Mat uniform_init(int rows, int cols, double bound, std::mt19937_64& rng);
Mat normal_init(int rows, int cols, double sigma, std::mt19937_64& rng);

// FNV-1a over parameter bytes; the frozen-model contract tests compare this.
uint64_t param_checksum(const ParamList& params);

struct Linear {
  Var w, b;
  Linear() = default;
  Linear(int in, int out, std::mt19937_64& rng);
  Var forward(const Var& x) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

struct LstmLayer {
  Var wx, wh, b;
  int hidden = 0;
  LstmLayer() = default;
  LstmLayer(int in, int hidden, std::mt19937_64& rng);
  Var forward(const Var& x, int B, int T, bool reverse = false) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

struct GruLayer {
  Var wx, wh, b;
  int hidden = 0;
  GruLayer() = default;
  GruLayer(int in, int hidden, std::mt19937_64& rng);
  Var forward(const Var& x, int B, int T) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

struct Conv1d {
  Var w, b;
  int kernel = 5;
  Conv1d() = default;
  Conv1d(int cin, int cout, int kernel, std::mt19937_64& rng);
  Var forward(const Var& x, int B, int T) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

struct Conv2dS2 {
  Var w, b;
  int cin = 1;
  Conv2dS2() = default;
  Conv2dS2(int cin, int cout, std::mt19937_64& rng);
  Var forward(const Var& x, int B, int T, int W) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

// Per-channel batch norm; channels are groups of G columns. Running stats are
// plain buffers updated during training forwards and serialized alongside
// the parameters.
struct BatchNorm {
  Var gamma, beta;
  Mat running_mean, running_var;
  int channels = 0;
  BatchNorm() = default;
  explicit BatchNorm(int channels);
  Var forward(const Var& x, int G, bool training);
  void collect(const std::string& prefix, ParamList& out) const;
  // running stats travel in checkpoints under these names
  void collect_buffers(const std::string& prefix, std::vector<std::pair<std::string, Mat*>>& out);
};

class Adam {
 public:
  Adam(double lr = 1e-4, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step(const ParamList& params);
  void zero_grad(const ParamList& params);
  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }
  // moment buffers keyed by parameter name (for checkpoint resume)
  std::map<std::string, Mat>& moments1() { return m_; }
  std::map<std::string, Mat>& moments2() { return v_; }
  int64_t& step_count() { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::map<std::string, Mat> m_, v_;
};

}  // namespace dgcvc::nn
