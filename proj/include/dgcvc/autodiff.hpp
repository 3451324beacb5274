#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "dgcvc/mat.hpp"

// Reverse-mode autodiff over Mat. Graphs are built eagerly; backward() walks
// nodes in reverse creation order (a valid topological order). Recurrent and
// convolutional layers are single fused nodes with hand-derived backward
// passes so a 160-frame LSTM does not allocate thousands of tape entries.
//
// Sequence batches use a time-major layout throughout: a batch of B
// sequences of length T with D features is a (T*B) x D Mat whose row t*B + b
// holds item b at time t. This keeps each timestep a contiguous B x D block
// for the recurrences.

namespace dgcvc::ad {

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
  Mat value;
  Mat grad;  // allocated on first use in backward
  bool requires_grad = false;
  uint64_t id = 0;
  std::vector<Var> parents;
  std::function<void(Node&)> backward_fn;

  Mat& ensure_grad() {
    if (grad.rows != value.rows || grad.cols != value.cols) grad = Mat(value.rows, value.cols);
    return grad;
  }
  void zero_grad() {
    if (!grad.empty()) grad.fill(0.0);
  }
};

// Grad recording is on by default; NoGradGuard disables it for a scope
// (frozen-model inference).
bool grad_enabled();
struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  bool prev;
};

Var constant(Mat v);
Var param(Mat v);

void backward(const Var& loss);

// -- elementwise / linear ---------------------------------------------------
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_bias(const Var& a, const Var& bias);          // bias: 1 x cols, broadcast over rows
Var mul_scalar(const Var& a, const Var& s);           // s: 1x1 learnable
Var add_scalar(const Var& a, const Var& s);           // s: 1x1 learnable
Var matmul(const Var& a, const Var& b);
Var matmul_nt(const Var& a, const Var& b);            // a * b^T
Var tanh_v(const Var& a);
Var sigmoid_v(const Var& a);
Var relu_v(const Var& a);
Var softmax_rows(const Var& a);
Var logsumexp_rows(const Var& a);                     // n x 1
Var row_sum(const Var& a);                            // n x 1
Var sum_all(const Var& a);                            // 1 x 1
Var mean_all(const Var& a);                           // 1 x 1
Var l2_normalize_rows(const Var& a, double eps = 1e-12);
Var rowwise_dot(const Var& a, const Var& b);          // n x 1

// -- losses -----------------------------------------------------------------
Var mse_loss(const Var& a, const Var& b);             // mean over elements of (a-b)^2
Var mae_loss(const Var& a, const Var& b);             // mean over elements of |a-b|
// mean over rows of -log softmax(logits)[label]
Var cross_entropy(const Var& logits, const std::vector<int>& labels);

// -- structure --------------------------------------------------------------
Var concat_cols(const Var& a, const Var& b);
Var slice_cols(const Var& a, int c0, int c1);         // [c0, c1)
Var gather_rows(const Var& a, std::vector<int> idx);  // out row i = a row idx[i]
Var repeat_rows(const Var& a, int f);                 // out row i = a row i/f

// -- fused sequence ops (time-major batches) ---------------------------------
// x: (T*B) x In. wx: In x 4H [i f g o], wh: H x 4H, b: 1 x 4H. Returns (T*B) x H.
Var lstm_seq(const Var& x, const Var& wx, const Var& wh, const Var& b, int B, int T, bool reverse = false);
// x: (T*B) x In. wx: In x 3H [r z n], wh: H x 3H, b: 1 x 3H. Returns (T*B) x H.
Var gru_seq(const Var& x, const Var& wx, const Var& wh, const Var& b, int B, int T);
// 1-D convolution along time, 'same' zero padding, odd kernel K.
// x: (T*B) x Cin, w: Cout x (Cin*K), b: 1 x Cout. Returns (T*B) x Cout.
Var conv1d_seq(const Var& x, const Var& w, const Var& b, int B, int T, int K);
// 3x3 stride-2 pad-1 2-D convolution over a (time x width) map with channel-
// major columns. x: (T*B) x (Cin*W), w: Cout x (Cin*9), b: 1 x Cout.
// Returns (T2*B) x (Cout*W2) with T2 = ceil(T/2), W2 = ceil(W/2).
Var conv2d_s2(const Var& x, const Var& w, const Var& b, int B, int T, int W, int Cin);
// Per-channel batch normalization. Columns are C channel groups of width G;
// statistics pool rows and the G columns of each group. In training mode the
// batch stats are used and running stats updated in place.
Var batchnorm(const Var& x, const Var& gamma, const Var& beta, int C, int G, bool training, Mat* running_mean,
              Mat* running_var, double momentum = 0.1, double eps = 1e-5);

}  // namespace dgcvc::ad
