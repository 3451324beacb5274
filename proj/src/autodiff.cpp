#include "dgcvc/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>
#include <unordered_set>

#include "dgcvc/kernels.hpp"

namespace dgcvc::ad {

namespace {

bool g_grad_enabled = true;
uint64_t g_next_id = 0;

Var make_node(Mat value, std::vector<Var> parents, std::function<void(Node&)> bw) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->id = ++g_next_id;
  bool any = false;
  for (const auto& p : parents)
    if (p && p->requires_grad) any = true;
  if (g_grad_enabled && any) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backward_fn = std::move(bw);
  }
  return n;
}

// += accumulation into a parent grad
void acc(Node& p, const Mat& delta) {
  Mat& g = p.ensure_grad();
  const size_t n = g.size();
  double* gp = g.data.data();
  const double* dp = delta.data.data();
  for (size_t i = 0; i < n; ++i) gp[i] += dp[i];
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (!a->value.same_shape(b->value))
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + a->value.shape_str() + " vs " +
                                b->value.shape_str());
}

}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev; }

Var constant(Mat v) {
  auto n = std::make_shared<Node>();
  n->value = std::move(v);
  n->id = ++g_next_id;
  return n;
}

Var param(Mat v) {
  auto n = std::make_shared<Node>();
  n->value = std::move(v);
  n->id = ++g_next_id;
  n->requires_grad = true;
  return n;
}

void backward(const Var& loss) {
  if (loss->value.rows != 1 || loss->value.cols != 1) throw std::invalid_argument("backward: loss must be 1x1");
  // collect reachable grad-requiring nodes
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<Node*> stack{loss.get()};
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    if (!n->requires_grad || !seen.insert(n).second) continue;
    order.push_back(n);
    for (const auto& p : n->parents) stack.push_back(p.get());
  }
  // creation order is a topological order: parents precede children
  std::sort(order.begin(), order.end(), [](Node* a, Node* b) { return a->id > b->id; });
  for (Node* n : order) n->ensure_grad();
  loss->grad(0, 0) = 1.0;
  for (Node* n : order)
    if (n->backward_fn) n->backward_fn(*n);
}

// ---------------------------------------------------------------------------
// elementwise / linear
// ---------------------------------------------------------------------------

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Mat out = a->value;
  const double* bp = b->value.data.data();
  for (size_t i = 0; i < out.size(); ++i) out.data[i] += bp[i];
  return make_node(std::move(out), {a, b}, [](Node& self) {
    if (self.parents[0]->requires_grad) acc(*self.parents[0], self.grad);
    if (self.parents[1]->requires_grad) acc(*self.parents[1], self.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Mat out = a->value;
  const double* bp = b->value.data.data();
  for (size_t i = 0; i < out.size(); ++i) out.data[i] -= bp[i];
  return make_node(std::move(out), {a, b}, [](Node& self) {
    if (self.parents[0]->requires_grad) acc(*self.parents[0], self.grad);
    if (self.parents[1]->requires_grad) {
      Mat& g = self.parents[1]->ensure_grad();
      for (size_t i = 0; i < g.size(); ++i) g.data[i] -= self.grad.data[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Mat out = a->value;
  const double* bp = b->value.data.data();
  for (size_t i = 0; i < out.size(); ++i) out.data[i] *= bp[i];
  return make_node(std::move(out), {a, b}, [](Node& self) {
    const Mat& av = self.parents[0]->value;
    const Mat& bv = self.parents[1]->value;
    if (self.parents[0]->requires_grad) {
      Mat& g = self.parents[0]->ensure_grad();
      for (size_t i = 0; i < g.size(); ++i) g.data[i] += self.grad.data[i] * bv.data[i];
    }
    if (self.parents[1]->requires_grad) {
      Mat& g = self.parents[1]->ensure_grad();
      for (size_t i = 0; i < g.size(); ++i) g.data[i] += self.grad.data[i] * av.data[i];
    }
  });
}

Var scale(const Var& a, double s) {
  Mat out = a->value;
  for (double& v : out.data) v *= s;
  return make_node(std::move(out), {a}, [s](Node& self) {
    Mat& g = self.parents[0]->ensure_grad();
    for (size_t i = 0; i < g.size(); ++i) g.data[i] += s * self.grad.data[i];
  });
}

Var add_bias(const Var& a, const Var& bias) {
  if (bias->value.rows != 1 || bias->value.cols != a->value.cols)
    throw std::invalid_argument("add_bias: bias must be 1x" + std::to_string(a->value.cols));
  Mat out = a->value;
  const double* bp = bias->value.data.data();
  for (int i = 0; i < out.rows; ++i) {
    double* r = out.row_ptr(i);
    for (int j = 0; j < out.cols; ++j) r[j] += bp[j];
  }
  return make_node(std::move(out), {a, bias}, [](Node& self) {
    if (self.parents[0]->requires_grad) acc(*self.parents[0], self.grad);
    if (self.parents[1]->requires_grad) {
      Mat& g = self.parents[1]->ensure_grad();
      for (int i = 0; i < self.grad.rows; ++i) {
        const double* r = self.grad.row_ptr(i);
        for (int j = 0; j < self.grad.cols; ++j) g.data[j] += r[j];
      }
    }
  });
}

Var mul_scalar(const Var& a, const Var& s) {
  if (s->value.rows != 1 || s->value.cols != 1) throw std::invalid_argument("mul_scalar: s must be 1x1");
  const double sv = s->value(0, 0);
  Mat out = a->value;
  for (double& v : out.data) v *= sv;
  return make_node(std::move(out), {a, s}, [sv](Node& self) {
    const Mat& av = self.parents[0]->value;
    if (self.parents[0]->requires_grad) {
      Mat& g = self.parents[0]->ensure_grad();
      for (size_t i = 0; i < g.size(); ++i) g.data[i] += sv * self.grad.data[i];
    }
    if (self.parents[1]->requires_grad) {
      double d = 0.0;
      for (size_t i = 0; i < av.size(); ++i) d += self.grad.data[i] * av.data[i];
      self.parents[1]->ensure_grad().data[0] += d;
    }
  });
}

Var add_scalar(const Var& a, const Var& s) {
  if (s->value.rows != 1 || s->value.cols != 1) throw std::invalid_argument("add_scalar: s must be 1x1");
  const double sv = s->value(0, 0);
  Mat out = a->value;
  for (double& v : out.data) v += sv;
  return make_node(std::move(out), {a, s}, [](Node& self) {
    if (self.parents[0]->requires_grad) acc(*self.parents[0], self.grad);
    if (self.parents[1]->requires_grad) {
      double d = 0.0;
      for (size_t i = 0; i < self.grad.size(); ++i) d += self.grad.data[i];
      self.parents[1]->ensure_grad().data[0] += d;
    }
  });
}

Var matmul(const Var& a, const Var& b) {
  Mat out = kernels::matmul(a->value, b->value);
  return make_node(std::move(out), {a, b}, [](Node& self) {
    Node& a = *self.parents[0];
    Node& b = *self.parents[1];
    if (a.requires_grad) acc(a, kernels::matmul_nt(self.grad, b.value));
    if (b.requires_grad) acc(b, kernels::matmul_tn(a.value, self.grad));
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  Mat out = kernels::matmul_nt(a->value, b->value);
  return make_node(std::move(out), {a, b}, [](Node& self) {
    Node& a = *self.parents[0];
    Node& b = *self.parents[1];
    if (a.requires_grad) acc(a, kernels::matmul(self.grad, b.value));
    if (b.requires_grad) acc(b, kernels::matmul_tn(self.grad, a.value));
  });
}

namespace {
template <typename F, typename DF>
Var unary_elementwise(const Var& a, F f, DF df_from_out) {
  Mat out = a->value;
  for (double& v : out.data) v = f(v);
  Mat saved = out;
  return make_node(std::move(out), {a}, [saved = std::move(saved), df_from_out](Node& self) {
    Mat& g = self.parents[0]->ensure_grad();
    for (size_t i = 0; i < g.size(); ++i) g.data[i] += self.grad.data[i] * df_from_out(saved.data[i]);
  });
}
}  // namespace

Var tanh_v(const Var& a) {
  return unary_elementwise(a, [](double x) { return std::tanh(x); }, [](double y) { return 1.0 - y * y; });
}

Var sigmoid_v(const Var& a) {
  return unary_elementwise(a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
                           [](double y) { return y * (1.0 - y); });
}

Var relu_v(const Var& a) {
  return unary_elementwise(a, [](double x) { return x > 0.0 ? x : 0.0; },
                           [](double y) { return y > 0.0 ? 1.0 : 0.0; });
}

Var softmax_rows(const Var& a) {
  Mat out = a->value;
  for (int i = 0; i < out.rows; ++i) {
    double* r = out.row_ptr(i);
    double mx = r[0];
    for (int j = 1; j < out.cols; ++j) mx = std::max(mx, r[j]);
    double s = 0.0;
    for (int j = 0; j < out.cols; ++j) {
      r[j] = std::exp(r[j] - mx);
      s += r[j];
    }
    for (int j = 0; j < out.cols; ++j) r[j] /= s;
  }
  Mat saved = out;
  return make_node(std::move(out), {a}, [saved = std::move(saved)](Node& self) {
    Mat& g = self.parents[0]->ensure_grad();
    for (int i = 0; i < saved.rows; ++i) {
      const double* y = saved.row_ptr(i);
      const double* gy = self.grad.row_ptr(i);
      double dot = 0.0;
      for (int j = 0; j < saved.cols; ++j) dot += gy[j] * y[j];
      double* gx = g.row_ptr(i);
      for (int j = 0; j < saved.cols; ++j) gx[j] += y[j] * (gy[j] - dot);
    }
  });
}

Var logsumexp_rows(const Var& a) {
  Mat out(a->value.rows, 1);
  Mat soft = a->value;
  for (int i = 0; i < soft.rows; ++i) {
    double* r = soft.row_ptr(i);
    double mx = r[0];
    for (int j = 1; j < soft.cols; ++j) mx = std::max(mx, r[j]);
    double s = 0.0;
    for (int j = 0; j < soft.cols; ++j) {
      r[j] = std::exp(r[j] - mx);
      s += r[j];
    }
    out(i, 0) = mx + std::log(s);
    for (int j = 0; j < soft.cols; ++j) r[j] /= s;
  }
  return make_node(std::move(out), {a}, [soft = std::move(soft)](Node& self) {
    Mat& g = self.parents[0]->ensure_grad();
    for (int i = 0; i < soft.rows; ++i) {
      const double gy = self.grad(i, 0);
      const double* p = soft.row_ptr(i);
      double* gx = g.row_ptr(i);
      for (int j = 0; j < soft.cols; ++j) gx[j] += gy * p[j];
    }
  });
}

Var row_sum(const Var& a) {
  Mat out(a->value.rows, 1);
  for (int i = 0; i < a->value.rows; ++i) {
    const double* r = a->value.row_ptr(i);
    double s = 0.0;
    for (int j = 0; j < a->value.cols; ++j) s += r[j];
    out(i, 0) = s;
  }
  return make_node(std::move(out), {a}, [](Node& self) {
    Mat& g = self.parents[0]->ensure_grad();
    for (int i = 0; i < g.rows; ++i) {
      const double gy = self.grad(i, 0);
      double* gx = g.row_ptr(i);
      for (int j = 0; j < g.cols; ++j) gx[j] += gy;
    }
  });
}

Var sum_all(const Var& a) {
  double s = 0.0;
  for (double v : a->value.data) s += v;
  Mat out(1, 1);
  out(0, 0) = s;
  return make_node(std::move(out), {a}, [](Node& self) {
    Mat& g = self.parents[0]->ensure_grad();
    const double gy = self.grad(0, 0);
    for (double& v : g.data) v += gy;
  });
}

Var mean_all(const Var& a) {
  const double n = static_cast<double>(a->value.size());
  double s = 0.0;
  for (double v : a->value.data) s += v;
  Mat out(1, 1);
  out(0, 0) = s / n;
  return make_node(std::move(out), {a}, [n](Node& self) {
    Mat& g = self.parents[0]->ensure_grad();
    const double gy = self.grad(0, 0) / n;
    for (double& v : g.data) v += gy;
  });
}

Var l2_normalize_rows(const Var& a, double eps) {
  Mat out = a->value;
  Mat denom(out.rows, 1);
  for (int i = 0; i < out.rows; ++i) {
    double* r = out.row_ptr(i);
    double s = 0.0;
    for (int j = 0; j < out.cols; ++j) s += r[j] * r[j];
    const double d = std::max(std::sqrt(s), eps);
    denom(i, 0) = d;
    for (int j = 0; j < out.cols; ++j) r[j] /= d;
  }
  Mat saved = out;
  return make_node(std::move(out), {a},
                   [saved = std::move(saved), denom = std::move(denom), eps](Node& self) {
                     Mat& g = self.parents[0]->ensure_grad();
                     for (int i = 0; i < saved.rows; ++i) {
                       const double* y = saved.row_ptr(i);
                       const double* gy = self.grad.row_ptr(i);
                       double* gx = g.row_ptr(i);
                       const double d = denom(i, 0);
                       if (d <= eps) {
                         for (int j = 0; j < saved.cols; ++j) gx[j] += gy[j] / d;
                         continue;
                       }
                       double dot = 0.0;
                       for (int j = 0; j < saved.cols; ++j) dot += y[j] * gy[j];
                       for (int j = 0; j < saved.cols; ++j) gx[j] += (gy[j] - y[j] * dot) / d;
                     }
                   });
}

Var rowwise_dot(const Var& a, const Var& b) {
  require_same_shape(a, b, "rowwise_dot");
  Mat out(a->value.rows, 1);
  for (int i = 0; i < out.rows; ++i) {
    const double* ra = a->value.row_ptr(i);
    const double* rb = b->value.row_ptr(i);
    double s = 0.0;
    for (int j = 0; j < a->value.cols; ++j) s += ra[j] * rb[j];
    out(i, 0) = s;
  }
  return make_node(std::move(out), {a, b}, [](Node& self) {
    const Mat& av = self.parents[0]->value;
    const Mat& bv = self.parents[1]->value;
    for (int k = 0; k < 2; ++k) {
      Node& p = *self.parents[k];
      if (!p.requires_grad) continue;
      const Mat& other = (k == 0) ? bv : av;
      Mat& g = p.ensure_grad();
      for (int i = 0; i < g.rows; ++i) {
        const double gy = self.grad(i, 0);
        const double* o = other.row_ptr(i);
        double* gx = g.row_ptr(i);
        for (int j = 0; j < g.cols; ++j) gx[j] += gy * o[j];
      }
    }
  });
}

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

Var mse_loss(const Var& a, const Var& b) {
  require_same_shape(a, b, "mse_loss");
  const double n = static_cast<double>(a->value.size());
  double s = 0.0;
  for (size_t i = 0; i < a->value.size(); ++i) {
    const double d = a->value.data[i] - b->value.data[i];
    s += d * d;
  }
  Mat out(1, 1);
  out(0, 0) = s / n;
  return make_node(std::move(out), {a, b}, [n](Node& self) {
    const Mat& av = self.parents[0]->value;
    const Mat& bv = self.parents[1]->value;
    const double gy = self.grad(0, 0);
    if (self.parents[0]->requires_grad) {
      Mat& g = self.parents[0]->ensure_grad();
      for (size_t i = 0; i < g.size(); ++i) g.data[i] += gy * 2.0 * (av.data[i] - bv.data[i]) / n;
    }
    if (self.parents[1]->requires_grad) {
      Mat& g = self.parents[1]->ensure_grad();
      for (size_t i = 0; i < g.size(); ++i) g.data[i] -= gy * 2.0 * (av.data[i] - bv.data[i]) / n;
    }
  });
}

Var mae_loss(const Var& a, const Var& b) {
  require_same_shape(a, b, "mae_loss");
  const double n = static_cast<double>(a->value.size());
  double s = 0.0;
  for (size_t i = 0; i < a->value.size(); ++i) s += std::abs(a->value.data[i] - b->value.data[i]);
  Mat out(1, 1);
  out(0, 0) = s / n;
  return make_node(std::move(out), {a, b}, [n](Node& self) {
    const Mat& av = self.parents[0]->value;
    const Mat& bv = self.parents[1]->value;
    const double gy = self.grad(0, 0);
    for (int k = 0; k < 2; ++k) {
      Node& p = *self.parents[k];
      if (!p.requires_grad) continue;
      const double sgn_mul = (k == 0) ? 1.0 : -1.0;
      Mat& g = p.ensure_grad();
      for (size_t i = 0; i < g.size(); ++i) {
        const double d = av.data[i] - bv.data[i];
        const double sgn = (d > 0.0) ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
        g.data[i] += gy * sgn_mul * sgn / n;
      }
    }
  });
}

Var cross_entropy(const Var& logits, const std::vector<int>& labels) {
  const int n = logits->value.rows;
  const int k = logits->value.cols;
  if (static_cast<int>(labels.size()) != n) throw std::invalid_argument("cross_entropy: label count mismatch");
  for (int lbl : labels)
    if (lbl < 0 || lbl >= k) throw std::invalid_argument("cross_entropy: label out of range");
  Mat soft = logits->value;
  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    double* r = soft.row_ptr(i);
    double mx = r[0];
    for (int j = 1; j < k; ++j) mx = std::max(mx, r[j]);
    double s = 0.0;
    for (int j = 0; j < k; ++j) {
      r[j] = std::exp(r[j] - mx);
      s += r[j];
    }
    for (int j = 0; j < k; ++j) r[j] /= s;
    loss -= std::log(std::max(r[labels[i]], 1e-300));
  }
  Mat out(1, 1);
  out(0, 0) = loss / n;
  return make_node(std::move(out), {logits}, [soft = std::move(soft), labels, n](Node& self) {
    Mat& g = self.parents[0]->ensure_grad();
    const double gy = self.grad(0, 0) / n;
    for (int i = 0; i < soft.rows; ++i) {
      const double* p = soft.row_ptr(i);
      double* gx = g.row_ptr(i);
      for (int j = 0; j < soft.cols; ++j) gx[j] += gy * (p[j] - (j == labels[i] ? 1.0 : 0.0));
    }
  });
}

// ---------------------------------------------------------------------------
// structure
// ---------------------------------------------------------------------------

Var concat_cols(const Var& a, const Var& b) {
  if (a->value.rows != b->value.rows) throw std::invalid_argument("concat_cols: row mismatch");
  Mat out(a->value.rows, a->value.cols + b->value.cols);
  for (int i = 0; i < out.rows; ++i) {
    std::memcpy(out.row_ptr(i), a->value.row_ptr(i), sizeof(double) * a->value.cols);
    std::memcpy(out.row_ptr(i) + a->value.cols, b->value.row_ptr(i), sizeof(double) * b->value.cols);
  }
  return make_node(std::move(out), {a, b}, [](Node& self) {
    Node& a = *self.parents[0];
    Node& b = *self.parents[1];
    const int ca = a.value.cols;
    const int cb = b.value.cols;
    if (a.requires_grad) {
      Mat& g = a.ensure_grad();
      for (int i = 0; i < g.rows; ++i) {
        const double* gr = self.grad.row_ptr(i);
        double* gx = g.row_ptr(i);
        for (int j = 0; j < ca; ++j) gx[j] += gr[j];
      }
    }
    if (b.requires_grad) {
      Mat& g = b.ensure_grad();
      for (int i = 0; i < g.rows; ++i) {
        const double* gr = self.grad.row_ptr(i) + ca;
        double* gx = g.row_ptr(i);
        for (int j = 0; j < cb; ++j) gx[j] += gr[j];
      }
    }
  });
}

Var slice_cols(const Var& a, int c0, int c1) {
  if (c0 < 0 || c1 > a->value.cols || c0 >= c1) throw std::invalid_argument("slice_cols: bad range");
  Mat out(a->value.rows, c1 - c0);
  for (int i = 0; i < out.rows; ++i)
    std::memcpy(out.row_ptr(i), a->value.row_ptr(i) + c0, sizeof(double) * (c1 - c0));
  return make_node(std::move(out), {a}, [c0](Node& self) {
    Mat& g = self.parents[0]->ensure_grad();
    for (int i = 0; i < self.grad.rows; ++i) {
      const double* gr = self.grad.row_ptr(i);
      double* gx = g.row_ptr(i) + c0;
      for (int j = 0; j < self.grad.cols; ++j) gx[j] += gr[j];
    }
  });
}

Var gather_rows(const Var& a, std::vector<int> idx) {
  for (int i : idx)
    if (i < 0 || i >= a->value.rows) throw std::invalid_argument("gather_rows: index out of range");
  Mat out(static_cast<int>(idx.size()), a->value.cols);
  for (int i = 0; i < out.rows; ++i)
    std::memcpy(out.row_ptr(i), a->value.row_ptr(idx[i]), sizeof(double) * out.cols);
  return make_node(std::move(out), {a}, [idx = std::move(idx)](Node& self) {
    Mat& g = self.parents[0]->ensure_grad();
    for (int i = 0; i < self.grad.rows; ++i) {
      const double* gr = self.grad.row_ptr(i);
      double* gx = g.row_ptr(idx[i]);
      for (int j = 0; j < self.grad.cols; ++j) gx[j] += gr[j];
    }
  });
}

Var repeat_rows(const Var& a, int f) {
  if (f < 1) throw std::invalid_argument("repeat_rows: f must be >= 1");
  Mat out(a->value.rows * f, a->value.cols);
  for (int i = 0; i < out.rows; ++i) std::memcpy(out.row_ptr(i), a->value.row_ptr(i / f), sizeof(double) * out.cols);
  return make_node(std::move(out), {a}, [f](Node& self) {
    Mat& g = self.parents[0]->ensure_grad();
#pragma omp parallel for schedule(static)
    for (int i = 0; i < g.rows; ++i) {
      double* gx = g.row_ptr(i);
      for (int r = i * f; r < (i + 1) * f; ++r) {
        const double* gr = self.grad.row_ptr(r);
        for (int j = 0; j < g.cols; ++j) gx[j] += gr[j];
      }
    }
  });
}

// ---------------------------------------------------------------------------
// fused sequence ops
// ---------------------------------------------------------------------------

namespace {
// time order for a possibly reversed scan
std::vector<int> time_order(int T, bool reverse) {
  std::vector<int> o(T);
  for (int t = 0; t < T; ++t) o[t] = reverse ? T - 1 - t : t;
  return o;
}
}  // namespace

Var lstm_seq(const Var& x, const Var& wx, const Var& wh, const Var& b, int B, int T, bool reverse) {
  const int in = x->value.cols;
  const int h4 = wx->value.cols;
  const int H = h4 / 4;
  if (x->value.rows != T * B) throw std::invalid_argument("lstm_seq: x rows != T*B");
  if (wx->value.rows != in || wh->value.rows != H || wh->value.cols != h4 || b->value.cols != h4)
    throw std::invalid_argument("lstm_seq: weight shape mismatch");

  // input contributions for every timestep in one matmul
  Mat xw = kernels::matmul(x->value, wx->value);
  for (int i = 0; i < xw.rows; ++i) {
    double* r = xw.row_ptr(i);
    const double* bp = b->value.row_ptr(0);
    for (int j = 0; j < h4; ++j) r[j] += bp[j];
  }

  Mat act(T * B, h4);    // activated gates [i f g o]
  Mat cmat(T * B, H);    // cell states
  Mat tanhc(T * B, H);   // tanh(c)
  Mat hprev(T * B, H);   // h_{t-1} per row
  Mat y(T * B, H);

  Mat h(B, H), c(B, H);
  const auto order = time_order(T, reverse);
  for (int step = 0; step < T; ++step) {
    const int t = order[step];
    const int off = t * B;
    // gate pre-activations: xw block + h * wh
    Mat hw = kernels::matmul(h, wh->value);
    for (int bi = 0; bi < B; ++bi) {
      const double* xr = xw.row_ptr(off + bi);
      const double* hr = hw.row_ptr(bi);
      double* ar = act.row_ptr(off + bi);
      double* cr = c.row_ptr(bi);
      double* hrow = h.row_ptr(bi);
      std::memcpy(hprev.row_ptr(off + bi), hrow, sizeof(double) * H);
      for (int j = 0; j < H; ++j) {
        const double ai = xr[j] + hr[j];
        const double af = xr[H + j] + hr[H + j];
        const double ag = xr[2 * H + j] + hr[2 * H + j];
        const double ao = xr[3 * H + j] + hr[3 * H + j];
        const double gi = 1.0 / (1.0 + std::exp(-ai));
        const double gf = 1.0 / (1.0 + std::exp(-af));
        const double gg = std::tanh(ag);
        const double go = 1.0 / (1.0 + std::exp(-ao));
        ar[j] = gi;
        ar[H + j] = gf;
        ar[2 * H + j] = gg;
        ar[3 * H + j] = go;
        const double cn = gf * cr[j] + gi * gg;
        cr[j] = cn;
        const double tc = std::tanh(cn);
        cmat(off + bi, j) = cn;
        tanhc(off + bi, j) = tc;
        hrow[j] = go * tc;
      }
      std::memcpy(y.row_ptr(off + bi), h.row_ptr(bi), sizeof(double) * H);
    }
  }

  return make_node(
      std::move(y), {x, wx, wh, b},
      [act = std::move(act), cmat = std::move(cmat), tanhc = std::move(tanhc), hprev = std::move(hprev), B, T, H, h4,
       reverse](Node& self) {
        Node& xn = *self.parents[0];
        Node& wxn = *self.parents[1];
        Node& whn = *self.parents[2];
        Node& bn = *self.parents[3];
        Mat da(T * B, h4);
        Mat dh(B, H), dc(B, H);
        const auto order = time_order(T, reverse);
        for (int step = T - 1; step >= 0; --step) {
          const int t = order[step];
          const int off = t * B;
          const int prev_off = (step > 0) ? order[step - 1] * B : -1;
          for (int bi = 0; bi < B; ++bi) {
            const double* ar = act.row_ptr(off + bi);
            const double* gy = self.grad.row_ptr(off + bi);
            double* dhr = dh.row_ptr(bi);
            double* dcr = dc.row_ptr(bi);
            double* dar = da.row_ptr(off + bi);
            for (int j = 0; j < H; ++j) {
              const double gi = ar[j], gf = ar[H + j], gg = ar[2 * H + j], go = ar[3 * H + j];
              const double tc = tanhc(off + bi, j);
              const double d_h = dhr[j] + gy[j];
              const double d_o = d_h * tc;
              double d_c = dcr[j] + d_h * go * (1.0 - tc * tc);
              const double cprev = (prev_off >= 0) ? cmat(prev_off + bi, j) : 0.0;
              const double d_i = d_c * gg;
              const double d_g = d_c * gi;
              const double d_f = d_c * cprev;
              dar[j] = d_i * gi * (1.0 - gi);
              dar[H + j] = d_f * gf * (1.0 - gf);
              dar[2 * H + j] = d_g * (1.0 - gg * gg);
              dar[3 * H + j] = d_o * go * (1.0 - go);
              dcr[j] = d_c * gf;
            }
          }
          // dh_{t-1} = da_t * wh^T
          Mat dat(B, h4);
          for (int bi = 0; bi < B; ++bi) std::memcpy(dat.row_ptr(bi), da.row_ptr(off + bi), sizeof(double) * h4);
          Mat dhp = kernels::matmul_nt(dat, whn.value);
          dh = std::move(dhp);
        }
        if (xn.requires_grad) acc(xn, kernels::matmul_nt(da, wxn.value));
        if (wxn.requires_grad) acc(wxn, kernels::matmul_tn(xn.value, da));
        if (whn.requires_grad) acc(whn, kernels::matmul_tn(hprev, da));
        if (bn.requires_grad) {
          Mat cs(1, h4);
          kernels::col_sum(da.data.data(), cs.data.data(), T * B, h4);
          acc(bn, cs);
        }
      });
}

Var gru_seq(const Var& x, const Var& wx, const Var& wh, const Var& b, int B, int T) {
  const int in = x->value.cols;
  const int h3 = wx->value.cols;
  const int H = h3 / 3;
  if (x->value.rows != T * B) throw std::invalid_argument("gru_seq: x rows != T*B");
  if (wx->value.rows != in || wh->value.rows != H || wh->value.cols != h3 || b->value.cols != h3)
    throw std::invalid_argument("gru_seq: weight shape mismatch");

  Mat xw = kernels::matmul(x->value, wx->value);
  for (int i = 0; i < xw.rows; ++i) {
    double* r = xw.row_ptr(i);
    const double* bp = b->value.row_ptr(0);
    for (int j = 0; j < h3; ++j) r[j] += bp[j];
  }

  Mat rzn(T * B, h3);   // activated r, z, n
  Mat hun(T * B, H);    // h_{t-1} * U_n before gating by r
  Mat hprev(T * B, H);
  Mat y(T * B, H);
  Mat h(B, H);
  for (int t = 0; t < T; ++t) {
    const int off = t * B;
    Mat hw = kernels::matmul(h, wh->value);
    for (int bi = 0; bi < B; ++bi) {
      const double* xr = xw.row_ptr(off + bi);
      const double* hr = hw.row_ptr(bi);
      double* out_rzn = rzn.row_ptr(off + bi);
      double* hrow = h.row_ptr(bi);
      std::memcpy(hprev.row_ptr(off + bi), hrow, sizeof(double) * H);
      for (int j = 0; j < H; ++j) {
        const double r_g = 1.0 / (1.0 + std::exp(-(xr[j] + hr[j])));
        const double z_g = 1.0 / (1.0 + std::exp(-(xr[H + j] + hr[H + j])));
        const double hu = hr[2 * H + j];
        const double n_g = std::tanh(xr[2 * H + j] + r_g * hu);
        out_rzn[j] = r_g;
        out_rzn[H + j] = z_g;
        out_rzn[2 * H + j] = n_g;
        hun(off + bi, j) = hu;
        hrow[j] = (1.0 - z_g) * n_g + z_g * hrow[j];
      }
      std::memcpy(y.row_ptr(off + bi), h.row_ptr(bi), sizeof(double) * H);
    }
  }

  return make_node(
      std::move(y), {x, wx, wh, b},
      [rzn = std::move(rzn), hun = std::move(hun), hprev = std::move(hprev), B, T, H, h3](Node& self) {
        Node& xn = *self.parents[0];
        Node& wxn = *self.parents[1];
        Node& whn = *self.parents[2];
        Node& bn = *self.parents[3];
        Mat dax(T * B, h3);  // grads wrt x-side pre-activations [r z n]
        Mat dau(T * B, h3);  // grads wrt h-side pre-activations [r z r.n]
        Mat dh(B, H);
        for (int t = T - 1; t >= 0; --t) {
          const int off = t * B;
          for (int bi = 0; bi < B; ++bi) {
            const double* a = rzn.row_ptr(off + bi);
            const double* gy = self.grad.row_ptr(off + bi);
            const double* hp = hprev.row_ptr(off + bi);
            double* dhr = dh.row_ptr(bi);
            double* dxr = dax.row_ptr(off + bi);
            double* dur = dau.row_ptr(off + bi);
            for (int j = 0; j < H; ++j) {
              const double r_g = a[j], z_g = a[H + j], n_g = a[2 * H + j];
              const double d_h = dhr[j] + gy[j];
              const double d_n = d_h * (1.0 - z_g);
              const double d_z = d_h * (hp[j] - n_g);
              const double d_an = d_n * (1.0 - n_g * n_g);
              const double d_r = d_an * hun(off + bi, j);
              const double d_ar = d_r * r_g * (1.0 - r_g);
              const double d_az = d_z * z_g * (1.0 - z_g);
              dxr[j] = d_ar;
              dxr[H + j] = d_az;
              dxr[2 * H + j] = d_an;
              dur[j] = d_ar;
              dur[H + j] = d_az;
              dur[2 * H + j] = d_an * r_g;
              dhr[j] = d_h * z_g;  // direct path; matmul part added below
            }
          }
          Mat dut(B, h3);
          for (int bi = 0; bi < B; ++bi) std::memcpy(dut.row_ptr(bi), dau.row_ptr(off + bi), sizeof(double) * h3);
          Mat dhp = kernels::matmul_nt(dut, whn.value);
          for (int bi = 0; bi < B; ++bi) {
            double* dhr = dh.row_ptr(bi);
            const double* add = dhp.row_ptr(bi);
            for (int j = 0; j < H; ++j) dhr[j] += add[j];
          }
        }
        if (xn.requires_grad) acc(xn, kernels::matmul_nt(dax, wxn.value));
        if (wxn.requires_grad) acc(wxn, kernels::matmul_tn(xn.value, dax));
        if (whn.requires_grad) acc(whn, kernels::matmul_tn(hprev, dau));
        if (bn.requires_grad) {
          Mat cs(1, h3);
          kernels::col_sum(dax.data.data(), cs.data.data(), T * B, h3);
          acc(bn, cs);
        }
      });
}

Var conv1d_seq(const Var& x, const Var& w, const Var& b, int B, int T, int K) {
  const int cin = x->value.cols;
  const int cout = w->value.rows;
  if (K % 2 == 0) throw std::invalid_argument("conv1d_seq: kernel must be odd");
  if (x->value.rows != T * B) throw std::invalid_argument("conv1d_seq: x rows != T*B");
  if (w->value.cols != cin * K) throw std::invalid_argument("conv1d_seq: weight cols != Cin*K");
  const int pad = K / 2;

  Mat col(T * B, cin * K);
#pragma omp parallel for schedule(static)
  for (int t = 0; t < T; ++t) {
    for (int bi = 0; bi < B; ++bi) {
      double* cr = col.row_ptr(t * B + bi);
      for (int dt = 0; dt < K; ++dt) {
        const int ts = t + dt - pad;
        if (ts < 0 || ts >= T) continue;
        const double* xr = x->value.row_ptr(ts * B + bi);
        for (int ci = 0; ci < cin; ++ci) cr[ci * K + dt] = xr[ci];
      }
    }
  }
  Mat y = kernels::matmul_nt(col, w->value);
  for (int i = 0; i < y.rows; ++i) {
    double* r = y.row_ptr(i);
    const double* bp = b->value.row_ptr(0);
    for (int j = 0; j < cout; ++j) r[j] += bp[j];
  }

  return make_node(std::move(y), {x, w, b}, [col = std::move(col), B, T, K, cin, cout, pad](Node& self) {
    Node& xn = *self.parents[0];
    Node& wn = *self.parents[1];
    Node& bn = *self.parents[2];
    if (wn.requires_grad) acc(wn, kernels::matmul_tn(self.grad, col));
    if (bn.requires_grad) {
      Mat cs(1, cout);
      kernels::col_sum(self.grad.data.data(), cs.data.data(), T * B, cout);
      acc(bn, cs);
    }
    if (xn.requires_grad) {
      Mat gcol = kernels::matmul(self.grad, wn.value);
      Mat& gx = xn.ensure_grad();
#pragma omp parallel for schedule(static)
      for (int bi = 0; bi < B; ++bi) {
        for (int t = 0; t < T; ++t) {
          const double* cr = gcol.row_ptr(t * B + bi);
          for (int dt = 0; dt < K; ++dt) {
            const int ts = t + dt - pad;
            if (ts < 0 || ts >= T) continue;
            double* xr = gx.row_ptr(ts * B + bi);
            for (int ci = 0; ci < cin; ++ci) xr[ci] += cr[ci * K + dt];
          }
        }
      }
    }
  });
}

Var conv2d_s2(const Var& x, const Var& w, const Var& b, int B, int T, int W, int Cin) {
  const int cout = w->value.rows;
  if (x->value.rows != T * B || x->value.cols != Cin * W)
    throw std::invalid_argument("conv2d_s2: input shape mismatch");
  if (w->value.cols != Cin * 9) throw std::invalid_argument("conv2d_s2: weight cols != Cin*9");
  const int T2 = (T + 1) / 2;
  const int W2 = (W + 1) / 2;
  const int R = T2 * B * W2;

  Mat col(R, Cin * 9);
#pragma omp parallel for schedule(static)
  for (int t2 = 0; t2 < T2; ++t2) {
    for (int bi = 0; bi < B; ++bi) {
      for (int w2 = 0; w2 < W2; ++w2) {
        double* cr = col.row_ptr((t2 * B + bi) * W2 + w2);
        for (int kt = 0; kt < 3; ++kt) {
          const int ti = 2 * t2 + kt - 1;
          if (ti < 0 || ti >= T) continue;
          const double* xr = x->value.row_ptr(ti * B + bi);
          for (int kw = 0; kw < 3; ++kw) {
            const int wi = 2 * w2 + kw - 1;
            if (wi < 0 || wi >= W) continue;
            for (int ci = 0; ci < Cin; ++ci) cr[ci * 9 + kt * 3 + kw] = xr[ci * W + wi];
          }
        }
      }
    }
  }
  Mat yflat = kernels::matmul_nt(col, w->value);  // R x Cout
  Mat y(T2 * B, cout * W2);
#pragma omp parallel for schedule(static)
  for (int r = 0; r < T2 * B; ++r) {
    double* yr = y.row_ptr(r);
    const double* bp = b->value.row_ptr(0);
    for (int w2 = 0; w2 < W2; ++w2) {
      const double* fr = yflat.row_ptr(r * W2 + w2);
      for (int co = 0; co < cout; ++co) yr[co * W2 + w2] = fr[co] + bp[co];
    }
  }

  return make_node(std::move(y), {x, w, b}, [col = std::move(col), B, T, W, Cin, cout, T2, W2, R](Node& self) {
    Node& xn = *self.parents[0];
    Node& wn = *self.parents[1];
    Node& bn = *self.parents[2];
    // un-permute output grad to R x Cout
    Mat gflat(R, cout);
#pragma omp parallel for schedule(static)
    for (int r = 0; r < T2 * B; ++r) {
      const double* gr = self.grad.row_ptr(r);
      for (int w2 = 0; w2 < W2; ++w2) {
        double* fr = gflat.row_ptr(r * W2 + w2);
        for (int co = 0; co < cout; ++co) fr[co] = gr[co * W2 + w2];
      }
    }
    if (wn.requires_grad) acc(wn, kernels::matmul_tn(gflat, col));
    if (bn.requires_grad) {
      Mat cs(1, cout);
      kernels::col_sum(gflat.data.data(), cs.data.data(), R, cout);
      acc(bn, cs);
    }
    if (xn.requires_grad) {
      Mat gcol = kernels::matmul(gflat, wn.value);
      Mat& gx = xn.ensure_grad();
#pragma omp parallel for schedule(static)
      for (int bi = 0; bi < B; ++bi) {
        for (int t2 = 0; t2 < T2; ++t2) {
          for (int w2 = 0; w2 < W2; ++w2) {
            const double* cr = gcol.row_ptr((t2 * B + bi) * W2 + w2);
            for (int kt = 0; kt < 3; ++kt) {
              const int ti = 2 * t2 + kt - 1;
              if (ti < 0 || ti >= T) continue;
              double* xr = gx.row_ptr(ti * B + bi);
              for (int kw = 0; kw < 3; ++kw) {
                const int wi = 2 * w2 + kw - 1;
                if (wi < 0 || wi >= W) continue;
                for (int ci = 0; ci < Cin; ++ci) xr[ci * W + wi] += cr[ci * 9 + kt * 3 + kw];
              }
            }
          }
        }
      }
    }
  });
}

Var batchnorm(const Var& x, const Var& gamma, const Var& beta, int C, int G, bool training, Mat* running_mean,
              Mat* running_var, double momentum, double eps) {
  if (x->value.cols != C * G) throw std::invalid_argument("batchnorm: cols != C*G");
  if (gamma->value.cols != C || beta->value.cols != C) throw std::invalid_argument("batchnorm: affine shape");
  const int rows = x->value.rows;
  const double n = static_cast<double>(rows) * G;

  Mat mean(1, C), invstd(1, C);
  if (training) {
#pragma omp parallel for schedule(static)
    for (int c = 0; c < C; ++c) {
      double s = 0.0;
      for (int i = 0; i < rows; ++i) {
        const double* r = x->value.row_ptr(i) + c * G;
        for (int g = 0; g < G; ++g) s += r[g];
      }
      const double mu = s / n;
      double v = 0.0;
      for (int i = 0; i < rows; ++i) {
        const double* r = x->value.row_ptr(i) + c * G;
        for (int g = 0; g < G; ++g) {
          const double d = r[g] - mu;
          v += d * d;
        }
      }
      mean(0, c) = mu;
      invstd(0, c) = 1.0 / std::sqrt(v / n + eps);
      if (running_mean && running_var) {
        (*running_mean)(0, c) = (1.0 - momentum) * (*running_mean)(0, c) + momentum * mu;
        (*running_var)(0, c) = (1.0 - momentum) * (*running_var)(0, c) + momentum * (v / n);
      }
    }
  } else {
    if (!running_mean || !running_var) throw std::invalid_argument("batchnorm: eval mode needs running stats");
    for (int c = 0; c < C; ++c) {
      mean(0, c) = (*running_mean)(0, c);
      invstd(0, c) = 1.0 / std::sqrt((*running_var)(0, c) + eps);
    }
  }

  Mat xhat(rows, C * G);
  Mat y(rows, C * G);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < rows; ++i) {
    const double* xr = x->value.row_ptr(i);
    double* hr = xhat.row_ptr(i);
    double* yr = y.row_ptr(i);
    for (int c = 0; c < C; ++c) {
      const double mu = mean(0, c), is = invstd(0, c);
      const double ga = gamma->value(0, c), be = beta->value(0, c);
      for (int g = 0; g < G; ++g) {
        const double h = (xr[c * G + g] - mu) * is;
        hr[c * G + g] = h;
        yr[c * G + g] = ga * h + be;
      }
    }
  }

  return make_node(std::move(y), {x, gamma, beta},
                   [xhat = std::move(xhat), invstd = std::move(invstd), C, G, training, n](Node& self) {
                     Node& xn = *self.parents[0];
                     Node& gn = *self.parents[1];
                     Node& bn = *self.parents[2];
                     const int rows = xhat.rows;
                     Mat sum_g(1, C), sum_gx(1, C);
#pragma omp parallel for schedule(static)
                     for (int c = 0; c < C; ++c) {
                       double sg = 0.0, sgx = 0.0;
                       for (int i = 0; i < rows; ++i) {
                         const double* gr = self.grad.row_ptr(i) + c * G;
                         const double* hr = xhat.row_ptr(i) + c * G;
                         for (int g = 0; g < G; ++g) {
                           sg += gr[g];
                           sgx += gr[g] * hr[g];
                         }
                       }
                       sum_g(0, c) = sg;
                       sum_gx(0, c) = sgx;
                     }
                     if (gn.requires_grad) acc(gn, sum_gx);
                     if (bn.requires_grad) acc(bn, sum_g);
                     if (xn.requires_grad) {
                       Mat& gx = xn.ensure_grad();
#pragma omp parallel for schedule(static)
                       for (int i = 0; i < rows; ++i) {
                         const double* gr = self.grad.row_ptr(i);
                         const double* hr = xhat.row_ptr(i);
                         double* gxr = gx.row_ptr(i);
                         for (int c = 0; c < C; ++c) {
                           const double k = gn.value(0, c) * invstd(0, c);
                           for (int g = 0; g < G; ++g) {
                             const int j = c * G + g;
                             if (training) {
                               gxr[j] += k * (gr[j] - sum_g(0, c) / n - hr[j] * sum_gx(0, c) / n);
                             } else {
                               gxr[j] += k * gr[j];
                             }
                           }
                         }
                       }
                     }
                   });
}

}  // namespace dgcvc::ad
