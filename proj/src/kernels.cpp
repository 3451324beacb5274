#include "dgcvc/kernels.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace dgcvc::kernels {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

// ---------------------------------------------------------------------------
// matmul family. ikj order: each output row is accumulated by exactly one
// thread, so the summation order never depends on the schedule.
// ---------------------------------------------------------------------------

void matmul(const double* a, const double* b, double* c, int m, int k, int n) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i) {
    double* ci = c + static_cast<size_t>(i) * n;
    std::memset(ci, 0, sizeof(double) * n);
    const double* ai = a + static_cast<size_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const double aip = ai[p];
      if (aip == 0.0) continue;
      const double* bp = b + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n) {
  // a is k x m, c(i,j) = sum_p a(p,i) * b(p,j)
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i) {
    double* ci = c + static_cast<size_t>(i) * n;
    std::memset(ci, 0, sizeof(double) * n);
    for (int p = 0; p < k; ++p) {
      const double api = a[static_cast<size_t>(p) * m + i];
      if (api == 0.0) continue;
      const double* bp = b + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) ci[j] += api * bp[j];
    }
  }
}

void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n) {
  // b is n x k, c(i,j) = dot(a_row_i, b_row_j)
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i) {
    const double* ai = a + static_cast<size_t>(i) * k;
    double* ci = c + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const double* bj = b + static_cast<size_t>(j) * k;
      double s = 0.0;
      for (int p = 0; p < k; ++p) s += ai[p] * bj[p];
      ci[j] = s;
    }
  }
}

Mat matmul(const Mat& a, const Mat& b) {
  if (a.cols != b.rows) throw std::invalid_argument("matmul: inner dims " + a.shape_str() + " vs " + b.shape_str());
  Mat c(a.rows, b.cols);
  matmul(a.data.data(), b.data.data(), c.data.data(), a.rows, a.cols, b.cols);
  return c;
}

Mat matmul_tn(const Mat& a, const Mat& b) {
  if (a.rows != b.rows) throw std::invalid_argument("matmul_tn: inner dims " + a.shape_str() + " vs " + b.shape_str());
  Mat c(a.cols, b.cols);
  matmul_tn(a.data.data(), b.data.data(), c.data.data(), a.cols, a.rows, b.cols);
  return c;
}

Mat matmul_nt(const Mat& a, const Mat& b) {
  if (a.cols != b.cols) throw std::invalid_argument("matmul_nt: inner dims " + a.shape_str() + " vs " + b.shape_str());
  Mat c(a.rows, b.rows);
  matmul_nt(a.data.data(), b.data.data(), c.data.data(), a.rows, a.cols, b.rows);
  return c;
}

void col_sum(const double* a, double* out, int m, int n) {
  std::memset(out, 0, sizeof(double) * n);
  for (int i = 0; i < m; ++i) {
    const double* ai = a + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) out[j] += ai[j];
  }
}

// ---------------------------------------------------------------------------
// FFT
// ---------------------------------------------------------------------------

bool is_pow2(int n) { return n > 0 && (n & (n - 1)) == 0; }

void fft(double* re, double* im, int n, bool inverse) {
  if (!is_pow2(n)) throw std::invalid_argument("fft: size must be a power of two");
  // bit reversal
  for (int i = 1, j = 0; i < n; ++i) {
    int bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) {
      std::swap(re[i], re[j]);
      std::swap(im[i], im[j]);
    }
  }
  for (int len = 2; len <= n; len <<= 1) {
    const double ang = 2.0 * kPi / len * (inverse ? 1.0 : -1.0);
    const double wr = std::cos(ang), wi = std::sin(ang);
    for (int i = 0; i < n; i += len) {
      double cr = 1.0, ci = 0.0;
      for (int j = 0; j < len / 2; ++j) {
        const int u = i + j, v = i + j + len / 2;
        const double vr = re[v] * cr - im[v] * ci;
        const double vi = re[v] * ci + im[v] * cr;
        re[v] = re[u] - vr;
        im[v] = im[u] - vi;
        re[u] += vr;
        im[u] += vi;
        const double ncr = cr * wr - ci * wi;
        ci = cr * wi + ci * wr;
        cr = ncr;
      }
    }
  }
  if (inverse) {
    const double s = 1.0 / n;
    for (int i = 0; i < n; ++i) {
      re[i] *= s;
      im[i] *= s;
    }
  }
}

namespace ref {

void matmul(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    double* ci = c + static_cast<size_t>(i) * n;
    std::memset(ci, 0, sizeof(double) * n);
    const double* ai = a + static_cast<size_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const double aip = ai[p];
      if (aip == 0.0) continue;
      const double* bp = b + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    double* ci = c + static_cast<size_t>(i) * n;
    std::memset(ci, 0, sizeof(double) * n);
    for (int p = 0; p < k; ++p) {
      const double api = a[static_cast<size_t>(p) * m + i];
      if (api == 0.0) continue;
      const double* bp = b + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) ci[j] += api * bp[j];
    }
  }
}

void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* ai = a + static_cast<size_t>(i) * k;
    double* ci = c + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const double* bj = b + static_cast<size_t>(j) * k;
      double s = 0.0;
      for (int p = 0; p < k; ++p) s += ai[p] * bj[p];
      ci[j] = s;
    }
  }
}

void dft(const double* re_in, const double* im_in, double* re_out, double* im_out, int n, bool inverse) {
  const double sign = inverse ? 1.0 : -1.0;
  for (int k = 0; k < n; ++k) {
    double sr = 0.0, si = 0.0;
    for (int t = 0; t < n; ++t) {
      const double ang = sign * 2.0 * kPi * k * t / n;
      const double cr = std::cos(ang), ci = std::sin(ang);
      sr += re_in[t] * cr - im_in[t] * ci;
      si += re_in[t] * ci + im_in[t] * cr;
    }
    re_out[k] = sr;
    im_out[k] = si;
  }
  if (inverse) {
    for (int k = 0; k < n; ++k) {
      re_out[k] /= n;
      im_out[k] /= n;
    }
  }
}

}  // namespace ref

}  // namespace dgcvc::kernels
