#pragma once

#include <cstddef>
#include <vector>

#include "dgcvc/mat.hpp"

// Numeric kernels behind every layer and DSP routine. Each hot kernel has an
// OpenMP-parallel entry point plus a serial reference implementation under
// kernels::ref; tests assert they agree bitwise and tools/bench_kernels
// compares their throughput.
//
// Parallel decomposition is always by independent output rows/channels, so
// results are bit-identical for any thread count.

namespace dgcvc::kernels {

// c = a * b, a: m x k, b: k x n, c: m x n (c overwritten)
void matmul(const double* a, const double* b, double* c, int m, int k, int n);
// c = a^T * b, a: k x m, b: k x n, c: m x n
void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n);
// c = a * b^T, a: m x k, b: n x k, c: m x n
void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n);

Mat matmul(const Mat& a, const Mat& b);
Mat matmul_tn(const Mat& a, const Mat& b);
Mat matmul_nt(const Mat& a, const Mat& b);

// column sums of a (m x n) into out (n)
void col_sum(const double* a, double* out, int m, int n);

// In-place radix-2 complex FFT over separate re/im arrays; n must be a power
// of two. inverse=true applies the 1/n scale.
void fft(double* re, double* im, int n, bool inverse);
bool is_pow2(int n);

namespace ref {
void matmul(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n);
// O(n^2) DFT, oracle for the fft above
void dft(const double* re_in, const double* im_in, double* re_out, double* im_out, int n, bool inverse);
}  // namespace ref

}  // namespace dgcvc::kernels
