#pragma once

#include <cstdint>

// Dense float32 kernels with float64 accumulation in every reduction.
//
// Two backends share one contract: `serial` is the plain-loop reference,
// `parallel` distributes the same loops over OpenMP threads. Each output
// element is produced by an identical sequence of float operations in both
// backends, and whole-tensor reductions combine fixed-size chunk partials in
// chunk order, so results are bit-identical across backends and thread
// counts. tools/kernel_bench.cpp compares their throughput.
namespace msrg::kernels {

enum class Backend { serial, parallel };

void set_backend(Backend b);
Backend backend();

// Chunk length for deterministic reductions. Both backends reduce each chunk
// sequentially and then fold the partials in chunk order.
inline constexpr int64_t kReduceChunk = 4096;

// out[m x p] = a[m x n] @ b[n x p]
void matmul_nn(const float* a, const float* b, float* out, int64_t m, int64_t n, int64_t p);
// out[m x p] = a[m x n] @ b[p x n]^T
void matmul_nt(const float* a, const float* b, float* out, int64_t m, int64_t n, int64_t p);
// out[n x p] = a[m x n]^T @ b[m x p]
void matmul_tn(const float* a, const float* b, float* out, int64_t m, int64_t n, int64_t p);

void add(const float* a, const float* b, float* out, int64_t n);
void sub(const float* a, const float* b, float* out, int64_t n);
void mul(const float* a, const float* b, float* out, int64_t n);
void scale(const float* a, double c, float* out, int64_t n);
// y += alpha * x
void axpy(double alpha, const float* x, float* y, int64_t n);
void relu(const float* x, float* out, int64_t n);
// gx += g where x > 0 (subgradient 0 at x == 0)
void relu_backward(const float* x, const float* g, float* gx, int64_t n);

double sum(const float* x, int64_t n);
double sum_abs(const float* x, int64_t n);
double sum_sq(const float* x, int64_t n);
double dot(const float* a, const float* b, int64_t n);
double sum_abs_diff(const float* a, const float* b, int64_t n);

namespace serial {
void matmul_nn(const float* a, const float* b, float* out, int64_t m, int64_t n, int64_t p);
void matmul_nt(const float* a, const float* b, float* out, int64_t m, int64_t n, int64_t p);
void matmul_tn(const float* a, const float* b, float* out, int64_t m, int64_t n, int64_t p);
void add(const float* a, const float* b, float* out, int64_t n);
void sub(const float* a, const float* b, float* out, int64_t n);
void mul(const float* a, const float* b, float* out, int64_t n);
void scale(const float* a, double c, float* out, int64_t n);
void axpy(double alpha, const float* x, float* y, int64_t n);
void relu(const float* x, float* out, int64_t n);
void relu_backward(const float* x, const float* g, float* gx, int64_t n);
double sum(const float* x, int64_t n);
double sum_abs(const float* x, int64_t n);
double sum_sq(const float* x, int64_t n);
double dot(const float* a, const float* b, int64_t n);
double sum_abs_diff(const float* a, const float* b, int64_t n);
}  // namespace serial

namespace parallel {
void matmul_nn(const float* a, const float* b, float* out, int64_t m, int64_t n, int64_t p);
void matmul_nt(const float* a, const float* b, float* out, int64_t m, int64_t n, int64_t p);
void matmul_tn(const float* a, const float* b, float* out, int64_t m, int64_t n, int64_t p);
void add(const float* a, const float* b, float* out, int64_t n);
void sub(const float* a, const float* b, float* out, int64_t n);
void mul(const float* a, const float* b, float* out, int64_t n);
void scale(const float* a, double c, float* out, int64_t n);
void axpy(double alpha, const float* x, float* y, int64_t n);
void relu(const float* x, float* out, int64_t n);
void relu_backward(const float* x, const float* g, float* gx, int64_t n);
double sum(const float* x, int64_t n);
double sum_abs(const float* x, int64_t n);
double sum_sq(const float* x, int64_t n);
double dot(const float* a, const float* b, int64_t n);
double sum_abs_diff(const float* a, const float* b, int64_t n);
}  // namespace parallel

}  // namespace msrg::kernels
