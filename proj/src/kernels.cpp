#include "msrg/kernels.hpp"

namespace msrg::kernels {

namespace {
Backend g_backend = Backend::parallel;
}

void set_backend(Backend b) { g_backend = b; }
Backend backend() { return g_backend; }

#define MSRG_DISPATCH(fn, ...)                       \
    if (g_backend == Backend::parallel) {            \
        return parallel::fn(__VA_ARGS__);            \
    }                                                \
    return serial::fn(__VA_ARGS__)

void matmul_nn(const float* a, const float* b, float* out, int64_t m, int64_t n, int64_t p) {
    MSRG_DISPATCH(matmul_nn, a, b, out, m, n, p);
}
void matmul_nt(const float* a, const float* b, float* out, int64_t m, int64_t n, int64_t p) {
    MSRG_DISPATCH(matmul_nt, a, b, out, m, n, p);
}
void matmul_tn(const float* a, const float* b, float* out, int64_t m, int64_t n, int64_t p) {
    MSRG_DISPATCH(matmul_tn, a, b, out, m, n, p);
}
void add(const float* a, const float* b, float* out, int64_t n) { MSRG_DISPATCH(add, a, b, out, n); }
void sub(const float* a, const float* b, float* out, int64_t n) { MSRG_DISPATCH(sub, a, b, out, n); }
void mul(const float* a, const float* b, float* out, int64_t n) { MSRG_DISPATCH(mul, a, b, out, n); }
void scale(const float* a, double c, float* out, int64_t n) { MSRG_DISPATCH(scale, a, c, out, n); }
void axpy(double alpha, const float* x, float* y, int64_t n) { MSRG_DISPATCH(axpy, alpha, x, y, n); }
void relu(const float* x, float* out, int64_t n) { MSRG_DISPATCH(relu, x, out, n); }
void relu_backward(const float* x, const float* g, float* gx, int64_t n) {
    MSRG_DISPATCH(relu_backward, x, g, gx, n);
}
double sum(const float* x, int64_t n) { MSRG_DISPATCH(sum, x, n); }
double sum_abs(const float* x, int64_t n) { MSRG_DISPATCH(sum_abs, x, n); }
double sum_sq(const float* x, int64_t n) { MSRG_DISPATCH(sum_sq, x, n); }
double dot(const float* a, const float* b, int64_t n) { MSRG_DISPATCH(dot, a, b, n); }
double sum_abs_diff(const float* a, const float* b, int64_t n) {
    MSRG_DISPATCH(sum_abs_diff, a, b, n);
}

#undef MSRG_DISPATCH

}  // namespace msrg::kernels
