#include "msrg/kernels.hpp"

#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

// OpenMP backend. Work is split only across independent output elements
// (matmul rows, elementwise indices, reduction chunks); the per-element float
// sequence matches the serial backend exactly, so results are bit-identical
// for any thread count. Small inputs stay on the serial path because the
// fork/join overhead dwarfs the loop body.

namespace msrg::kernels::parallel {

namespace {

constexpr int64_t kMatmulFlopCutover = 1 << 15;
constexpr int64_t kElementCutover = 1 << 15;

}  // namespace

void matmul_nn(const float* a, const float* b, float* out, int64_t m, int64_t n, int64_t p) {
    if (m * n * p < kMatmulFlopCutover) {
        serial::matmul_nn(a, b, out, m, n, p);
        return;
    }
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t j = 0; j < p; ++j) {
            double acc = 0.0;
            for (int64_t k = 0; k < n; ++k) {
                acc += static_cast<double>(a[i * n + k]) * static_cast<double>(b[k * p + j]);
            }
            out[i * p + j] = static_cast<float>(acc);
        }
    }
}

void matmul_nt(const float* a, const float* b, float* out, int64_t m, int64_t n, int64_t p) {
    if (m * n * p < kMatmulFlopCutover) {
        serial::matmul_nt(a, b, out, m, n, p);
        return;
    }
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t j = 0; j < p; ++j) {
            double acc = 0.0;
            for (int64_t k = 0; k < n; ++k) {
                acc += static_cast<double>(a[i * n + k]) * static_cast<double>(b[j * n + k]);
            }
            out[i * p + j] = static_cast<float>(acc);
        }
    }
}

void matmul_tn(const float* a, const float* b, float* out, int64_t m, int64_t n, int64_t p) {
    if (m * n * p < kMatmulFlopCutover) {
        serial::matmul_tn(a, b, out, m, n, p);
        return;
    }
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) {
        for (int64_t j = 0; j < p; ++j) {
            double acc = 0.0;
            for (int64_t k = 0; k < m; ++k) {
                acc += static_cast<double>(a[k * n + i]) * static_cast<double>(b[k * p + j]);
            }
            out[i * p + j] = static_cast<float>(acc);
        }
    }
}

void add(const float* a, const float* b, float* out, int64_t n) {
    if (n < kElementCutover) {
        serial::add(a, b, out, n);
        return;
    }
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void sub(const float* a, const float* b, float* out, int64_t n) {
    if (n < kElementCutover) {
        serial::sub(a, b, out, n);
        return;
    }
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}

void mul(const float* a, const float* b, float* out, int64_t n) {
    if (n < kElementCutover) {
        serial::mul(a, b, out, n);
        return;
    }
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void scale(const float* a, double c, float* out, int64_t n) {
    if (n < kElementCutover) {
        serial::scale(a, c, out, n);
        return;
    }
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) out[i] = static_cast<float>(static_cast<double>(a[i]) * c);
}

void axpy(double alpha, const float* x, float* y, int64_t n) {
    if (n < kElementCutover) {
        serial::axpy(alpha, x, y, n);
        return;
    }
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) {
        y[i] = static_cast<float>(static_cast<double>(y[i]) + alpha * static_cast<double>(x[i]));
    }
}

void relu(const float* x, float* out, int64_t n) {
    if (n < kElementCutover) {
        serial::relu(x, out, n);
        return;
    }
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) out[i] = x[i] > 0.0f ? x[i] : 0.0f;
}

void relu_backward(const float* x, const float* g, float* gx, int64_t n) {
    if (n < kElementCutover) {
        serial::relu_backward(x, g, gx, n);
        return;
    }
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) {
        if (x[i] > 0.0f) gx[i] += g[i];
    }
}

namespace {

// Same chunk layout as the serial backend; only the chunk loop is threaded.
// Partials are folded in chunk order on one thread.
template <typename ChunkFn>
double chunked_reduce(int64_t n, ChunkFn&& fn) {
    const int64_t chunks = (n + kReduceChunk - 1) / kReduceChunk;
    std::vector<double> partial(static_cast<size_t>(chunks > 0 ? chunks : 1), 0.0);
    if (n >= kElementCutover) {
#pragma omp parallel for schedule(static)
        for (int64_t c = 0; c < chunks; ++c) {
            const int64_t lo = c * kReduceChunk;
            const int64_t hi = lo + kReduceChunk < n ? lo + kReduceChunk : n;
            partial[static_cast<size_t>(c)] = fn(lo, hi);
        }
    } else {
        for (int64_t c = 0; c < chunks; ++c) {
            const int64_t lo = c * kReduceChunk;
            const int64_t hi = lo + kReduceChunk < n ? lo + kReduceChunk : n;
            partial[static_cast<size_t>(c)] = fn(lo, hi);
        }
    }
    double total = 0.0;
    for (int64_t c = 0; c < chunks; ++c) total += partial[static_cast<size_t>(c)];
    return total;
}

}  // namespace

double sum(const float* x, int64_t n) {
    return chunked_reduce(n, [x](int64_t lo, int64_t hi) {
        double acc = 0.0;
        for (int64_t i = lo; i < hi; ++i) acc += static_cast<double>(x[i]);
        return acc;
    });
}

double sum_abs(const float* x, int64_t n) {
    return chunked_reduce(n, [x](int64_t lo, int64_t hi) {
        double acc = 0.0;
        for (int64_t i = lo; i < hi; ++i) acc += static_cast<double>(x[i] < 0.0f ? -x[i] : x[i]);
        return acc;
    });
}

double sum_sq(const float* x, int64_t n) {
    return chunked_reduce(n, [x](int64_t lo, int64_t hi) {
        double acc = 0.0;
        for (int64_t i = lo; i < hi; ++i) {
            const double v = static_cast<double>(x[i]);
            acc += v * v;
        }
        return acc;
    });
}

double dot(const float* a, const float* b, int64_t n) {
    return chunked_reduce(n, [a, b](int64_t lo, int64_t hi) {
        double acc = 0.0;
        for (int64_t i = lo; i < hi; ++i) {
            acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
        }
        return acc;
    });
}

double sum_abs_diff(const float* a, const float* b, int64_t n) {
    return chunked_reduce(n, [a, b](int64_t lo, int64_t hi) {
        double acc = 0.0;
        for (int64_t i = lo; i < hi; ++i) {
            const float d = a[i] - b[i];
            acc += static_cast<double>(d < 0.0f ? -d : d);
        }
        return acc;
    });
}

}  // namespace msrg::kernels::parallel
