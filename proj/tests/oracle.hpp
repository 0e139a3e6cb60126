#pragma once

// Test-only float64 reference implementations and a central-difference
// gradient checker. Everything here is written against plain double buffers,
// independent of the library's kernel and tape code paths, so it can serve
// as an oracle for them.

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "msrg/rng.hpp"
#include "msrg/tensor.hpp"

namespace oracle {

using Vec = std::vector<double>;

inline Vec to_doubles(const msrg::Tensor& t) {
    Vec v(static_cast<size_t>(t.size()));
    for (int64_t i = 0; i < t.size(); ++i) v[static_cast<size_t>(i)] = t[i];
    return v;
}

inline Vec ref_matmul(const Vec& a, const Vec& b, int64_t m, int64_t n, int64_t p) {
    Vec out(static_cast<size_t>(m * p), 0.0);
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t k = 0; k < n; ++k) {
            for (int64_t j = 0; j < p; ++j) {
                out[static_cast<size_t>(i * p + j)] +=
                    a[static_cast<size_t>(i * n + k)] * b[static_cast<size_t>(k * p + j)];
            }
        }
    }
    return out;
}

inline Vec ref_relu(const Vec& x) {
    Vec out(x.size());
    for (size_t i = 0; i < x.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
    return out;
}

inline Vec ref_transpose(const Vec& x, int64_t rows, int64_t cols) {
    Vec out(x.size());
    for (int64_t i = 0; i < rows; ++i) {
        for (int64_t j = 0; j < cols; ++j) {
            out[static_cast<size_t>(j * rows + i)] = x[static_cast<size_t>(i * cols + j)];
        }
    }
    return out;
}

inline double ref_l1(const Vec& p, const Vec& t) {
    double acc = 0.0;
    for (size_t i = 0; i < p.size(); ++i) acc += std::fabs(p[i] - t[i]);
    return acc / static_cast<double>(p.size());
}

inline double ref_mse(const Vec& p, const Vec& t) {
    double acc = 0.0;
    for (size_t i = 0; i < p.size(); ++i) acc += (p[i] - t[i]) * (p[i] - t[i]);
    return acc / static_cast<double>(p.size());
}

inline double ref_smooth_l1(const Vec& p, const Vec& t, double delta) {
    double acc = 0.0;
    for (size_t i = 0; i < p.size(); ++i) {
        const double d = p[i] - t[i];
        const double a = std::fabs(d);
        acc += a < delta ? 0.5 * d * d / delta : a - 0.5 * delta;
    }
    return acc / static_cast<double>(p.size());
}

inline double ref_neg_cosine(const Vec& p, const Vec& t, int64_t rows, int64_t cols) {
    double acc = 0.0;
    for (int64_t i = 0; i < rows; ++i) {
        double dot = 0.0, np = 0.0, nt = 0.0;
        for (int64_t j = 0; j < cols; ++j) {
            const double pv = p[static_cast<size_t>(i * cols + j)];
            const double tv = t[static_cast<size_t>(i * cols + j)];
            dot += pv * tv;
            np += pv * pv;
            nt += tv * tv;
        }
        acc += -dot / (std::sqrt(np) * std::sqrt(nt));
    }
    return acc / static_cast<double>(rows);
}

inline double ref_mean_softmax_entropy(const Vec& z, int64_t rows, int64_t cols) {
    double acc = 0.0;
    for (int64_t i = 0; i < rows; ++i) {
        double mx = -1e300;
        for (int64_t j = 0; j < cols; ++j) {
            mx = std::max(mx, z[static_cast<size_t>(i * cols + j)]);
        }
        double sum = 0.0;
        for (int64_t j = 0; j < cols; ++j) {
            sum += std::exp(z[static_cast<size_t>(i * cols + j)] - mx);
        }
        double h = 0.0;
        for (int64_t j = 0; j < cols; ++j) {
            const double pr = std::exp(z[static_cast<size_t>(i * cols + j)] - mx) / sum;
            h -= pr * std::log(pr);
        }
        acc += h;
    }
    return acc / static_cast<double>(rows);
}

inline double ref_mean_cross_entropy(const Vec& z, const std::vector<int32_t>& labels,
                                     int64_t rows, int64_t cols) {
    double acc = 0.0;
    for (int64_t i = 0; i < rows; ++i) {
        double mx = -1e300;
        for (int64_t j = 0; j < cols; ++j) {
            mx = std::max(mx, z[static_cast<size_t>(i * cols + j)]);
        }
        double sum = 0.0;
        for (int64_t j = 0; j < cols; ++j) {
            sum += std::exp(z[static_cast<size_t>(i * cols + j)] - mx);
        }
        acc += mx + std::log(sum) -
               z[static_cast<size_t>(i * cols + labels[static_cast<size_t>(i)])];
    }
    return acc / static_cast<double>(rows);
}

// phi = relu(z @ wd^T) @ wu^T for z [n,k], wd [r,k], wu [k,r]
inline Vec ref_adapter(const Vec& z, const Vec& wd, const Vec& wu, int64_t n, int64_t k,
                       int64_t r) {
    Vec h(static_cast<size_t>(n * r), 0.0);
    for (int64_t i = 0; i < n; ++i) {
        for (int64_t a = 0; a < r; ++a) {
            double acc = 0.0;
            for (int64_t j = 0; j < k; ++j) {
                acc += z[static_cast<size_t>(i * k + j)] * wd[static_cast<size_t>(a * k + j)];
            }
            h[static_cast<size_t>(i * r + a)] = acc > 0.0 ? acc : 0.0;
        }
    }
    Vec out(static_cast<size_t>(n * k), 0.0);
    for (int64_t i = 0; i < n; ++i) {
        for (int64_t j = 0; j < k; ++j) {
            double acc = 0.0;
            for (int64_t a = 0; a < r; ++a) {
                acc += h[static_cast<size_t>(i * r + a)] * wu[static_cast<size_t>(j * r + a)];
            }
            out[static_cast<size_t>(i * k + j)] = acc;
        }
    }
    return out;
}

// ---- central differences ----

using RefFn = std::function<double(const std::vector<Vec>&)>;

// d ref / d leaves via central differences at the exact float32 points.
inline std::vector<Vec> fd_gradients(const std::vector<msrg::Tensor>& leaves, const RefFn& ref,
                                     double h = 1e-3) {
    std::vector<Vec> point;
    point.reserve(leaves.size());
    for (const msrg::Tensor& t : leaves) point.push_back(to_doubles(t));
    std::vector<Vec> grads;
    for (size_t li = 0; li < point.size(); ++li) {
        Vec g(point[li].size(), 0.0);
        for (size_t e = 0; e < point[li].size(); ++e) {
            const double saved = point[li][e];
            point[li][e] = saved + h;
            const double up = ref(point);
            point[li][e] = saved - h;
            const double down = ref(point);
            point[li][e] = saved;
            g[e] = (up - down) / (2.0 * h);
        }
        grads.push_back(std::move(g));
    }
    return grads;
}

// Relative error with a floor, so near-zero gradients are compared
// absolutely at the finite-difference noise scale.
inline double rel_err(double a, double b, double floor = 1e-3) {
    return std::fabs(a - b) / std::max({std::fabs(a), std::fabs(b), floor});
}

inline double max_rel_err(const std::vector<msrg::Tensor>& analytic, const std::vector<Vec>& fd,
                          double floor = 1e-3) {
    double worst = 0.0;
    for (size_t i = 0; i < analytic.size(); ++i) {
        for (int64_t e = 0; e < analytic[i].size(); ++e) {
            worst = std::max(worst, rel_err(analytic[i][e], fd[i][static_cast<size_t>(e)], floor));
        }
    }
    return worst;
}

// Random tensor with entries away from the given kink distance (used to keep
// relu/l1 finite differences off nondifferentiable points).
inline msrg::Tensor random_tensor(std::vector<int64_t> shape, msrg::Rng& rng, double lo = -2.0,
                                  double hi = 2.0) {
    msrg::Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.size(); ++i) {
        t[i] = static_cast<float>(rng.uniform(lo, hi));
    }
    return t;
}

}  // namespace oracle
