#include "msrg/diagnostics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "json.hpp"
#include "msrg/errors.hpp"
#include "msrg/kernels.hpp"
#include "msrg/task_models.hpp"

namespace msrg {

double representation_bias(const Tensor& z_mtl, const Tensor& z_ind) {
    ensure_same_shape(z_mtl, z_ind, "representation_bias");
    if (z_mtl.ndim() != 2 || z_mtl.rows() == 0 || z_mtl.cols() == 0) {
        throw DimensionError("representation_bias: expected nonempty [n, k] features, got " +
                             z_mtl.shape_str());
    }
    const double l1 = kernels::sum_abs_diff(z_mtl.data(), z_ind.data(), z_mtl.size());
    return l1 / static_cast<double>(z_mtl.cols()) / static_cast<double>(z_mtl.rows());
}

std::string BiasReport::to_json() const {
    nlohmann::json j;
    j["method"] = method;
    j["surgery"] = surgery;
    j["seed"] = seed;
    j["per_task"] = nlohmann::json::array();
    for (const PerTask& pt : per_task) {
        j["per_task"].push_back({{"task", pt.task}, {"d", pt.d}, {"n", pt.n}, {"k", pt.k}});
    }
    j["mean"] = mean;
    return j.dump(2);
}

std::string BiasReport::to_text() const {
    std::ostringstream os;
    os << "representation bias: method=" << method << " surgery=" << (surgery ? "yes" : "no")
       << " seed=" << seed << "\n";
    os << std::left << std::setw(8) << "task" << std::setw(14) << "d" << std::setw(8) << "n"
       << "k\n";
    for (const PerTask& pt : per_task) {
        os << std::left << std::setw(8) << pt.task << std::setw(14) << std::setprecision(6)
           << std::fixed << pt.d << std::setw(8) << pt.n << pt.k << "\n";
    }
    os << "mean " << std::setprecision(6) << std::fixed << mean << "\n";
    return os.str();
}

BiasReport bias_report(const ParameterMap& merged,
                       const std::vector<const ParameterMap*>& individual_models,
                       const SurgeryBundle* bundle, const std::vector<Tensor>& inputs_per_task,
                       const std::string& method, uint64_t seed) {
    const size_t T = individual_models.size();
    if (inputs_per_task.size() != T) {
        throw UsageError("bias_report: need one input set per individual model");
    }
    if (bundle && bundle->modules.size() != T) {
        throw UsageError("bias_report: bundle has wrong module count");
    }
    BiasReport report;
    report.method = method;
    report.surgery = bundle != nullptr;
    report.seed = seed;
    double total = 0.0;
    for (size_t t = 0; t < T; ++t) {
        if (inputs_per_task[t].rows() == 0) {
            throw DegenerateInputError("bias_report: task " + std::to_string(t) + " has no inputs");
        }
        Tensor z_mtl = extract_features(merged, inputs_per_task[t]);
        if (bundle) z_mtl = apply_surgery(bundle->modules[t], z_mtl);
        const Tensor z_ind = extract_features(*individual_models[t], inputs_per_task[t]);
        BiasReport::PerTask pt;
        pt.task = static_cast<int32_t>(t);
        pt.d = representation_bias(z_mtl, z_ind);
        pt.n = z_mtl.rows();
        pt.k = z_mtl.cols();
        total += pt.d;
        report.per_task.push_back(pt);
    }
    report.mean = total / static_cast<double>(T);
    return report;
}

namespace {

// Eigendecomposition of a symmetric matrix by the cyclic Jacobi method.
// a is k*k row-major and is destroyed; eigenvectors land in v (columns).
void jacobi_eigen(std::vector<double>& a, std::vector<double>& v, int64_t k) {
    for (int64_t i = 0; i < k; ++i) {
        for (int64_t j = 0; j < k; ++j) v[static_cast<size_t>(i * k + j)] = i == j ? 1.0 : 0.0;
    }
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (int64_t p = 0; p < k; ++p) {
            for (int64_t q = p + 1; q < k; ++q) {
                off += a[static_cast<size_t>(p * k + q)] * a[static_cast<size_t>(p * k + q)];
            }
        }
        if (off < 1e-24) break;
        for (int64_t p = 0; p < k; ++p) {
            for (int64_t q = p + 1; q < k; ++q) {
                const double apq = a[static_cast<size_t>(p * k + q)];
                if (std::fabs(apq) < 1e-300) continue;
                const double app = a[static_cast<size_t>(p * k + p)];
                const double aqq = a[static_cast<size_t>(q * k + q)];
                const double theta = (aqq - app) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (int64_t i = 0; i < k; ++i) {
                    const double aip = a[static_cast<size_t>(i * k + p)];
                    const double aiq = a[static_cast<size_t>(i * k + q)];
                    a[static_cast<size_t>(i * k + p)] = c * aip - s * aiq;
                    a[static_cast<size_t>(i * k + q)] = s * aip + c * aiq;
                }
                for (int64_t j = 0; j < k; ++j) {
                    const double apj = a[static_cast<size_t>(p * k + j)];
                    const double aqj = a[static_cast<size_t>(q * k + j)];
                    a[static_cast<size_t>(p * k + j)] = c * apj - s * aqj;
                    a[static_cast<size_t>(q * k + j)] = s * apj + c * aqj;
                }
                for (int64_t i = 0; i < k; ++i) {
                    const double vip = v[static_cast<size_t>(i * k + p)];
                    const double viq = v[static_cast<size_t>(i * k + q)];
                    v[static_cast<size_t>(i * k + p)] = c * vip - s * viq;
                    v[static_cast<size_t>(i * k + q)] = s * vip + c * viq;
                }
            }
        }
    }
}

}  // namespace

Projection2D project_2d(const Tensor& merged_feats, const Tensor& individual_feats) {
    ensure_same_shape(merged_feats, individual_feats, "project_2d");
    const int64_t n = merged_feats.rows(), k = merged_feats.cols();
    if (2 * n < 3) throw UsageError("project_2d: need at least 3 samples");
    if (k < 2) throw UsageError("project_2d: need feature dimension >= 2");

    // Center on the union mean, then eigendecompose the union covariance.
    std::vector<double> mean(static_cast<size_t>(k), 0.0);
    for (int64_t i = 0; i < n; ++i) {
        for (int64_t j = 0; j < k; ++j) {
            mean[static_cast<size_t>(j)] += static_cast<double>(merged_feats.at(i, j)) +
                                            static_cast<double>(individual_feats.at(i, j));
        }
    }
    for (auto& m : mean) m /= static_cast<double>(2 * n);

    std::vector<double> cov(static_cast<size_t>(k * k), 0.0);
    auto accumulate_cov = [&](const Tensor& z) {
        for (int64_t i = 0; i < n; ++i) {
            for (int64_t a = 0; a < k; ++a) {
                const double da = static_cast<double>(z.at(i, a)) - mean[static_cast<size_t>(a)];
                for (int64_t b = a; b < k; ++b) {
                    const double db = static_cast<double>(z.at(i, b)) - mean[static_cast<size_t>(b)];
                    cov[static_cast<size_t>(a * k + b)] += da * db;
                }
            }
        }
    };
    accumulate_cov(merged_feats);
    accumulate_cov(individual_feats);
    double max_diag = 0.0;
    for (int64_t a = 0; a < k; ++a) {
        for (int64_t b = a; b < k; ++b) {
            cov[static_cast<size_t>(a * k + b)] /= static_cast<double>(2 * n - 1);
            cov[static_cast<size_t>(b * k + a)] = cov[static_cast<size_t>(a * k + b)];
        }
        max_diag = std::max(max_diag, cov[static_cast<size_t>(a * k + a)]);
    }
    if (max_diag <= 1e-18) {
        throw DegenerateInputError("project_2d: all points identical (zero covariance)");
    }

    std::vector<double> vecs(static_cast<size_t>(k * k));
    jacobi_eigen(cov, vecs, k);

    // Top-2 eigenpairs by eigenvalue (now on the diagonal of cov).
    int64_t top[2] = {-1, -1};
    for (int pass = 0; pass < 2; ++pass) {
        double best = -1e300;
        for (int64_t i = 0; i < k; ++i) {
            if (i == top[0]) continue;
            const double ev = cov[static_cast<size_t>(i * k + i)];
            if (ev > best) {
                best = ev;
                top[pass] = i;
            }
        }
    }

    // Deterministic sign: flip so the largest-magnitude loading is positive.
    std::vector<double> axis(static_cast<size_t>(2 * k));
    for (int c = 0; c < 2; ++c) {
        int64_t arg = 0;
        for (int64_t i = 1; i < k; ++i) {
            if (std::fabs(vecs[static_cast<size_t>(i * k + top[c])]) >
                std::fabs(vecs[static_cast<size_t>(arg * k + top[c])])) {
                arg = i;
            }
        }
        const double sign = vecs[static_cast<size_t>(arg * k + top[c])] < 0.0 ? -1.0 : 1.0;
        for (int64_t i = 0; i < k; ++i) {
            axis[static_cast<size_t>(c * k + i)] = sign * vecs[static_cast<size_t>(i * k + top[c])];
        }
    }

    auto project = [&](const Tensor& z) {
        Tensor out({n, 2});
        for (int64_t i = 0; i < n; ++i) {
            for (int c = 0; c < 2; ++c) {
                double acc = 0.0;
                for (int64_t j = 0; j < k; ++j) {
                    acc += (static_cast<double>(z.at(i, j)) - mean[static_cast<size_t>(j)]) *
                           axis[static_cast<size_t>(c * k + j)];
                }
                out.at(i, c) = static_cast<float>(acc);
            }
        }
        return out;
    };

    Projection2D proj;
    proj.merged_xy = project(merged_feats);
    proj.individual_xy = project(individual_feats);
    return proj;
}

void export_projection_csv(const std::vector<Projection2D>& per_task, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw CheckpointError(CheckpointError::Kind::io, "cannot open '" + path + "'");
    os << "task,source,x,y\n";
    char buf[96];
    for (size_t t = 0; t < per_task.size(); ++t) {
        const Projection2D& p = per_task[t];
        for (int64_t i = 0; i < p.merged_xy.rows(); ++i) {
            std::snprintf(buf, sizeof(buf), "%zu,merged,%.9g,%.9g", t,
                          static_cast<double>(p.merged_xy.at(i, 0)),
                          static_cast<double>(p.merged_xy.at(i, 1)));
            os << buf << "\n";
        }
        for (int64_t i = 0; i < p.individual_xy.rows(); ++i) {
            std::snprintf(buf, sizeof(buf), "%zu,individual,%.9g,%.9g", t,
                          static_cast<double>(p.individual_xy.at(i, 0)),
                          static_cast<double>(p.individual_xy.at(i, 1)));
            os << buf << "\n";
        }
    }
    if (!os) throw CheckpointError(CheckpointError::Kind::io, "write failed for '" + path + "'");
}

}  // namespace msrg
