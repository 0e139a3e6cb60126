#include "msrg/merge.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "msrg/adam.hpp"
#include "msrg/errors.hpp"
#include "msrg/kernels.hpp"
#include "msrg/rng.hpp"
#include "msrg/tape.hpp"

namespace msrg {

const char* coeff_mode_name(CoeffMode mode) {
    switch (mode) {
        case CoeffMode::scalar: return "scalar";
        case CoeffMode::task_wise: return "task";
        case CoeffMode::layer_wise: return "layer";
    }
    return "?";
}

std::string MergeCoefficients::to_json() const {
    nlohmann::json j;
    j["mode"] = coeff_mode_name(mode);
    j["values"] = values;
    return j.dump(2);
}

int32_t layer_index_of(const std::string& param_name) {
    const size_t first = param_name.find('/');
    if (first == std::string::npos) {
        throw UsageError("cannot derive layer index from parameter name '" + param_name + "'");
    }
    const size_t second = param_name.find('/', first + 1);
    const std::string digits = param_name.substr(first + 1, second - first - 1);
    if (digits.empty() || digits.find_first_not_of("0123456789") != std::string::npos) {
        throw UsageError("cannot derive layer index from parameter name '" + param_name + "'");
    }
    return static_cast<int32_t>(std::stol(digits));
}

TaskVector task_vector(const ParameterMap& theta_t, const ParameterMap& theta0, int32_t task_id) {
    assert_compatible({&theta0, &theta_t});
    TaskVector tv;
    tv.task_id = task_id;
    tv.delta.kind = "task_vector";
    tv.delta.feature_dim = theta0.feature_dim;
    tv.delta.layer_count = theta0.layer_count;
    for (size_t i = 0; i < theta0.size(); ++i) {
        const std::string& name = theta0.name(i);
        const Tensor& base = theta0.tensor(i);
        const Tensor& tuned = theta_t.get(name);
        Tensor d(base.shape());
        kernels::sub(tuned.data(), base.data(), d.data(), d.size());
        tv.delta.add(name, std::move(d));
    }
    return tv;
}

ParameterMap weight_average(const std::vector<const ParameterMap*>& maps) {
    if (maps.empty()) throw UsageError("weight_average: empty input list");
    if (maps.size() > 1) assert_compatible(maps);
    const ParameterMap& first = *maps[0];
    ParameterMap out;
    out.kind = first.kind;
    out.feature_dim = first.feature_dim;
    out.layer_count = first.layer_count;
    const double inv = 1.0 / static_cast<double>(maps.size());
    for (size_t i = 0; i < first.size(); ++i) {
        const std::string& name = first.name(i);
        Tensor acc(first.tensor(i).shape());
        for (int64_t e = 0; e < acc.size(); ++e) {
            double s = 0.0;
            for (const ParameterMap* m : maps) s += static_cast<double>(m->get(name)[e]);
            acc[e] = static_cast<float>(s * inv);
        }
        ensure_finite(acc, "weight_average");
        out.add(name, std::move(acc));
    }
    return out;
}

namespace {

void check_vectors(const ParameterMap& theta0, const std::vector<TaskVector>& vectors,
                   const char* context) {
    if (vectors.empty()) throw UsageError(std::string(context) + ": no task vectors");
    std::vector<const ParameterMap*> maps{&theta0};
    for (const TaskVector& v : vectors) maps.push_back(&v.delta);
    assert_compatible(maps);
}

ParameterMap map_like(const ParameterMap& theta0) {
    ParameterMap out;
    out.kind = theta0.kind;
    out.feature_dim = theta0.feature_dim;
    out.layer_count = theta0.layer_count;
    return out;
}

}  // namespace

ParameterMap task_arithmetic(const ParameterMap& theta0, const std::vector<TaskVector>& vectors,
                             double lambda) {
    if (!std::isfinite(lambda)) throw NumericalError("task_arithmetic: non-finite lambda");
    check_vectors(theta0, vectors, "task_arithmetic");
    ParameterMap out = map_like(theta0);
    for (size_t i = 0; i < theta0.size(); ++i) {
        const std::string& name = theta0.name(i);
        const Tensor& base = theta0.tensor(i);
        Tensor merged(base.shape());
        for (int64_t e = 0; e < merged.size(); ++e) {
            double s = 0.0;
            for (const TaskVector& v : vectors) s += static_cast<double>(v.delta.tensor(i)[e]);
            merged[e] = static_cast<float>(static_cast<double>(base[e]) + lambda * s);
        }
        ensure_finite(merged, "task_arithmetic");
        out.add(name, std::move(merged));
    }
    return out;
}

ParameterMap ties_merge(const ParameterMap& theta0, const std::vector<TaskVector>& vectors,
                        double lambda, double trim_fraction) {
    if (!(trim_fraction > 0.0 && trim_fraction <= 1.0)) {
        throw UsageError("ties_merge: trim_fraction must be in (0, 1]");
    }
    if (!std::isfinite(lambda)) throw NumericalError("ties_merge: non-finite lambda");
    check_vectors(theta0, vectors, "ties_merge");

    const size_t T = vectors.size();
    const int64_t total = theta0.total_params();

    // TRIM: per task, global top-k mask over the flattened vector.
    std::vector<std::vector<char>> keep(T, std::vector<char>(static_cast<size_t>(total), 0));
    const int64_t k_keep = std::min<int64_t>(
        total, static_cast<int64_t>(std::ceil(trim_fraction * static_cast<double>(total) - 1e-9)));
    for (size_t t = 0; t < T; ++t) {
        std::vector<float> mag(static_cast<size_t>(total));
        int64_t pos = 0;
        for (size_t i = 0; i < theta0.size(); ++i) {
            const Tensor& d = vectors[t].delta.tensor(i);
            for (int64_t e = 0; e < d.size(); ++e) {
                mag[static_cast<size_t>(pos++)] = std::fabs(d[e]);
            }
        }
        std::vector<int64_t> order(static_cast<size_t>(total));
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
            return mag[static_cast<size_t>(a)] > mag[static_cast<size_t>(b)];
        });
        for (int64_t r = 0; r < k_keep; ++r) {
            keep[t][static_cast<size_t>(order[static_cast<size_t>(r)])] = 1;
        }
    }

    // ELECT + MERGE per coordinate.
    ParameterMap out = map_like(theta0);
    int64_t flat_base = 0;
    for (size_t i = 0; i < theta0.size(); ++i) {
        const Tensor& base = theta0.tensor(i);
        Tensor merged(base.shape());
        for (int64_t e = 0; e < merged.size(); ++e) {
            const size_t flat = static_cast<size_t>(flat_base + e);
            double pos_mass = 0.0, neg_mass = 0.0;
            for (size_t t = 0; t < T; ++t) {
                if (!keep[t][flat]) continue;
                const double v = static_cast<double>(vectors[t].delta.tensor(i)[e]);
                if (v > 0.0) pos_mass += v;
                if (v < 0.0) neg_mass -= v;
            }
            const bool elect_positive = pos_mass >= neg_mass;
            double sum = 0.0;
            int64_t count = 0;
            for (size_t t = 0; t < T; ++t) {
                if (!keep[t][flat]) continue;
                const double v = static_cast<double>(vectors[t].delta.tensor(i)[e]);
                if ((elect_positive && v > 0.0) || (!elect_positive && v < 0.0)) {
                    sum += v;
                    ++count;
                }
            }
            const double value = count > 0 ? sum / static_cast<double>(count) : 0.0;
            merged[e] = static_cast<float>(static_cast<double>(base[e]) + lambda * value);
        }
        ensure_finite(merged, "ties_merge");
        out.add(theta0.name(i), std::move(merged));
        flat_base += base.size();
    }
    return out;
}

ParameterMap merge_with_coefficients(const ParameterMap& theta0,
                                     const std::vector<TaskVector>& vectors,
                                     const MergeCoefficients& coeffs) {
    check_vectors(theta0, vectors, "merge_with_coefficients");
    const int32_t T = static_cast<int32_t>(vectors.size());
    const int32_t L = static_cast<int32_t>(theta0.layer_count);
    switch (coeffs.mode) {
        case CoeffMode::scalar:
            if (coeffs.values.size() != 1) throw UsageError("scalar coefficients need 1 value");
            break;
        case CoeffMode::task_wise:
            if (static_cast<int32_t>(coeffs.values.size()) != T) {
                throw UsageError("task-wise coefficients need one value per task");
            }
            break;
        case CoeffMode::layer_wise:
            if (static_cast<int32_t>(coeffs.values.size()) != T * L) {
                throw UsageError("layer-wise coefficients need tasks*layers values");
            }
            break;
    }
    for (double v : coeffs.values) {
        if (!std::isfinite(v)) throw NumericalError("merge coefficients: non-finite value");
    }

    ParameterMap out = map_like(theta0);
    for (size_t i = 0; i < theta0.size(); ++i) {
        const std::string& name = theta0.name(i);
        Tensor merged = theta0.tensor(i);
        const int32_t layer = coeffs.mode == CoeffMode::layer_wise ? layer_index_of(name) : 0;
        for (int32_t t = 0; t < T; ++t) {
            double c = 0.0;
            switch (coeffs.mode) {
                case CoeffMode::scalar: c = coeffs.values[0]; break;
                case CoeffMode::task_wise: c = coeffs.values[static_cast<size_t>(t)]; break;
                case CoeffMode::layer_wise:
                    c = coeffs.values[static_cast<size_t>(t * L + layer)];
                    break;
            }
            kernels::axpy(c, vectors[static_cast<size_t>(t)].delta.tensor(i).data(), merged.data(),
                          merged.size());
        }
        ensure_finite(merged, "merge_with_coefficients");
        out.add(name, std::move(merged));
    }
    return out;
}

namespace {

double mean_entropy_of(const Tensor& logits) {
    const int64_t rows = logits.rows(), cols = logits.cols();
    double acc = 0.0;
    for (int64_t i = 0; i < rows; ++i) {
        const float* row = logits.data() + i * cols;
        double mx = -1e300;
        for (int64_t j = 0; j < cols; ++j) mx = std::max(mx, static_cast<double>(row[j]));
        double z = 0.0;
        for (int64_t j = 0; j < cols; ++j) z += std::exp(static_cast<double>(row[j]) - mx);
        double h = 0.0;
        for (int64_t j = 0; j < cols; ++j) {
            const double p = std::exp(static_cast<double>(row[j]) - mx) / z;
            h -= p * std::log(p);
        }
        acc += h;
    }
    return acc / static_cast<double>(rows);
}

}  // namespace

AdaMergeResult adamerge(const ParameterMap& theta0, const std::vector<TaskVector>& vectors,
                        const std::vector<Tensor>& unlabeled_per_task,
                        const std::vector<TaskHead>& heads, const AdaMergeConfig& cfg) {
    if (cfg.mode == CoeffMode::scalar) throw UsageError("adamerge: mode must be task or layer");
    check_vectors(theta0, vectors, "adamerge");
    const int32_t T = static_cast<int32_t>(vectors.size());
    const int32_t L = static_cast<int32_t>(theta0.layer_count);
    if (static_cast<int32_t>(unlabeled_per_task.size()) != T ||
        static_cast<int32_t>(heads.size()) != T) {
        throw UsageError("adamerge: need unlabeled inputs and a head for every task");
    }
    for (const Tensor& u : unlabeled_per_task) {
        if (u.rows() == 0) throw DegenerateInputError("adamerge: empty unlabeled set");
    }
    if (cfg.steps < 0) throw UsageError("adamerge: negative step count");

    const int64_t coeff_count = cfg.mode == CoeffMode::task_wise ? T : T * L;
    Tensor lambdas = Tensor::full({coeff_count}, static_cast<float>(cfg.init));

    auto coefficients_of = [&](const Tensor& lam) {
        MergeCoefficients c;
        c.mode = cfg.mode;
        c.tasks = T;
        c.layers = L;
        c.values.resize(static_cast<size_t>(lam.size()));
        for (int64_t i = 0; i < lam.size(); ++i) c.values[static_cast<size_t>(i)] = lam[i];
        return c;
    };

    auto full_set_entropy = [&](const Tensor& lam) {
        const ParameterMap merged = merge_with_coefficients(theta0, vectors, coefficients_of(lam));
        double acc = 0.0;
        for (int32_t t = 0; t < T; ++t) {
            const Tensor feats = extract_features(merged, unlabeled_per_task[static_cast<size_t>(t)]);
            acc += mean_entropy_of(head_logits(heads[static_cast<size_t>(t)], feats));
        }
        return acc / static_cast<double>(T);
    };

    AdaMergeResult result;
    result.entropy_trace.push_back(full_set_entropy(lambdas));

    Adam adam(AdamConfig{cfg.lr, 0.9, 0.999, cfg.eps});
    std::vector<Rng> batch_rng;
    for (int32_t t = 0; t < T; ++t) {
        batch_rng.push_back(Rng(cfg.seed).fork(0xada0 + static_cast<uint64_t>(t)));
    }

    std::vector<size_t> weight_slot(static_cast<size_t>(L)), bias_slot(static_cast<size_t>(L));
    for (int64_t l = 0; l < L; ++l) {
        const std::string prefix = "encoder/" + std::to_string(l) + "/";
        for (size_t i = 0; i < theta0.size(); ++i) {
            if (theta0.name(i) == prefix + "weight") weight_slot[static_cast<size_t>(l)] = i;
            if (theta0.name(i) == prefix + "bias") bias_slot[static_cast<size_t>(l)] = i;
        }
    }

    for (int step = 0; step < cfg.steps; ++step) {
        Tape tape;
        const Value lam = tape.leaf(lambdas);

        // Combined parameters for this step, one node per layer tensor.
        std::vector<Value> combined(theta0.size());
        for (size_t i = 0; i < theta0.size(); ++i) {
            const std::string& name = theta0.name(i);
            std::vector<Tensor> deltas;
            std::vector<int32_t> index;
            deltas.reserve(static_cast<size_t>(T));
            for (int32_t t = 0; t < T; ++t) {
                deltas.push_back(vectors[static_cast<size_t>(t)].delta.tensor(i));
                index.push_back(cfg.mode == CoeffMode::task_wise ? t
                                                                 : t * L + layer_index_of(name));
            }
            combined[i] = tape.combine(lam, theta0.tensor(i), std::move(deltas), std::move(index));
        }

        Value total{};
        for (int32_t t = 0; t < T; ++t) {
            const Tensor& pool = unlabeled_per_task[static_cast<size_t>(t)];
            Tensor batch;
            if (cfg.batch <= 0 || cfg.batch >= pool.rows()) {
                batch = pool;
            } else {
                batch = Tensor({cfg.batch, pool.cols()});
                for (int64_t i = 0; i < cfg.batch; ++i) {
                    const int64_t idx = batch_rng[static_cast<size_t>(t)].uniform_int(pool.rows());
                    for (int64_t j = 0; j < pool.cols(); ++j) {
                        batch.at(i, j) = pool.at(idx, j);
                    }
                }
            }
            Value h = tape.constant(std::move(batch));
            for (int64_t l = 0; l < theta0.layer_count; ++l) {
                h = tape.add_bias(tape.matmul(h, combined[weight_slot[static_cast<size_t>(l)]]),
                                  combined[bias_slot[static_cast<size_t>(l)]]);
                if (l < theta0.layer_count - 1) h = tape.relu(h);
            }
            const TaskHead& head = heads[static_cast<size_t>(t)];
            Value logits = tape.add_bias(tape.matmul(h, tape.constant(head.weight)),
                                         tape.constant(head.bias));
            Value ent = tape.mean_softmax_entropy(logits);
            total = total.valid() ? tape.add(total, ent) : ent;
        }
        Value objective = tape.scale(total, 1.0 / static_cast<double>(T));

        const std::vector<Tensor> grads = tape.gradients(objective, {lam});
        adam.step({&lambdas}, grads);

        if ((step + 1) % cfg.monitor_every == 0 || step + 1 == cfg.steps) {
            result.entropy_trace.push_back(full_set_entropy(lambdas));
        }
    }

    result.coefficients = coefficients_of(lambdas);
    result.merged = merge_with_coefficients(theta0, vectors, result.coefficients);
    return result;
}

}  // namespace msrg
