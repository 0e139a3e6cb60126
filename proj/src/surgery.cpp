#include "msrg/surgery.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "msrg/adam.hpp"
#include "msrg/errors.hpp"
#include "msrg/kernels.hpp"
#include "msrg/rng.hpp"

namespace msrg {

SurgeryBundle make_bundle(ParameterMap merged, const std::vector<TaskHead>& heads, int64_t rank,
                          uint64_t seed) {
    if (rank < 1) throw UsageError("surgery: rank must be at least 1");
    const int64_t k = merged.feature_dim;
    if (k < 1) throw UsageError("surgery: merged map has no feature dimension");
    SurgeryBundle bundle;
    bundle.merged = std::move(merged);
    bundle.heads = heads;
    const double bound = 1.0 / std::sqrt(static_cast<double>(k));
    for (size_t t = 0; t < heads.size(); ++t) {
        Rng rng = Rng(seed).fork(0x5169 + t);
        SurgeryModule m;
        m.task_id = static_cast<int32_t>(t);
        m.w_down = Tensor({rank, k});
        for (int64_t i = 0; i < m.w_down.size(); ++i) {
            m.w_down[i] = static_cast<float>(rng.uniform(-bound, bound));
        }
        m.w_up = Tensor({k, rank});  // zero: surgery starts as the identity
        bundle.modules.push_back(std::move(m));
    }
    return bundle;
}

namespace {

void check_width(const SurgeryModule& module, const Tensor& z) {
    if (z.ndim() != 2 || z.cols() != module.feature_dim()) {
        throw DimensionError("surgery: feature width " + z.shape_str() + " does not match k=" +
                             std::to_string(module.feature_dim()));
    }
}

}  // namespace

Tensor adapter_forward(const SurgeryModule& module, const Tensor& z) {
    check_width(module, z);
    const int64_t n = z.rows(), k = module.feature_dim(), r = module.rank();
    Tensor h({n, r});
    kernels::matmul_nt(z.data(), module.w_down.data(), h.data(), n, k, r);
    kernels::relu(h.data(), h.data(), h.size());
    Tensor out({n, k});
    kernels::matmul_nt(h.data(), module.w_up.data(), out.data(), n, r, k);
    ensure_finite(out, "adapter_forward");
    return out;
}

Tensor apply_surgery(const SurgeryModule& module, const Tensor& z) {
    const Tensor phi = adapter_forward(module, z);
    Tensor out(z.shape());
    kernels::sub(z.data(), phi.data(), out.data(), out.size());
    return out;
}

int64_t surgery_param_count(int64_t feature_dim, int64_t rank, int64_t tasks) {
    if (feature_dim < 1 || rank < 1 || tasks < 1) {
        throw UsageError("surgery_param_count: all arguments must be positive");
    }
    return 2 * feature_dim * rank * tasks;
}

std::vector<int64_t> visible_indices(int64_t n, double ratio, uint64_t seed, int32_t task_id) {
    if (!(ratio > 0.0 && ratio <= 1.0)) throw UsageError("data ratio must be in (0, 1]");
    if (n <= 0) throw DegenerateInputError("visible_indices: no samples");
    Rng rng = Rng(seed).fork(0x5ab5 + static_cast<uint64_t>(task_id));
    std::vector<int64_t> perm = rng.permutation(n);
    const int64_t count = std::min<int64_t>(
        n, static_cast<int64_t>(std::ceil(ratio * static_cast<double>(n) - 1e-9)));
    perm.resize(static_cast<size_t>(count > 0 ? count : 1));
    return perm;
}

namespace {

Tensor gather_rows(const Tensor& x, const std::vector<int64_t>& idx, int64_t lo, int64_t hi) {
    Tensor out({hi - lo, x.cols()});
    for (int64_t i = lo; i < hi; ++i) {
        std::memcpy(out.data() + (i - lo) * x.cols(), x.data() + idx[static_cast<size_t>(i)] * x.cols(),
                    static_cast<size_t>(x.cols()) * 4);
    }
    return out;
}

// Drops rows whose target has zero L2 norm (only neg_cosine needs this).
// Returns the number of rows removed.
int64_t drop_zero_norm_rows(Tensor& pred, Tensor& target) {
    const int64_t n = target.rows(), k = target.cols();
    std::vector<int64_t> keep;
    for (int64_t i = 0; i < n; ++i) {
        if (kernels::sum_sq(target.data() + i * k, k) > 0.0) keep.push_back(i);
    }
    if (static_cast<int64_t>(keep.size()) == n) return 0;
    Tensor p({static_cast<int64_t>(keep.size()), k});
    Tensor t({static_cast<int64_t>(keep.size()), k});
    for (size_t i = 0; i < keep.size(); ++i) {
        std::memcpy(p.data() + static_cast<int64_t>(i) * k, pred.data() + keep[i] * k,
                    static_cast<size_t>(k) * 4);
        std::memcpy(t.data() + static_cast<int64_t>(i) * k, target.data() + keep[i] * k,
                    static_cast<size_t>(k) * 4);
    }
    const int64_t dropped = n - static_cast<int64_t>(keep.size());
    pred = std::move(p);
    target = std::move(t);
    return dropped;
}

struct FrozenGuard {
    // Checksums of everything training must not touch.
    const SurgeryBundle& bundle;
    const std::vector<const ParameterMap*>& individuals;
    uint64_t merged_sum;
    std::vector<uint64_t> individual_sums;
    uint64_t heads_sum;

    FrozenGuard(const SurgeryBundle& b, const std::vector<const ParameterMap*>& ind)
        : bundle(b), individuals(ind) {
        merged_sum = checksum(b.merged);
        for (const ParameterMap* m : ind) individual_sums.push_back(checksum(*m));
        heads_sum = heads_checksum();
    }

    uint64_t heads_checksum() const {
        uint64_t h = 0xcbf29ce484222325ULL;
        for (const TaskHead& head : bundle.heads) {
            h = fnv1a(head.weight.data(), static_cast<size_t>(head.weight.size()) * 4, h);
            h = fnv1a(head.bias.data(), static_cast<size_t>(head.bias.size()) * 4, h);
        }
        return h;
    }

    void verify() const {
        if (checksum(bundle.merged) != merged_sum) {
            throw std::logic_error("surgery training modified the merged model");
        }
        for (size_t i = 0; i < individuals.size(); ++i) {
            if (checksum(*individuals[i]) != individual_sums[i]) {
                throw std::logic_error("surgery training modified an individual model");
            }
        }
        if (heads_checksum() != heads_sum) {
            throw std::logic_error("surgery training modified a task head");
        }
    }
};

struct SurgerySession {
    SurgeryBundle& bundle;
    const std::vector<const ParameterMap*>& individuals;
    const std::vector<Tensor>& inputs;
    const SurgeryTrainConfig& cfg;
    size_t T;
    std::vector<std::vector<int64_t>> visible;  // per-task sample indices
    // Cached features over the visible set (filled when cfg.cache_targets).
    std::vector<Tensor> cached_merged;
    std::vector<Tensor> cached_individual;
    SurgeryTrace trace;
    int64_t zero_norm_dropped = 0;

    SurgerySession(SurgeryBundle& b, const std::vector<const ParameterMap*>& ind,
                   const std::vector<Tensor>& in, const SurgeryTrainConfig& c)
        : bundle(b), individuals(ind), inputs(in), cfg(c), T(b.modules.size()) {
        if (T == 0) throw UsageError("surgery: bundle has no modules");
        if (ind.size() != T || in.size() != T) {
            throw UsageError("surgery: need one individual model and one input set per task");
        }
        for (size_t t = 0; t < T; ++t) {
            if (individuals[t]->feature_dim != bundle.merged.feature_dim) {
                throw DimensionError("surgery: feature dim mismatch for task " + std::to_string(t));
            }
            if (inputs[t].rows() == 0) {
                throw DegenerateInputError("surgery: task " + std::to_string(t) + " has no inputs");
            }
            visible.push_back(visible_indices(inputs[t].rows(), cfg.data_ratio, cfg.seed,
                                              static_cast<int32_t>(t)));
        }
        if (cfg.cache_targets) {
            for (size_t t = 0; t < T; ++t) {
                const Tensor vis = gather_rows(inputs[t], visible[t], 0,
                                               static_cast<int64_t>(visible[t].size()));
                cached_merged.push_back(extract_features(bundle.merged, vis));
                cached_individual.push_back(extract_features(*individuals[t], vis));
            }
        }
    }

    // Features for the given 0-based positions in task t's visible stream.
    void features_for(size_t t, const std::vector<int64_t>& positions, Tensor& z_mtl,
                      Tensor& z_ind) const {
        if (cfg.cache_targets) {
            z_mtl = gather_rows(cached_merged[t], positions, 0,
                                static_cast<int64_t>(positions.size()));
            z_ind = gather_rows(cached_individual[t], positions, 0,
                                static_cast<int64_t>(positions.size()));
        } else {
            std::vector<int64_t> rows;
            rows.reserve(positions.size());
            for (int64_t pos : positions) rows.push_back(visible[t][static_cast<size_t>(pos)]);
            const Tensor batch = gather_rows(inputs[t], rows, 0, static_cast<int64_t>(rows.size()));
            z_mtl = extract_features(bundle.merged, batch);
            z_ind = extract_features(*individuals[t], batch);
        }
    }

    std::vector<int64_t> all_positions(size_t t) const {
        std::vector<int64_t> pos(visible[t].size());
        for (size_t i = 0; i < pos.size(); ++i) pos[i] = static_cast<int64_t>(i);
        return pos;
    }

    // Eq-2 style objective over the full visible set: sum over tasks of the
    // chosen per-task mean loss.
    double full_objective() {
        double total = 0.0;
        for (size_t t = 0; t < T; ++t) {
            Tensor z_mtl, z_ind;
            features_for(t, all_positions(t), z_mtl, z_ind);
            Tensor pred = apply_surgery(bundle.modules[t], z_mtl);
            if (cfg.loss == LossKind::neg_cosine) {
                zero_norm_dropped += drop_zero_norm_rows(pred, z_ind);
            }
            Tape tape;
            total += tape.scalar(
                tape.loss(cfg.loss, tape.constant(pred), std::move(z_ind), cfg.smooth_l1_delta));
        }
        return total;
    }

    // One joint update from the given per-task stream positions. Records the
    // pre-update batch losses in the trace.
    void joint_step(const std::vector<std::vector<int64_t>>& positions, Adam& adam) {
        Tape tape;
        std::vector<Value> leaves;
        std::vector<Tensor*> tensors;
        std::vector<double> batch_losses(T, 0.0);
        Value total{};
        for (size_t t = 0; t < T; ++t) {
            SurgeryModule& m = bundle.modules[t];
            Value wd = tape.leaf(m.w_down);
            Value wu = tape.leaf(m.w_up);
            leaves.push_back(wd);
            tensors.push_back(&m.w_down);
            leaves.push_back(wu);
            tensors.push_back(&m.w_up);
            // Adam wants a fixed parameter list; tasks with no samples this
            // step contribute no loss and receive exact-zero gradients.
            if (positions[t].empty()) continue;

            Tensor z_mtl, z_ind;
            features_for(t, positions[t], z_mtl, z_ind);
            if (cfg.loss == LossKind::neg_cosine) {
                // Pred rows equal z rows at this point only when w_up == 0;
                // filter on targets, which is what training compares against.
                Tensor tmp = z_mtl;
                const int64_t dropped = drop_zero_norm_rows(tmp, z_ind);
                if (dropped > 0) {
                    z_mtl = std::move(tmp);
                    zero_norm_dropped += dropped;
                }
                if (z_mtl.rows() == 0) continue;  // whole batch degenerate
            }

            Value z = tape.constant(std::move(z_mtl));
            Value h = tape.relu(tape.matmul(z, tape.transpose(wd)));
            Value phi = tape.matmul(h, tape.transpose(wu));
            Value pred = tape.sub(z, phi);
            Value loss = tape.loss(cfg.loss, pred, std::move(z_ind), cfg.smooth_l1_delta);
            batch_losses[t] = tape.scalar(loss);
            total = total.valid() ? tape.add(total, loss) : loss;
        }
        if (total.valid()) {
            const std::vector<Tensor> grads = tape.gradients(total, leaves);
            adam.step(tensors, grads);
        }
        double mean = 0.0;
        for (double v : batch_losses) mean += v;
        trace.per_task_loss.push_back(std::move(batch_losses));
        trace.mean_loss.push_back(mean / static_cast<double>(T));
    }

    void finish() {
        trace.final_objective = full_objective();
        if (!std::isfinite(trace.final_objective)) {
            throw NumericalError("surgery training diverged");
        }
        if (zero_norm_dropped > 0) {
            trace.notes.push_back("neg_cosine: skipped " + std::to_string(zero_norm_dropped) +
                                  " zero-norm target rows");
        }
    }
};

}  // namespace

SurgeryTrace train_offline(SurgeryBundle& bundle,
                           const std::vector<const ParameterMap*>& individual_models,
                           const std::vector<Tensor>& unlabeled_per_task,
                           const SurgeryTrainConfig& cfg) {
    if (cfg.iterations < 0) throw UsageError("surgery: negative iteration count");
    if (cfg.batch < 1) throw UsageError("surgery: batch size must be positive");
    FrozenGuard guard(bundle, individual_models);
    SurgerySession session(bundle, individual_models, unlabeled_per_task, cfg);
    session.trace.initial_objective = session.full_objective();

    Adam adam(AdamConfig{cfg.lr, cfg.beta1, cfg.beta2, 1e-8});
    std::vector<Rng> rng;
    for (size_t t = 0; t < session.T; ++t) {
        rng.push_back(Rng(cfg.seed).fork(0x0ff1 + t));
    }

    for (int iter = 0; iter < cfg.iterations; ++iter) {
        std::vector<std::vector<int64_t>> positions(session.T);
        for (size_t t = 0; t < session.T; ++t) {
            const int64_t pool = static_cast<int64_t>(session.visible[t].size());
            const int64_t b = std::min<int64_t>(cfg.batch, pool);
            for (int64_t i = 0; i < b; ++i) {
                positions[t].push_back(rng[t].uniform_int(pool));
            }
        }
        session.joint_step(positions, adam);
    }

    session.finish();
    guard.verify();
    return session.trace;
}

SurgeryTrace train_online(SurgeryBundle& bundle,
                          const std::vector<const ParameterMap*>& individual_models,
                          const std::vector<Tensor>& unlabeled_per_task,
                          const SurgeryTrainConfig& cfg, int64_t max_steps) {
    FrozenGuard guard(bundle, individual_models);
    SurgerySession session(bundle, individual_models, unlabeled_per_task, cfg);
    session.trace.initial_objective = session.full_objective();

    Adam adam(AdamConfig{cfg.lr, cfg.beta1, cfg.beta2, 1e-8});
    int64_t stream_len = 0;
    for (size_t t = 0; t < session.T; ++t) {
        stream_len = std::max<int64_t>(stream_len, static_cast<int64_t>(session.visible[t].size()));
    }
    if (max_steps >= 0) stream_len = std::min(stream_len, max_steps);

    for (int64_t step = 0; step < stream_len; ++step) {
        std::vector<std::vector<int64_t>> positions(session.T);
        for (size_t t = 0; t < session.T; ++t) {
            if (step < static_cast<int64_t>(session.visible[t].size())) {
                positions[t].push_back(step);
            }
        }
        session.joint_step(positions, adam);
    }

    session.finish();
    guard.verify();
    return session.trace;
}

ParameterMap surgery_to_map(const std::vector<SurgeryModule>& modules) {
    if (modules.empty()) throw UsageError("surgery_to_map: no modules");
    ParameterMap map;
    map.kind = "surgery";
    map.feature_dim = modules[0].feature_dim();
    map.layer_count = static_cast<int64_t>(modules.size());
    for (const SurgeryModule& m : modules) {
        const std::string prefix = "surgery/" + std::to_string(m.task_id) + "/";
        map.add(prefix + "w_down", m.w_down);
        map.add(prefix + "w_up", m.w_up);
    }
    return map;
}

std::vector<SurgeryModule> surgery_from_map(const ParameterMap& map) {
    if (map.kind != "surgery") throw UsageError("surgery_from_map: map kind is '" + map.kind + "'");
    std::vector<SurgeryModule> modules;
    for (int32_t t = 0;; ++t) {
        const std::string prefix = "surgery/" + std::to_string(t) + "/";
        if (!map.has(prefix + "w_down")) break;
        SurgeryModule m;
        m.task_id = t;
        m.w_down = map.get(prefix + "w_down");
        m.w_up = map.get(prefix + "w_up");
        modules.push_back(std::move(m));
    }
    if (modules.empty()) throw UsageError("surgery_from_map: no surgery tensors found");
    return modules;
}

void export_trace_csv(const SurgeryTrace& trace, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw CheckpointError(CheckpointError::Kind::io, "cannot open '" + path + "'");
    const size_t T = trace.per_task_loss.empty() ? 0 : trace.per_task_loss[0].size();
    os << "iteration";
    for (size_t t = 0; t < T; ++t) os << ",task_" << t;
    os << ",mean\n";
    char buf[64];
    for (size_t i = 0; i < trace.per_task_loss.size(); ++i) {
        os << i;
        for (double v : trace.per_task_loss[i]) {
            std::snprintf(buf, sizeof(buf), "%.9g", v);
            os << "," << buf;
        }
        std::snprintf(buf, sizeof(buf), "%.9g", trace.mean_loss[i]);
        os << "," << buf << "\n";
    }
    if (!os) throw CheckpointError(CheckpointError::Kind::io, "write failed for '" + path + "'");
}

}  // namespace msrg
