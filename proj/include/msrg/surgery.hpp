#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "msrg/checkpoint.hpp"
#include "msrg/tape.hpp"
#include "msrg/task_models.hpp"
#include "msrg/tensor.hpp"

namespace msrg {

// Per-task low-rank adapter. Applied as z_hat = z - w_up @ relu(w_down @ z^T)
// (batch form: z_hat = z - relu(z @ w_down^T) @ w_up^T). With w_up zero the
// adapter output is zero and surgery is the identity map.
struct SurgeryModule {
    int32_t task_id = 0;
    Tensor w_down;  // [r, k]
    Tensor w_up;    // [k, r]

    int64_t rank() const { return w_down.rows(); }
    int64_t feature_dim() const { return w_down.cols(); }
};

enum class Regime { offline, online };

struct SurgeryTrainConfig {
    LossKind loss = LossKind::l1;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    int iterations = 1000;
    int batch = 16;
    int64_t rank = 16;
    double data_ratio = 1.0;  // fraction of unlabeled inputs visible, (0, 1]
    Regime regime = Regime::offline;
    uint64_t seed = 0;
    double smooth_l1_delta = 1.0;
    // Precompute target features once instead of per batch; numerically
    // identical either way.
    bool cache_targets = false;
};

struct SurgeryBundle {
    ParameterMap merged;
    std::vector<SurgeryModule> modules;  // one per task, equal ranks
    std::vector<TaskHead> heads;         // one per task
};

// w_down ~ uniform(-1/sqrt(k), 1/sqrt(k)), w_up = 0, so the bundle starts as
// the identity map over merged features.
SurgeryBundle make_bundle(ParameterMap merged, const std::vector<TaskHead>& heads, int64_t rank,
                          uint64_t seed);

// Adapter output for a feature batch z: [n, k] -> [n, k].
Tensor adapter_forward(const SurgeryModule& module, const Tensor& z);

// z - adapter_forward(module, z)
Tensor apply_surgery(const SurgeryModule& module, const Tensor& z);

// Total trainable parameters: 2 * k * r per task, times T tasks.
int64_t surgery_param_count(int64_t feature_dim, int64_t rank, int64_t tasks);

struct SurgeryTrace {
    // Row per iteration: the batch loss of each task before that update.
    std::vector<std::vector<double>> per_task_loss;
    std::vector<double> mean_loss;
    // Objective over the full visible set at start and end of training.
    double initial_objective = 0.0;
    double final_objective = 0.0;
    // Warnings (e.g. zero-norm rows skipped under neg_cosine).
    std::vector<std::string> notes;
};

// Joint offline training of all modules against frozen individual models
// (one batch per task per iteration, objective summed over tasks). The
// merged map, individual models and heads are never modified.
SurgeryTrace train_offline(SurgeryBundle& bundle,
                           const std::vector<const ParameterMap*>& individual_models,
                           const std::vector<Tensor>& unlabeled_per_task,
                           const SurgeryTrainConfig& cfg);

// Single-pass streaming variant: batch size 1, every visible sample consumed
// exactly once in stream order. max_steps caps the number of stream steps
// (one sample per task per step); the default consumes the whole stream.
SurgeryTrace train_online(SurgeryBundle& bundle,
                          const std::vector<const ParameterMap*>& individual_models,
                          const std::vector<Tensor>& unlabeled_per_task,
                          const SurgeryTrainConfig& cfg, int64_t max_steps = -1);

// Deterministic subsample: first ceil(ratio * n) indices of a seed-shuffled
// permutation.
std::vector<int64_t> visible_indices(int64_t n, double ratio, uint64_t seed, int32_t task_id);

// Modules serialized as "surgery/{t}/w_down" and "surgery/{t}/w_up".
ParameterMap surgery_to_map(const std::vector<SurgeryModule>& modules);
std::vector<SurgeryModule> surgery_from_map(const ParameterMap& map);

void export_trace_csv(const SurgeryTrace& trace, const std::string& path);

}  // namespace msrg
