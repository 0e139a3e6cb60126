#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "msrg/checkpoint.hpp"
#include "msrg/task_models.hpp"
#include "msrg/tensor.hpp"

namespace msrg {

// Per-task parameter offset from the shared pretrained weights.
struct TaskVector {
    ParameterMap delta;
    int32_t task_id = 0;
};

enum class CoeffMode { scalar, task_wise, layer_wise };

const char* coeff_mode_name(CoeffMode mode);

struct MergeCoefficients {
    CoeffMode mode = CoeffMode::scalar;
    int32_t tasks = 0;
    int32_t layers = 0;
    // scalar: 1 value; task_wise: tasks values; layer_wise: tasks*layers
    // values, row-major by task then layer.
    std::vector<double> values;

    std::string to_json() const;
};

TaskVector task_vector(const ParameterMap& theta_t, const ParameterMap& theta0, int32_t task_id);

// Elementwise mean of the given maps.
ParameterMap weight_average(const std::vector<const ParameterMap*>& maps);

// theta0 + lambda * sum_t tau_t
ParameterMap task_arithmetic(const ParameterMap& theta0, const std::vector<TaskVector>& vectors,
                             double lambda);

// TRIM keeps, per task vector, the ceil(trim_fraction * n) entries of largest
// magnitude over the whole flattened vector (ties keep the lower flat index).
// ELECT picks per coordinate the sign with the larger summed magnitude among
// surviving entries (tie -> positive). MERGE averages surviving entries whose
// sign matches the election, 0 when none survive. Result: theta0 + lambda * merged.
ParameterMap ties_merge(const ParameterMap& theta0, const std::vector<TaskVector>& vectors,
                        double lambda, double trim_fraction);

struct AdaMergeConfig {
    CoeffMode mode = CoeffMode::layer_wise;  // task_wise or layer_wise
    double init = 0.3;
    double lr = 1e-3;
    // Adam epsilon for the coefficient optimizer. Entropy keeps a consistent
    // descent sign in the logit-sharpening direction, so a scale-free update
    // would walk the coefficients indefinitely; an epsilon on the gradient
    // scale stops them once the objective saturates.
    double eps = 1e-3;
    int steps = 500;
    // Unlabeled samples drawn per task per step; 0 = use every sample.
    int batch = 32;
    // Steps between full-set entropy evaluations for the monitor trace.
    int monitor_every = 25;
    uint64_t seed = 0;
};

struct AdaMergeResult {
    ParameterMap merged;
    MergeCoefficients coefficients;
    // Full-set objective sampled every monitor_every steps (first entry is
    // the initial objective, last is the final one).
    std::vector<double> entropy_trace;
};

// Learns merging coefficients by minimizing mean prediction entropy of the
// merged model over unlabeled inputs, one head per task. Coefficients start
// at cfg.init and are left unclamped.
AdaMergeResult adamerge(const ParameterMap& theta0, const std::vector<TaskVector>& vectors,
                        const std::vector<Tensor>& unlabeled_per_task,
                        const std::vector<TaskHead>& heads, const AdaMergeConfig& cfg);

// Materializes theta0 + sum_t c_t(l) * tau_t for any coefficient mode.
ParameterMap merge_with_coefficients(const ParameterMap& theta0,
                                     const std::vector<TaskVector>& vectors,
                                     const MergeCoefficients& coeffs);

// Layer index (0-based) of a parameter name like "encoder/3/weight".
int32_t layer_index_of(const std::string& param_name);

}  // namespace msrg
