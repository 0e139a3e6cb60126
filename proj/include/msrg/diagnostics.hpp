#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "msrg/checkpoint.hpp"
#include "msrg/surgery.hpp"
#include "msrg/tensor.hpp"

namespace msrg {

// Mean absolute elementwise difference between two aligned feature matrices,
// normalized by both the feature dimension and the sample count.
double representation_bias(const Tensor& z_mtl, const Tensor& z_ind);

struct BiasReport {
    std::string method;
    bool surgery = false;
    uint64_t seed = 0;
    struct PerTask {
        int32_t task = 0;
        double d = 0.0;
        int64_t n = 0;
        int64_t k = 0;
    };
    std::vector<PerTask> per_task;
    double mean = 0.0;

    std::string to_json() const;
    std::string to_text() const;
};

// Per-task bias of the merged model against each individual model over the
// given inputs. When `bundle` is non-null its adapters are applied to the
// merged features first.
BiasReport bias_report(const ParameterMap& merged,
                       const std::vector<const ParameterMap*>& individual_models,
                       const SurgeryBundle* bundle, const std::vector<Tensor>& inputs_per_task,
                       const std::string& method, uint64_t seed);

// Exact PCA projection onto the top-2 principal components, fitted on the
// union of the two feature sets. Sign convention: the largest-magnitude
// loading of each component is positive.
struct Projection2D {
    Tensor merged_xy;      // [n, 2]
    Tensor individual_xy;  // [n, 2]
};

Projection2D project_2d(const Tensor& merged_feats, const Tensor& individual_feats);

// CSV rows: task, source (merged|individual), x, y.
void export_projection_csv(const std::vector<Projection2D>& per_task, const std::string& path);

}  // namespace msrg
