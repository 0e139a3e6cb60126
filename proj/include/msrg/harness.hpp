#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "msrg/checkpoint.hpp"
#include "msrg/diagnostics.hpp"
#include "msrg/merge.hpp"
#include "msrg/surgery.hpp"
#include "msrg/task_models.hpp"

namespace msrg {

inline constexpr const char* kVersionTag = "msrg 0.1.0";

enum class MergeMethod { average, task_arithmetic, ties, adamerging };

MergeMethod merge_method_from_string(const std::string& name);
const char* merge_method_name(MergeMethod method);
std::vector<MergeMethod> all_merge_methods();

struct MergeSettings {
    MergeMethod method = MergeMethod::task_arithmetic;
    double lambda = 0.3;        // task_arithmetic / ties
    double trim = 0.2;          // ties trim fraction
    CoeffMode mode = CoeffMode::layer_wise;  // adamerging
    int steps = 500;            // adamerging
    double lr = 1e-3;           // adamerging
    int batch = 4;              // adamerging unlabeled batch (0 = full set)
};

struct RunConfig {
    uint64_t seed = 0;
    int tasks = 8;
    EncoderSpec model;
    DataConfig data;
    TrainConfig train;
    MergeSettings merge;
    SurgeryTrainConfig surgery;
    std::string out_dir = "out";

    void validate() const;  // throws UsageError
    std::string to_json() const;
    static RunConfig from_json_text(const std::string& text);
    static RunConfig from_file(const std::string& path);
};

// Everything one seed's experiments need, in memory.
struct Workspace {
    RunConfig cfg;
    std::vector<TaskDataset> tasks;
    ParameterMap pretrained;
    TaskHead pretrain_head;  // over the global class space, throwaway
    std::vector<ParameterMap> individual;
    std::vector<TaskHead> heads;
    double pretrain_initial_loss = 0.0;
    double pretrain_final_loss = 0.0;
};

// The pretrained model's head for one task: the global pretraining head
// restricted to that task's class columns.
TaskHead pretrained_task_head(const Workspace& ws, size_t task);

Workspace prepare_workspace(const RunConfig& cfg);

std::vector<Tensor> test_inputs(const Workspace& ws);
std::vector<const ParameterMap*> individual_ptrs(const Workspace& ws);

struct MergeOutput {
    ParameterMap merged;
    MergeCoefficients coefficients;
    std::vector<double> entropy_trace;  // adamerging only
};

MergeOutput run_merge(const Workspace& ws, const MergeSettings& settings);

struct SurgeryOutput {
    SurgeryBundle bundle;
    SurgeryTrace trace;
};

// Builds a fresh bundle for the merged map and trains it on the workspace's
// unlabeled test inputs under cfg.surgery.
SurgeryOutput run_surgery(const Workspace& ws, ParameterMap merged,
                          const SurgeryTrainConfig& cfg);

struct MethodEval {
    std::string method;
    bool surgery = false;
    std::vector<double> per_task_accuracy;
    double average_accuracy = 0.0;
    BiasReport bias;
};

MethodEval evaluate_setup(const Workspace& ws, const ParameterMap& merged,
                          const SurgeryBundle* bundle, const std::string& method_name);

// ---- file pipeline (CLI subcommands) ----

std::string seed_dir(const RunConfig& cfg);

void cmd_prepare(const RunConfig& cfg);
void cmd_merge(const RunConfig& cfg);
void cmd_surgery(const RunConfig& cfg);
void cmd_report(const RunConfig& cfg);

// Reproduction suites over a seed grid. Writes CSV + verdict files under
// out_dir/reproduce/ and returns true when every trend check passes.
struct SuiteResult {
    std::string name;
    std::vector<std::string> csv_rows;       // header first
    std::vector<std::string> verdict_lines;  // "PASS ..." / "FAIL ..."
    bool pass = true;
};

SuiteResult run_suite(const RunConfig& base, const std::string& suite_name,
                      const std::vector<uint64_t>& seeds);
void write_suite_files(const RunConfig& base, const SuiteResult& result);

std::vector<std::string> all_suite_names();

// Aggregated summary over the seed directories found under out_dir.
struct SummaryRow {
    std::string method;
    bool surgery = false;
    std::vector<double> per_task_accuracy_mean;
    std::vector<double> per_task_accuracy_std;
    double average_accuracy_mean = 0.0;
    double average_accuracy_std = 0.0;
    double mean_bias_mean = 0.0;
    double mean_bias_std = 0.0;
};

struct ExperimentSummary {
    std::vector<uint64_t> seeds;
    std::vector<SummaryRow> rows;

    std::string to_json() const;
    std::string to_text() const;
};

uint64_t file_hash(const std::string& path);

}  // namespace msrg
