#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "msrg/adam.hpp"
#include "msrg/checkpoint.hpp"
#include "msrg/rng.hpp"
#include "msrg/tensor.hpp"

namespace msrg {

// ReLU MLP encoder: input_dim -> hidden_dim x (layers-1) -> feature_dim.
// `layers` counts linear layers; the last one produces the representation
// (no activation on the output).
struct EncoderSpec {
    int64_t input_dim = 32;
    int64_t hidden_dim = 64;
    int64_t feature_dim = 16;
    int64_t layers = 3;
};

struct TaskDataset {
    int32_t task_id = 0;
    int64_t classes = 0;
    Tensor train_x;                 // [n_train, d]
    std::vector<int32_t> train_y;
    Tensor test_x;                  // [n_test, d]
    std::vector<int32_t> test_y;
};

struct TaskHead {
    int32_t task_id = 0;
    Tensor weight;  // [k, classes]
    Tensor bias;    // [classes]
};

struct DataConfig {
    int64_t train_per_task = 256;
    int64_t test_per_task = 512;
    int64_t classes_per_task = 2;
    double mean_spread = 3.0;   // scale of class means around the task center
    double noise = 0.5;         // within-class standard deviation
    double task_offset = 0.0;   // norm of each task's center in input space
    // 0 = all tasks share the coordinate frame, large = fully random per-task
    // rotation. Controls how related the tasks are.
    double rotation_strength = 0.15;
};

struct TrainConfig {
    int pretrain_steps = 2000;
    int finetune_steps = 500;
    int batch = 32;
    // Fraction of each task's training split that enters the mixed
    // pretraining sample; fine-tuning sees the full split.
    double pretrain_fraction = 0.08;
    AdamConfig adam;  // shared by pretraining, fine-tuning and surgery
};

// T synthetic classification tasks: Gaussian class clusters pushed through a
// task-specific random rotation. Deterministic per seed; class labels are
// balanced so every class appears in both splits.
std::vector<TaskDataset> make_tasks(uint64_t seed, int task_count, int64_t input_dim,
                                    const DataConfig& cfg);

ParameterMap init_encoder(const EncoderSpec& spec, Rng& rng);
TaskHead init_head(int32_t task_id, int64_t feature_dim, int64_t classes, Rng& rng);
EncoderSpec spec_of(const ParameterMap& encoder);

struct FitResult {
    ParameterMap encoder;
    TaskHead head;
    double initial_loss = 0.0;
    double final_loss = 0.0;
};

// Trains a fresh encoder + throwaway head on the mixed sample of all tasks
// (labels offset into one global class space). steps=0 returns the random
// initialization untouched.
FitResult pretrain(const EncoderSpec& spec, const std::vector<TaskDataset>& tasks, int steps,
                   uint64_t seed, const TrainConfig& cfg);

// Fine-tunes a copy of `base` plus a fresh task head on one task.
FitResult finetune(const ParameterMap& base, const TaskDataset& task, int steps, uint64_t seed,
                   const TrainConfig& cfg);

// Encoder forward pass; the single code path used for merged and individual
// models alike. inputs: [n, d] -> [n, k]. n may be zero.
Tensor extract_features(const ParameterMap& encoder, const Tensor& inputs);

Tensor head_logits(const TaskHead& head, const Tensor& features);

// Fraction of argmax-correct predictions (ties resolved to the lowest class).
double evaluate(const ParameterMap& encoder, const TaskHead& head, const Tensor& x,
                const std::vector<int32_t>& y);

// One row per sample: feature columns then the label. Floats are printed
// with enough digits to round-trip exactly.
void export_dataset_csv(const Tensor& x, const std::vector<int32_t>& y, const std::string& path);
void import_dataset_csv(const std::string& path, Tensor& x, std::vector<int32_t>& y);

ParameterMap head_to_map(const TaskHead& head);
TaskHead head_from_map(const ParameterMap& map);

}  // namespace msrg
