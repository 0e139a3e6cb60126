#include "msrg/task_models.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "msrg/errors.hpp"
#include "msrg/kernels.hpp"
#include "msrg/tape.hpp"

namespace msrg {

namespace {

std::string layer_name(int64_t layer, const char* part) {
    return "encoder/" + std::to_string(layer) + "/" + part;
}

// Orthonormal matrix via modified Gram-Schmidt on I + strength * Gaussian.
// strength 0 gives the identity; large strength gives a fully random frame.
std::vector<double> random_rotation(int64_t d, double strength, Rng& rng) {
    std::vector<double> q(static_cast<size_t>(d * d));
    for (auto& v : q) v = strength * rng.normal();
    for (int64_t i = 0; i < d; ++i) q[static_cast<size_t>(i * d + i)] += 1.0;
    for (int64_t i = 0; i < d; ++i) {
        double* qi = q.data() + i * d;
        for (int64_t j = 0; j < i; ++j) {
            const double* qj = q.data() + j * d;
            double proj = 0.0;
            for (int64_t c = 0; c < d; ++c) proj += qi[c] * qj[c];
            for (int64_t c = 0; c < d; ++c) qi[c] -= proj * qj[c];
        }
        double norm = 0.0;
        for (int64_t c = 0; c < d; ++c) norm += qi[c] * qi[c];
        norm = std::sqrt(norm);
        if (norm < 1e-12) throw NumericalError("random_rotation: rank-deficient draw");
        for (int64_t c = 0; c < d; ++c) qi[c] /= norm;
    }
    return q;
}

std::vector<int32_t> balanced_labels(int64_t n, int64_t classes, Rng& rng) {
    std::vector<int32_t> y(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) y[static_cast<size_t>(i)] = static_cast<int32_t>(i % classes);
    const std::vector<int64_t> perm = rng.permutation(n);
    std::vector<int32_t> shuffled(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        shuffled[static_cast<size_t>(i)] = y[static_cast<size_t>(perm[static_cast<size_t>(i)])];
    }
    return shuffled;
}

Tensor sample_split(const std::vector<double>& means, const std::vector<double>& rotation,
                    const std::vector<int32_t>& labels, int64_t d, double noise, Rng& rng) {
    const int64_t n = static_cast<int64_t>(labels.size());
    Tensor x({n, d});
    std::vector<double> raw(static_cast<size_t>(d));
    for (int64_t i = 0; i < n; ++i) {
        const double* mu = means.data() + labels[static_cast<size_t>(i)] * d;
        for (int64_t c = 0; c < d; ++c) raw[static_cast<size_t>(c)] = mu[c] + noise * rng.normal();
        // x_i = R * raw
        for (int64_t r = 0; r < d; ++r) {
            double acc = 0.0;
            for (int64_t c = 0; c < d; ++c) acc += rotation[r * d + c] * raw[static_cast<size_t>(c)];
            x.at(i, r) = static_cast<float>(acc);
        }
    }
    return x;
}

}  // namespace

std::vector<TaskDataset> make_tasks(uint64_t seed, int task_count, int64_t input_dim,
                                    const DataConfig& cfg) {
    if (task_count < 2) throw UsageError("make_tasks: need at least 2 tasks");
    if (cfg.classes_per_task < 2) throw UsageError("make_tasks: need at least 2 classes per task");
    if (cfg.train_per_task < cfg.classes_per_task || cfg.test_per_task < cfg.classes_per_task) {
        throw UsageError("make_tasks: split sizes must cover every class");
    }

    Rng root(seed);
    std::vector<TaskDataset> tasks;
    tasks.reserve(static_cast<size_t>(task_count));
    for (int t = 0; t < task_count; ++t) {
        Rng rng = root.fork(static_cast<uint64_t>(t) + 1);
        TaskDataset ds;
        ds.task_id = t;
        ds.classes = cfg.classes_per_task;

        // Class means sit around a task-specific center so tasks occupy
        // different regions of input space.
        std::vector<double> center(static_cast<size_t>(input_dim));
        for (auto& v : center) {
            v = cfg.task_offset * rng.normal() / std::sqrt(static_cast<double>(input_dim));
        }
        std::vector<double> means(static_cast<size_t>(cfg.classes_per_task * input_dim));
        for (int64_t c = 0; c < cfg.classes_per_task; ++c) {
            for (int64_t j = 0; j < input_dim; ++j) {
                means[static_cast<size_t>(c * input_dim + j)] =
                    center[static_cast<size_t>(j)] +
                    cfg.mean_spread * rng.normal() / std::sqrt(static_cast<double>(input_dim));
            }
        }
        const std::vector<double> rotation =
            random_rotation(input_dim, cfg.rotation_strength, rng);

        ds.train_y = balanced_labels(cfg.train_per_task, cfg.classes_per_task, rng);
        ds.train_x = sample_split(means, rotation, ds.train_y, input_dim, cfg.noise, rng);
        ds.test_y = balanced_labels(cfg.test_per_task, cfg.classes_per_task, rng);
        ds.test_x = sample_split(means, rotation, ds.test_y, input_dim, cfg.noise, rng);
        ensure_finite(ds.train_x, "make_tasks");
        ensure_finite(ds.test_x, "make_tasks");
        tasks.push_back(std::move(ds));
    }
    return tasks;
}

ParameterMap init_encoder(const EncoderSpec& spec, Rng& rng) {
    if (spec.layers < 1 || spec.input_dim < 1 || spec.hidden_dim < 1 || spec.feature_dim < 1) {
        throw UsageError("init_encoder: all sizes must be positive");
    }
    ParameterMap map;
    map.kind = "encoder";
    map.feature_dim = spec.feature_dim;
    map.layer_count = spec.layers;
    for (int64_t l = 0; l < spec.layers; ++l) {
        const int64_t in = l == 0 ? spec.input_dim : spec.hidden_dim;
        const int64_t out = l == spec.layers - 1 ? spec.feature_dim : spec.hidden_dim;
        Tensor w({in, out});
        const double bound = std::sqrt(6.0 / static_cast<double>(in));
        for (int64_t i = 0; i < w.size(); ++i) {
            w[i] = static_cast<float>(rng.uniform(-bound, bound));
        }
        map.add(layer_name(l, "weight"), std::move(w));
        map.add(layer_name(l, "bias"), Tensor({out}));
    }
    return map;
}

TaskHead init_head(int32_t task_id, int64_t feature_dim, int64_t classes, Rng& rng) {
    TaskHead head;
    head.task_id = task_id;
    head.weight = Tensor({feature_dim, classes});
    const double bound = std::sqrt(6.0 / static_cast<double>(feature_dim));
    for (int64_t i = 0; i < head.weight.size(); ++i) {
        head.weight[i] = static_cast<float>(rng.uniform(-bound, bound));
    }
    head.bias = Tensor({classes});
    return head;
}

EncoderSpec spec_of(const ParameterMap& encoder) {
    EncoderSpec spec;
    spec.layers = encoder.layer_count;
    spec.feature_dim = encoder.feature_dim;
    const Tensor& w0 = encoder.get(layer_name(0, "weight"));
    spec.input_dim = w0.rows();
    spec.hidden_dim = encoder.layer_count > 1 ? w0.cols() : spec.feature_dim;
    return spec;
}

Tensor extract_features(const ParameterMap& encoder, const Tensor& inputs) {
    if (inputs.ndim() != 2) {
        throw DimensionError("extract_features: expected 2-d inputs, got " + inputs.shape_str());
    }
    const int64_t layers = encoder.layer_count;
    Tensor h = inputs;
    for (int64_t l = 0; l < layers; ++l) {
        const Tensor& w = encoder.get(layer_name(l, "weight"));
        const Tensor& b = encoder.get(layer_name(l, "bias"));
        if (h.cols() != w.rows()) {
            throw DimensionError("extract_features: layer " + std::to_string(l) + " expects width " +
                                 std::to_string(w.rows()) + ", got " + h.shape_str());
        }
        Tensor out({h.rows(), w.cols()});
        kernels::matmul_nn(h.data(), w.data(), out.data(), h.rows(), h.cols(), w.cols());
        for (int64_t i = 0; i < out.rows(); ++i) {
            kernels::add(out.data() + i * out.cols(), b.data(), out.data() + i * out.cols(),
                         out.cols());
        }
        if (l < layers - 1) kernels::relu(out.data(), out.data(), out.size());
        h = std::move(out);
    }
    ensure_finite(h, "extract_features");
    return h;
}

Tensor head_logits(const TaskHead& head, const Tensor& features) {
    if (features.cols() != head.weight.rows()) {
        throw DimensionError("head_logits: feature width " + features.shape_str() + " vs head " +
                             head.weight.shape_str());
    }
    Tensor logits({features.rows(), head.weight.cols()});
    kernels::matmul_nn(features.data(), head.weight.data(), logits.data(), features.rows(),
                       features.cols(), head.weight.cols());
    for (int64_t i = 0; i < logits.rows(); ++i) {
        kernels::add(logits.data() + i * logits.cols(), head.bias.data(),
                     logits.data() + i * logits.cols(), logits.cols());
    }
    return logits;
}

double evaluate(const ParameterMap& encoder, const TaskHead& head, const Tensor& x,
                const std::vector<int32_t>& y) {
    if (x.rows() == 0) throw DegenerateInputError("evaluate: empty split");
    if (x.rows() != static_cast<int64_t>(y.size())) {
        throw DimensionError("evaluate: inputs and labels disagree on sample count");
    }
    const Tensor logits = head_logits(head, extract_features(encoder, x));
    int64_t correct = 0;
    for (int64_t i = 0; i < logits.rows(); ++i) {
        int64_t best = 0;
        for (int64_t j = 1; j < logits.cols(); ++j) {
            if (logits.at(i, j) > logits.at(i, best)) best = j;
        }
        if (best == y[static_cast<size_t>(i)]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(logits.rows());
}

namespace {

struct Trainer {
    // Mutable copies of every trainable tensor, re-taped each step.
    ParameterMap encoder;
    TaskHead head;
    Adam adam;

    Trainer(ParameterMap enc, TaskHead hd, const AdamConfig& cfg)
        : encoder(std::move(enc)), head(std::move(hd)), adam(cfg) {}

    double batch_loss_and_step(const Tensor& bx, const std::vector<int32_t>& by, bool update) {
        Tape tape;
        std::vector<Value> leaves;
        std::vector<Tensor*> tensors;
        Value h = tape.constant(bx);
        for (int64_t l = 0; l < encoder.layer_count; ++l) {
            Tensor& w = encoder.get(layer_name(l, "weight"));
            Tensor& b = encoder.get(layer_name(l, "bias"));
            Value wv = tape.leaf(w);
            Value bv = tape.leaf(b);
            leaves.push_back(wv);
            tensors.push_back(&w);
            leaves.push_back(bv);
            tensors.push_back(&b);
            h = tape.add_bias(tape.matmul(h, wv), bv);
            if (l < encoder.layer_count - 1) h = tape.relu(h);
        }
        Value wv = tape.leaf(head.weight);
        Value bv = tape.leaf(head.bias);
        leaves.push_back(wv);
        tensors.push_back(&head.weight);
        leaves.push_back(bv);
        tensors.push_back(&head.bias);
        Value logits = tape.add_bias(tape.matmul(h, wv), bv);
        Value loss = tape.mean_cross_entropy(logits, by);
        if (update) {
            const std::vector<Tensor> grads = tape.gradients(loss, leaves);
            adam.step(tensors, grads);
        }
        return tape.scalar(loss);
    }
};

FitResult fit(ParameterMap encoder, TaskHead head, const Tensor& x, const std::vector<int32_t>& y,
              int steps, uint64_t seed, const TrainConfig& cfg) {
    if (steps < 0) throw UsageError("fit: negative step count");
    const int64_t n = x.rows();
    if (n == 0) throw DegenerateInputError("fit: empty training set");
    Trainer trainer(std::move(encoder), std::move(head), cfg.adam);

    FitResult result;
    result.initial_loss = trainer.batch_loss_and_step(x, y, /*update=*/false);

    Rng batch_rng = Rng(seed).fork(0x42a7c4);
    const int64_t batch = std::min<int64_t>(cfg.batch, n);
    for (int step = 0; step < steps; ++step) {
        Tensor bx({batch, x.cols()});
        std::vector<int32_t> by(static_cast<size_t>(batch));
        for (int64_t i = 0; i < batch; ++i) {
            const int64_t idx = batch_rng.uniform_int(n);
            std::memcpy(bx.data() + i * x.cols(), x.data() + idx * x.cols(),
                        static_cast<size_t>(x.cols()) * 4);
            by[static_cast<size_t>(i)] = y[static_cast<size_t>(idx)];
        }
        trainer.batch_loss_and_step(bx, by, /*update=*/true);
    }

    result.final_loss = trainer.batch_loss_and_step(x, y, /*update=*/false);
    if (!std::isfinite(result.final_loss)) throw NumericalError("fit: training diverged");
    result.encoder = std::move(trainer.encoder);
    result.head = std::move(trainer.head);
    return result;
}

}  // namespace

FitResult pretrain(const EncoderSpec& spec, const std::vector<TaskDataset>& tasks, int steps,
                   uint64_t seed, const TrainConfig& cfg) {
    if (tasks.empty()) throw UsageError("pretrain: no tasks");
    if (!(cfg.pretrain_fraction > 0.0 && cfg.pretrain_fraction <= 1.0)) {
        throw UsageError("pretrain: pretrain_fraction must be in (0, 1]");
    }
    int64_t total = 0;
    int64_t global_classes = 0;
    std::vector<int64_t> take;
    for (const TaskDataset& t : tasks) {
        const int64_t n = std::max<int64_t>(
            t.classes, static_cast<int64_t>(std::ceil(cfg.pretrain_fraction *
                                                      static_cast<double>(t.train_x.rows()))));
        take.push_back(std::min<int64_t>(n, t.train_x.rows()));
        total += take.back();
        global_classes += t.classes;
    }
    Tensor x({total, spec.input_dim});
    std::vector<int32_t> y(static_cast<size_t>(total));
    int64_t row = 0;
    int32_t offset = 0;
    for (size_t ti = 0; ti < tasks.size(); ++ti) {
        const TaskDataset& t = tasks[ti];
        if (t.train_x.cols() != spec.input_dim) {
            throw DimensionError("pretrain: task input width mismatch");
        }
        std::memcpy(x.data() + row * spec.input_dim, t.train_x.data(),
                    static_cast<size_t>(take[ti] * spec.input_dim) * 4);
        for (int64_t i = 0; i < take[ti]; ++i) {
            y[static_cast<size_t>(row + i)] = offset + t.train_y[static_cast<size_t>(i)];
        }
        row += take[ti];
        offset += static_cast<int32_t>(t.classes);
    }

    Rng init_rng = Rng(seed).fork(0x1217);
    ParameterMap encoder = init_encoder(spec, init_rng);
    TaskHead head = init_head(-1, spec.feature_dim, global_classes, init_rng);
    return fit(std::move(encoder), std::move(head), x, y, steps, seed, cfg);
}

FitResult finetune(const ParameterMap& base, const TaskDataset& task, int steps, uint64_t seed,
                   const TrainConfig& cfg) {
    if (base.kind != "encoder") throw UsageError("finetune: base map is not an encoder");
    Rng init_rng = Rng(seed).fork(0x8f1e + static_cast<uint64_t>(task.task_id));
    TaskHead head = init_head(task.task_id, base.feature_dim, task.classes, init_rng);
    FitResult result = fit(base, std::move(head), task.train_x, task.train_y, steps, seed, cfg);
    result.head.task_id = task.task_id;
    return result;
}

void export_dataset_csv(const Tensor& x, const std::vector<int32_t>& y, const std::string& path) {
    if (x.rows() != static_cast<int64_t>(y.size())) {
        throw DimensionError("export_dataset_csv: inputs and labels disagree on sample count");
    }
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw CheckpointError(CheckpointError::Kind::io, "cannot open '" + path + "'");
    char buf[64];
    for (int64_t i = 0; i < x.rows(); ++i) {
        for (int64_t j = 0; j < x.cols(); ++j) {
            std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(x.at(i, j)));
            os << buf << ",";
        }
        os << y[static_cast<size_t>(i)] << "\n";
    }
    if (!os) throw CheckpointError(CheckpointError::Kind::io, "write failed for '" + path + "'");
}

void import_dataset_csv(const std::string& path, Tensor& x, std::vector<int32_t>& y) {
    std::ifstream is(path);
    if (!is) throw CheckpointError(CheckpointError::Kind::io, "cannot open '" + path + "'");
    std::vector<float> values;
    std::vector<int32_t> labels;
    int64_t cols = -1;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (cells.size() < 2) throw UsageError("dataset csv: malformed row in '" + path + "'");
        const int64_t row_cols = static_cast<int64_t>(cells.size()) - 1;
        if (cols < 0) cols = row_cols;
        if (cols != row_cols) throw UsageError("dataset csv: ragged rows in '" + path + "'");
        for (int64_t j = 0; j < cols; ++j) {
            values.push_back(std::strtof(cells[static_cast<size_t>(j)].c_str(), nullptr));
        }
        labels.push_back(static_cast<int32_t>(std::strtol(cells.back().c_str(), nullptr, 10)));
    }
    const int64_t rows = static_cast<int64_t>(labels.size());
    x = Tensor({rows, cols < 0 ? 0 : cols}, std::move(values));
    y = std::move(labels);
}

ParameterMap head_to_map(const TaskHead& head) {
    ParameterMap map;
    map.kind = "head";
    map.feature_dim = head.weight.rows();
    map.layer_count = 1;
    map.add("head/weight", head.weight);
    map.add("head/bias", head.bias);
    return map;
}

TaskHead head_from_map(const ParameterMap& map) {
    if (map.kind != "head") throw UsageError("head_from_map: map kind is '" + map.kind + "'");
    TaskHead head;
    head.weight = map.get("head/weight");
    head.bias = map.get("head/bias");
    return head;
}

}  // namespace msrg
