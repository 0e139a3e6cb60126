#include "msrg/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "json.hpp"
#include "msrg/errors.hpp"
#include "msrg/rng.hpp"

namespace fs = std::filesystem;

namespace msrg {

MergeMethod merge_method_from_string(const std::string& name) {
    if (name == "avg" || name == "average") return MergeMethod::average;
    if (name == "task-arith" || name == "task_arithmetic") return MergeMethod::task_arithmetic;
    if (name == "ties") return MergeMethod::ties;
    if (name == "adamerging") return MergeMethod::adamerging;
    throw UsageError("unknown merge method '" + name + "' (expected avg|task-arith|ties|adamerging)");
}

const char* merge_method_name(MergeMethod method) {
    switch (method) {
        case MergeMethod::average: return "avg";
        case MergeMethod::task_arithmetic: return "task-arith";
        case MergeMethod::ties: return "ties";
        case MergeMethod::adamerging: return "adamerging";
    }
    return "?";
}

std::vector<MergeMethod> all_merge_methods() {
    return {MergeMethod::average, MergeMethod::task_arithmetic, MergeMethod::ties,
            MergeMethod::adamerging};
}

void RunConfig::validate() const {
    if (tasks < 2) throw UsageError("config: tasks must be >= 2");
    if (model.input_dim < 1 || model.hidden_dim < 1 || model.feature_dim < 2 || model.layers < 1) {
        throw UsageError("config: bad model sizes");
    }
    if (data.train_per_task < data.classes_per_task ||
        data.test_per_task < data.classes_per_task || data.classes_per_task < 2) {
        throw UsageError("config: bad data sizes");
    }
    if (!(data.mean_spread > 0.0) || !(data.noise >= 0.0) || !(data.task_offset >= 0.0) ||
        !(data.rotation_strength >= 0.0)) {
        throw UsageError("config: bad data geometry");
    }
    if (train.pretrain_steps < 0 || train.finetune_steps < 0 || train.batch < 1) {
        throw UsageError("config: bad training settings");
    }
    if (!(train.pretrain_fraction > 0.0 && train.pretrain_fraction <= 1.0)) {
        throw UsageError("config: pretrain_fraction must be in (0, 1]");
    }
    if (!(train.adam.lr > 0.0)) throw UsageError("config: learning rate must be positive");
    if (!(merge.lambda == merge.lambda) || !(merge.trim > 0.0 && merge.trim <= 1.0)) {
        throw UsageError("config: bad merge settings");
    }
    if (merge.steps < 0 || !(merge.lr > 0.0)) throw UsageError("config: bad adamerging settings");
    if (surgery.iterations < 0 || surgery.batch < 1 || surgery.rank < 1) {
        throw UsageError("config: bad surgery settings");
    }
    if (!(surgery.data_ratio > 0.0 && surgery.data_ratio <= 1.0)) {
        throw UsageError("config: surgery data ratio must be in (0, 1]");
    }
    if (!(surgery.lr > 0.0) || !(surgery.smooth_l1_delta > 0.0)) {
        throw UsageError("config: bad surgery optimizer settings");
    }
    if (out_dir.empty()) throw UsageError("config: output directory must not be empty");
}

namespace {

nlohmann::json config_json(const RunConfig& c) {
    nlohmann::json j;
    j["version"] = kVersionTag;
    j["seed"] = c.seed;
    j["tasks"] = c.tasks;
    j["model"] = {{"input_dim", c.model.input_dim},
                  {"hidden_dim", c.model.hidden_dim},
                  {"feature_dim", c.model.feature_dim},
                  {"layers", c.model.layers}};
    j["data"] = {{"train_per_task", c.data.train_per_task},
                 {"test_per_task", c.data.test_per_task},
                 {"classes_per_task", c.data.classes_per_task},
                 {"mean_spread", c.data.mean_spread},
                 {"noise", c.data.noise},
                 {"task_offset", c.data.task_offset},
                 {"rotation_strength", c.data.rotation_strength}};
    j["train"] = {{"pretrain_steps", c.train.pretrain_steps},
                  {"finetune_steps", c.train.finetune_steps},
                  {"batch", c.train.batch},
                  {"pretrain_fraction", c.train.pretrain_fraction},
                  {"lr", c.train.adam.lr}};
    j["merge"] = {{"method", merge_method_name(c.merge.method)},
                  {"lambda", c.merge.lambda},
                  {"trim", c.merge.trim},
                  {"mode", coeff_mode_name(c.merge.mode)},
                  {"steps", c.merge.steps},
                  {"lr", c.merge.lr},
                  {"batch", c.merge.batch}};
    j["surgery"] = {{"loss", loss_kind_name(c.surgery.loss)},
                    {"lr", c.surgery.lr},
                    {"iterations", c.surgery.iterations},
                    {"batch", c.surgery.batch},
                    {"rank", c.surgery.rank},
                    {"ratio", c.surgery.data_ratio},
                    {"regime", c.surgery.regime == Regime::online ? "online" : "offline"},
                    {"smooth_l1_delta", c.surgery.smooth_l1_delta}};
    j["out"] = c.out_dir;
    return j;
}

CoeffMode coeff_mode_from_string(const std::string& name) {
    if (name == "task") return CoeffMode::task_wise;
    if (name == "layer") return CoeffMode::layer_wise;
    if (name == "scalar") return CoeffMode::scalar;
    throw UsageError("unknown coefficient mode '" + name + "' (expected task|layer)");
}

}  // namespace

std::string RunConfig::to_json() const { return config_json(*this).dump(2); }

RunConfig RunConfig::from_json_text(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw UsageError(std::string("config: invalid JSON: ") + e.what());
    }
    RunConfig c;
    try {
        c.seed = j.value("seed", c.seed);
        c.tasks = j.value("tasks", c.tasks);
        if (j.contains("model")) {
            const auto& m = j["model"];
            c.model.input_dim = m.value("input_dim", c.model.input_dim);
            c.model.hidden_dim = m.value("hidden_dim", c.model.hidden_dim);
            c.model.feature_dim = m.value("feature_dim", c.model.feature_dim);
            c.model.layers = m.value("layers", c.model.layers);
        }
        if (j.contains("data")) {
            const auto& d = j["data"];
            c.data.train_per_task = d.value("train_per_task", c.data.train_per_task);
            c.data.test_per_task = d.value("test_per_task", c.data.test_per_task);
            c.data.classes_per_task = d.value("classes_per_task", c.data.classes_per_task);
            c.data.mean_spread = d.value("mean_spread", c.data.mean_spread);
            c.data.noise = d.value("noise", c.data.noise);
            c.data.task_offset = d.value("task_offset", c.data.task_offset);
            c.data.rotation_strength = d.value("rotation_strength", c.data.rotation_strength);
        }
        if (j.contains("train")) {
            const auto& t = j["train"];
            c.train.pretrain_steps = t.value("pretrain_steps", c.train.pretrain_steps);
            c.train.finetune_steps = t.value("finetune_steps", c.train.finetune_steps);
            c.train.batch = t.value("batch", c.train.batch);
            c.train.pretrain_fraction = t.value("pretrain_fraction", c.train.pretrain_fraction);
            c.train.adam.lr = t.value("lr", c.train.adam.lr);
        }
        if (j.contains("merge")) {
            const auto& m = j["merge"];
            c.merge.method = merge_method_from_string(
                m.value("method", std::string(merge_method_name(c.merge.method))));
            c.merge.lambda = m.value("lambda", c.merge.lambda);
            c.merge.trim = m.value("trim", c.merge.trim);
            c.merge.mode =
                coeff_mode_from_string(m.value("mode", std::string(coeff_mode_name(c.merge.mode))));
            c.merge.steps = m.value("steps", c.merge.steps);
            c.merge.lr = m.value("lr", c.merge.lr);
            c.merge.batch = m.value("batch", c.merge.batch);
        }
        if (j.contains("surgery")) {
            const auto& s = j["surgery"];
            c.surgery.loss =
                loss_kind_from_string(s.value("loss", std::string(loss_kind_name(c.surgery.loss))));
            c.surgery.lr = s.value("lr", c.surgery.lr);
            c.surgery.iterations = s.value("iterations", c.surgery.iterations);
            c.surgery.batch = s.value("batch", c.surgery.batch);
            c.surgery.rank = s.value("rank", c.surgery.rank);
            c.surgery.data_ratio = s.value("ratio", c.surgery.data_ratio);
            const std::string regime = s.value("regime", std::string("offline"));
            if (regime != "offline" && regime != "online") {
                throw UsageError("config: regime must be offline or online");
            }
            c.surgery.regime = regime == "online" ? Regime::online : Regime::offline;
            c.surgery.smooth_l1_delta = s.value("smooth_l1_delta", c.surgery.smooth_l1_delta);
        }
        c.out_dir = j.value("out", c.out_dir);
    } catch (const nlohmann::json::exception& e) {
        throw UsageError(std::string("config: bad field type: ") + e.what());
    }
    c.surgery.seed = c.seed;
    c.validate();
    return c;
}

RunConfig RunConfig::from_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw UsageError("config: cannot open '" + path + "'");
    std::stringstream ss;
    ss << is.rdbuf();
    return from_json_text(ss.str());
}

Workspace prepare_workspace(const RunConfig& cfg) {
    cfg.validate();
    Workspace ws;
    ws.cfg = cfg;
    ws.cfg.surgery.seed = cfg.seed;
    ws.tasks = make_tasks(cfg.seed, cfg.tasks, cfg.model.input_dim, cfg.data);

    FitResult pre = pretrain(cfg.model, ws.tasks, cfg.train.pretrain_steps, cfg.seed, cfg.train);
    ws.pretrained = std::move(pre.encoder);
    ws.pretrain_head = std::move(pre.head);
    ws.pretrain_initial_loss = pre.initial_loss;
    ws.pretrain_final_loss = pre.final_loss;

    for (const TaskDataset& task : ws.tasks) {
        FitResult fit = finetune(ws.pretrained, task, cfg.train.finetune_steps,
                                 cfg.seed ^ (0x9e37ULL * (task.task_id + 1)), cfg.train);
        ws.individual.push_back(std::move(fit.encoder));
        ws.heads.push_back(std::move(fit.head));
    }
    return ws;
}

TaskHead pretrained_task_head(const Workspace& ws, size_t task) {
    int64_t offset = 0;
    for (size_t t = 0; t < task; ++t) offset += ws.tasks[t].classes;
    const int64_t classes = ws.tasks[task].classes;
    const Tensor& w = ws.pretrain_head.weight;
    const Tensor& b = ws.pretrain_head.bias;
    TaskHead head;
    head.task_id = static_cast<int32_t>(task);
    head.weight = Tensor({w.rows(), classes});
    head.bias = Tensor({classes});
    for (int64_t i = 0; i < w.rows(); ++i) {
        for (int64_t c = 0; c < classes; ++c) {
            head.weight.at(i, c) = w.at(i, offset + c);
        }
    }
    for (int64_t c = 0; c < classes; ++c) head.bias[c] = b[offset + c];
    return head;
}

std::vector<Tensor> test_inputs(const Workspace& ws) {
    std::vector<Tensor> inputs;
    inputs.reserve(ws.tasks.size());
    for (const TaskDataset& t : ws.tasks) inputs.push_back(t.test_x);
    return inputs;
}

std::vector<const ParameterMap*> individual_ptrs(const Workspace& ws) {
    std::vector<const ParameterMap*> ptrs;
    ptrs.reserve(ws.individual.size());
    for (const ParameterMap& m : ws.individual) ptrs.push_back(&m);
    return ptrs;
}

MergeOutput run_merge(const Workspace& ws, const MergeSettings& settings) {
    MergeOutput out;
    std::vector<TaskVector> vectors;
    if (settings.method != MergeMethod::average) {
        for (size_t t = 0; t < ws.individual.size(); ++t) {
            vectors.push_back(task_vector(ws.individual[t], ws.pretrained, static_cast<int32_t>(t)));
        }
    }
    switch (settings.method) {
        case MergeMethod::average: {
            out.merged = weight_average(individual_ptrs(ws));
            out.coefficients.mode = CoeffMode::scalar;
            out.coefficients.tasks = static_cast<int32_t>(ws.individual.size());
            out.coefficients.layers = static_cast<int32_t>(ws.cfg.model.layers);
            out.coefficients.values = {1.0 / static_cast<double>(ws.individual.size())};
            break;
        }
        case MergeMethod::task_arithmetic: {
            out.merged = task_arithmetic(ws.pretrained, vectors, settings.lambda);
            out.coefficients.mode = CoeffMode::scalar;
            out.coefficients.tasks = static_cast<int32_t>(vectors.size());
            out.coefficients.layers = static_cast<int32_t>(ws.cfg.model.layers);
            out.coefficients.values = {settings.lambda};
            break;
        }
        case MergeMethod::ties: {
            out.merged = ties_merge(ws.pretrained, vectors, settings.lambda, settings.trim);
            out.coefficients.mode = CoeffMode::scalar;
            out.coefficients.tasks = static_cast<int32_t>(vectors.size());
            out.coefficients.layers = static_cast<int32_t>(ws.cfg.model.layers);
            out.coefficients.values = {settings.lambda};
            break;
        }
        case MergeMethod::adamerging: {
            AdaMergeConfig acfg;
            acfg.mode = settings.mode;
            acfg.init = settings.lambda;
            acfg.lr = settings.lr;
            acfg.steps = settings.steps;
            acfg.batch = settings.batch;
            acfg.seed = ws.cfg.seed;
            AdaMergeResult res = adamerge(ws.pretrained, vectors, test_inputs(ws), ws.heads, acfg);
            out.merged = std::move(res.merged);
            out.coefficients = std::move(res.coefficients);
            out.entropy_trace = std::move(res.entropy_trace);
            break;
        }
    }
    return out;
}

SurgeryOutput run_surgery(const Workspace& ws, ParameterMap merged, const SurgeryTrainConfig& cfg) {
    SurgeryOutput out;
    out.bundle = make_bundle(std::move(merged), ws.heads, cfg.rank, cfg.seed);
    const std::vector<Tensor> inputs = test_inputs(ws);
    if (cfg.regime == Regime::online) {
        out.trace = train_online(out.bundle, individual_ptrs(ws), inputs, cfg);
    } else {
        out.trace = train_offline(out.bundle, individual_ptrs(ws), inputs, cfg);
    }
    return out;
}

MethodEval evaluate_setup(const Workspace& ws, const ParameterMap& merged,
                          const SurgeryBundle* bundle, const std::string& method_name) {
    MethodEval eval;
    eval.method = method_name;
    eval.surgery = bundle != nullptr;
    double acc_total = 0.0;
    for (size_t t = 0; t < ws.tasks.size(); ++t) {
        const TaskDataset& task = ws.tasks[t];
        Tensor feats = extract_features(merged, task.test_x);
        if (bundle) feats = apply_surgery(bundle->modules[t], feats);
        const Tensor logits = head_logits(ws.heads[t], feats);
        int64_t correct = 0;
        for (int64_t i = 0; i < logits.rows(); ++i) {
            int64_t best = 0;
            for (int64_t j = 1; j < logits.cols(); ++j) {
                if (logits.at(i, j) > logits.at(i, best)) best = j;
            }
            if (best == task.test_y[static_cast<size_t>(i)]) ++correct;
        }
        const double acc = static_cast<double>(correct) / static_cast<double>(logits.rows());
        eval.per_task_accuracy.push_back(acc);
        acc_total += acc;
    }
    eval.average_accuracy = acc_total / static_cast<double>(ws.tasks.size());
    eval.bias = bias_report(merged, individual_ptrs(ws), bundle, test_inputs(ws), method_name,
                            ws.cfg.seed);
    return eval;
}

// ---------------------------------------------------------------------------
// file pipeline
// ---------------------------------------------------------------------------

namespace {

void write_text_file(const std::string& path, const std::string& content) {
    fs::create_directories(fs::path(path).parent_path());
    std::ofstream os(path, std::ios::trunc | std::ios::binary);
    if (!os) throw CheckpointError(CheckpointError::Kind::io, "cannot open '" + path + "'");
    os << content;
    if (!os) throw CheckpointError(CheckpointError::Kind::io, "write failed for '" + path + "'");
}

std::string read_text_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CheckpointError(CheckpointError::Kind::io, "cannot open '" + path + "'");
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

void refresh_manifest(const std::string& dir) {
    nlohmann::json files;
    std::vector<std::string> paths;
    for (const auto& entry : fs::recursive_directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        const std::string rel = fs::relative(entry.path(), dir).generic_string();
        if (rel == "manifest.json") continue;
        paths.push_back(rel);
    }
    std::sort(paths.begin(), paths.end());
    for (const std::string& rel : paths) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%016llx",
                      static_cast<unsigned long long>(file_hash(dir + "/" + rel)));
        files[rel] = buf;
    }
    nlohmann::json manifest;
    manifest["version"] = kVersionTag;
    manifest["files"] = files;
    write_text_file(dir + "/manifest.json", manifest.dump(2));
}

std::string checkpoint_dir(const RunConfig& cfg) { return seed_dir(cfg) + "/checkpoints"; }

Workspace load_workspace(const RunConfig& cfg) {
    const std::string dir = seed_dir(cfg);
    Workspace ws;
    ws.cfg = RunConfig::from_file(dir + "/config.json");
    // The caller's merge/surgery settings take effect; the stored config
    // pins data/model/seed so artifacts stay consistent.
    ws.cfg.merge = cfg.merge;
    ws.cfg.surgery = cfg.surgery;
    ws.cfg.surgery.seed = ws.cfg.seed;
    ws.cfg.out_dir = cfg.out_dir;

    for (int t = 0; t < ws.cfg.tasks; ++t) {
        TaskDataset task;
        task.task_id = t;
        task.classes = ws.cfg.data.classes_per_task;
        import_dataset_csv(dir + "/data/task_" + std::to_string(t) + "_train.csv", task.train_x,
                           task.train_y);
        import_dataset_csv(dir + "/data/task_" + std::to_string(t) + "_test.csv", task.test_x,
                           task.test_y);
        ws.tasks.push_back(std::move(task));
    }
    ws.pretrained = load_checkpoint(checkpoint_dir(cfg) + "/pretrained.msrg");
    for (int t = 0; t < ws.cfg.tasks; ++t) {
        ws.individual.push_back(
            load_checkpoint(checkpoint_dir(cfg) + "/task_" + std::to_string(t) + ".msrg"));
        TaskHead head = head_from_map(
            load_checkpoint(checkpoint_dir(cfg) + "/head_" + std::to_string(t) + ".msrg"));
        head.task_id = t;
        ws.heads.push_back(std::move(head));
    }
    return ws;
}

}  // namespace

std::string seed_dir(const RunConfig& cfg) {
    return cfg.out_dir + "/seed_" + std::to_string(cfg.seed);
}

uint64_t file_hash(const std::string& path) {
    const std::string bytes = read_text_file(path);
    return fnv1a(bytes.data(), bytes.size());
}

void cmd_prepare(const RunConfig& cfg) {
    cfg.validate();
    const std::string dir = seed_dir(cfg);
    fs::create_directories(dir + "/data");
    fs::create_directories(dir + "/checkpoints");

    Workspace ws = prepare_workspace(cfg);
    write_text_file(dir + "/config.json", cfg.to_json());

    for (const TaskDataset& task : ws.tasks) {
        export_dataset_csv(task.train_x, task.train_y,
                           dir + "/data/task_" + std::to_string(task.task_id) + "_train.csv");
        export_dataset_csv(task.test_x, task.test_y,
                           dir + "/data/task_" + std::to_string(task.task_id) + "_test.csv");
    }
    save_checkpoint(ws.pretrained, dir + "/checkpoints/pretrained.msrg");
    for (size_t t = 0; t < ws.individual.size(); ++t) {
        save_checkpoint(ws.individual[t], dir + "/checkpoints/task_" + std::to_string(t) + ".msrg");
        save_checkpoint(head_to_map(ws.heads[t]),
                        dir + "/checkpoints/head_" + std::to_string(t) + ".msrg");
    }
    refresh_manifest(dir);
    std::cout << "prepared " << ws.tasks.size() << " tasks under " << dir
              << " (pretrain loss " << ws.pretrain_initial_loss << " -> "
              << ws.pretrain_final_loss << ")\n";
}

void cmd_merge(const RunConfig& cfg) {
    Workspace ws = load_workspace(cfg);
    const std::string dir = seed_dir(cfg);
    fs::create_directories(dir + "/merged");
    const std::string name = merge_method_name(cfg.merge.method);

    MergeOutput out = run_merge(ws, cfg.merge);
    save_checkpoint(out.merged, dir + "/merged/" + name + ".msrg");
    write_text_file(dir + "/merged/" + name + "_coefficients.json", out.coefficients.to_json());
    if (!out.entropy_trace.empty()) {
        std::ostringstream os;
        os << "eval,entropy\n";
        for (size_t i = 0; i < out.entropy_trace.size(); ++i) {
            char buf[48];
            std::snprintf(buf, sizeof(buf), "%zu,%.9g", i, out.entropy_trace[i]);
            os << buf << "\n";
        }
        write_text_file(dir + "/merged/" + name + "_entropy.csv", os.str());
    }
    refresh_manifest(dir);
    std::cout << "merged with " << name << " -> " << dir << "/merged/" << name << ".msrg\n";
}

void cmd_surgery(const RunConfig& cfg) {
    Workspace ws = load_workspace(cfg);
    const std::string dir = seed_dir(cfg);
    const std::string name = merge_method_name(cfg.merge.method);
    const std::string merged_path = dir + "/merged/" + name + ".msrg";
    if (!fs::exists(merged_path)) {
        throw UsageError("surgery: missing merged checkpoint " + merged_path +
                         " (run the merge subcommand first)");
    }
    fs::create_directories(dir + "/surgery");

    SurgeryOutput out = run_surgery(ws, load_checkpoint(merged_path), ws.cfg.surgery);
    save_checkpoint(surgery_to_map(out.bundle.modules), dir + "/surgery/" + name + ".msrg");
    export_trace_csv(out.trace, dir + "/surgery/" + name + "_trace.csv");
    refresh_manifest(dir);
    std::cout << "surgery on " << name << ": objective " << out.trace.initial_objective << " -> "
              << out.trace.final_objective << "\n";
    for (const std::string& note : out.trace.notes) std::cout << "note: " << note << "\n";
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

namespace {

double mean_of(const std::vector<double>& xs) {
    double s = 0.0;
    for (double x : xs) s += x;
    return xs.empty() ? 0.0 : s / static_cast<double>(xs.size());
}

double std_of(const std::vector<double>& xs) {
    if (xs.size() < 2) return 0.0;
    const double m = mean_of(xs);
    double s = 0.0;
    for (double x : xs) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(xs.size() - 1));
}

}  // namespace

std::string ExperimentSummary::to_json() const {
    nlohmann::json j;
    j["version"] = kVersionTag;
    j["seeds"] = seeds;
    j["rows"] = nlohmann::json::array();
    for (const SummaryRow& r : rows) {
        j["rows"].push_back({{"method", r.method},
                             {"surgery", r.surgery},
                             {"per_task_accuracy_mean", r.per_task_accuracy_mean},
                             {"per_task_accuracy_std", r.per_task_accuracy_std},
                             {"average_accuracy_mean", r.average_accuracy_mean},
                             {"average_accuracy_std", r.average_accuracy_std},
                             {"mean_bias_mean", r.mean_bias_mean},
                             {"mean_bias_std", r.mean_bias_std}});
    }
    return j.dump(2);
}

std::string ExperimentSummary::to_text() const {
    std::ostringstream os;
    os << "seeds:";
    for (uint64_t s : seeds) os << " " << s;
    os << "\n\n";
    const size_t tasks = rows.empty() ? 0 : rows[0].per_task_accuracy_mean.size();
    os << std::left << std::setw(22) << "method" << std::setw(9) << "surgery";
    for (size_t t = 0; t < tasks; ++t) os << std::setw(8) << ("t" + std::to_string(t));
    os << std::setw(14) << "avg_acc" << "mean_bias\n";
    for (const SummaryRow& r : rows) {
        os << std::left << std::setw(22) << r.method << std::setw(9) << (r.surgery ? "yes" : "no");
        for (double a : r.per_task_accuracy_mean) {
            std::ostringstream cell;
            cell << std::fixed << std::setprecision(3) << a;
            os << std::setw(8) << cell.str();
        }
        std::ostringstream avg, bias;
        avg << std::fixed << std::setprecision(4) << r.average_accuracy_mean << "±"
            << std::setprecision(4) << r.average_accuracy_std;
        bias << std::fixed << std::setprecision(5) << r.mean_bias_mean << "±"
             << std::setprecision(5) << r.mean_bias_std;
        os << std::setw(14) << avg.str() << bias.str() << "\n";
    }
    return os.str();
}

void cmd_report(const RunConfig& cfg) {
    // Aggregate every seed directory present under out_dir.
    std::vector<uint64_t> seeds;
    for (const auto& entry : fs::directory_iterator(cfg.out_dir)) {
        const std::string name = entry.path().filename().string();
        if (entry.is_directory() && name.rfind("seed_", 0) == 0) {
            seeds.push_back(std::stoull(name.substr(5)));
        }
    }
    if (seeds.empty()) {
        throw UsageError("report: no seed_* directories under '" + cfg.out_dir + "'");
    }
    std::sort(seeds.begin(), seeds.end());

    // Check artifacts before any work, listing everything missing.
    std::vector<std::string> missing;
    for (uint64_t s : seeds) {
        RunConfig scfg = cfg;
        scfg.seed = s;
        const std::string dir = seed_dir(scfg);
        for (MergeMethod m : all_merge_methods()) {
            const std::string name = merge_method_name(m);
            for (const std::string p :
                 {dir + "/merged/" + name + ".msrg", dir + "/surgery/" + name + ".msrg"}) {
                if (!fs::exists(p)) missing.push_back(p);
            }
        }
    }
    if (!missing.empty()) {
        std::ostringstream os;
        os << "report: missing artifacts:";
        for (const std::string& p : missing) os << "\n  " << p;
        throw UsageError(os.str());
    }

    struct Cell {
        std::vector<double> avg_acc, mean_bias;
        std::vector<std::vector<double>> per_task_acc;
    };
    std::vector<Cell> cells(all_merge_methods().size() * 2);

    for (uint64_t s : seeds) {
        RunConfig scfg = cfg;
        scfg.seed = s;
        Workspace ws = load_workspace(scfg);
        const std::string dir = seed_dir(scfg);
        fs::create_directories(dir + "/reports");
        size_t cell_idx = 0;
        for (MergeMethod m : all_merge_methods()) {
            const std::string name = merge_method_name(m);
            const ParameterMap merged = load_checkpoint(dir + "/merged/" + name + ".msrg");
            SurgeryBundle bundle;
            bundle.merged = merged;
            bundle.modules = surgery_from_map(load_checkpoint(dir + "/surgery/" + name + ".msrg"));
            bundle.heads = ws.heads;

            const MethodEval without = evaluate_setup(ws, merged, nullptr, name);
            const MethodEval with = evaluate_setup(ws, merged, &bundle, name);
            write_text_file(dir + "/reports/bias_" + name + "_without.json", without.bias.to_json());
            write_text_file(dir + "/reports/bias_" + name + "_with.json", with.bias.to_json());

            std::vector<Projection2D> projections;
            for (size_t t = 0; t < ws.tasks.size(); ++t) {
                const Tensor z_mtl = extract_features(merged, ws.tasks[t].test_x);
                const Tensor z_ind = extract_features(ws.individual[t], ws.tasks[t].test_x);
                projections.push_back(project_2d(z_mtl, z_ind));
            }
            export_projection_csv(projections, dir + "/reports/projection_" + name + ".csv");

            for (const MethodEval* e : {&without, &with}) {
                Cell& cell = cells[cell_idx++];
                cell.avg_acc.push_back(e->average_accuracy);
                cell.mean_bias.push_back(e->bias.mean);
                cell.per_task_acc.push_back(e->per_task_accuracy);
            }
        }
        refresh_manifest(dir);
    }

    ExperimentSummary summary;
    summary.seeds = seeds;
    size_t cell_idx = 0;
    for (MergeMethod m : all_merge_methods()) {
        for (bool with_surgery : {false, true}) {
            const Cell& cell = cells[cell_idx++];
            SummaryRow row;
            row.method = merge_method_name(m);
            row.surgery = with_surgery;
            row.average_accuracy_mean = mean_of(cell.avg_acc);
            row.average_accuracy_std = std_of(cell.avg_acc);
            row.mean_bias_mean = mean_of(cell.mean_bias);
            row.mean_bias_std = std_of(cell.mean_bias);
            const size_t tasks = cell.per_task_acc.empty() ? 0 : cell.per_task_acc[0].size();
            for (size_t t = 0; t < tasks; ++t) {
                std::vector<double> col;
                for (const auto& seed_accs : cell.per_task_acc) col.push_back(seed_accs[t]);
                row.per_task_accuracy_mean.push_back(mean_of(col));
                row.per_task_accuracy_std.push_back(std_of(col));
            }
            summary.rows.push_back(std::move(row));
        }
    }

    fs::create_directories(cfg.out_dir + "/reports");
    write_text_file(cfg.out_dir + "/reports/summary.json", summary.to_json());
    write_text_file(cfg.out_dir + "/reports/summary.txt", summary.to_text());
    std::cout << summary.to_text();
}

// ---------------------------------------------------------------------------
// reproduction suites
// ---------------------------------------------------------------------------

namespace {

std::string fmt(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

void add_verdict(SuiteResult& r, bool ok, const std::string& what) {
    r.verdict_lines.push_back(std::string(ok ? "PASS " : "FAIL ") + what);
    r.pass = r.pass && ok;
}

SuiteResult suite_bias_ordering(const RunConfig& base, const std::vector<uint64_t>& seeds) {
    SuiteResult result;
    result.name = "bias-ordering";
    result.csv_rows.push_back("seed,method,mean_bias");
    double wa = 0.0, ta = 0.0, ada = 0.0;
    for (uint64_t s : seeds) {
        RunConfig cfg = base;
        cfg.seed = s;
        Workspace ws = prepare_workspace(cfg);
        for (MergeMethod m :
             {MergeMethod::average, MergeMethod::task_arithmetic, MergeMethod::adamerging}) {
            MergeSettings settings = cfg.merge;
            settings.method = m;
            const MergeOutput out = run_merge(ws, settings);
            const BiasReport report = bias_report(out.merged, individual_ptrs(ws), nullptr,
                                                  test_inputs(ws), merge_method_name(m), s);
            result.csv_rows.push_back(std::to_string(s) + "," + merge_method_name(m) + "," +
                                      fmt(report.mean));
            if (m == MergeMethod::average) wa += report.mean;
            if (m == MergeMethod::task_arithmetic) ta += report.mean;
            if (m == MergeMethod::adamerging) ada += report.mean;
        }
    }
    const double n = static_cast<double>(seeds.size());
    wa /= n;
    ta /= n;
    ada /= n;
    add_verdict(result, ada <= ta, "seed-mean bias adamerging <= task-arith (" + fmt(ada) +
                                       " vs " + fmt(ta) + ")");
    add_verdict(result, ta <= wa,
                "seed-mean bias task-arith <= avg (" + fmt(ta) + " vs " + fmt(wa) + ")");
    return result;
}

SuiteResult suite_rank_sweep(const RunConfig& base, const std::vector<uint64_t>& seeds) {
    SuiteResult result;
    result.name = "rank-sweep";
    result.csv_rows.push_back("seed,rank,final_objective");
    const std::vector<int64_t> ranks = {4, 8, 16, 32, 64};
    std::vector<double> mean_final(ranks.size(), 0.0);
    for (uint64_t s : seeds) {
        RunConfig cfg = base;
        cfg.seed = s;
        Workspace ws = prepare_workspace(cfg);
        MergeOutput merged = run_merge(ws, cfg.merge);
        for (size_t i = 0; i < ranks.size(); ++i) {
            SurgeryTrainConfig scfg = cfg.surgery;
            scfg.rank = ranks[i];
            scfg.seed = s;
            const SurgeryOutput out = run_surgery(ws, merged.merged, scfg);
            result.csv_rows.push_back(std::to_string(s) + "," + std::to_string(ranks[i]) + "," +
                                      fmt(out.trace.final_objective));
            mean_final[i] += out.trace.final_objective / static_cast<double>(seeds.size());
        }
    }
    for (size_t i = 1; i < ranks.size(); ++i) {
        // Non-increasing with 2% slack between adjacent ranks.
        const bool ok = mean_final[i] <= mean_final[i - 1] * 1.02;
        add_verdict(result, ok,
                    "seed-mean objective r=" + std::to_string(ranks[i]) + " (" + fmt(mean_final[i]) +
                        ") <= 1.02 * r=" + std::to_string(ranks[i - 1]) + " (" +
                        fmt(mean_final[i - 1]) + ")");
    }
    return result;
}

SuiteResult suite_loss_sweep(const RunConfig& base, const std::vector<uint64_t>& seeds) {
    SuiteResult result;
    result.name = "loss-sweep";
    result.csv_rows.push_back("seed,loss,initial_objective,final_objective");
    const std::vector<LossKind> kinds = {LossKind::l1, LossKind::mse, LossKind::smooth_l1,
                                         LossKind::neg_cosine};
    for (uint64_t s : seeds) {
        RunConfig cfg = base;
        cfg.seed = s;
        Workspace ws = prepare_workspace(cfg);
        MergeOutput merged = run_merge(ws, cfg.merge);
        for (LossKind kind : kinds) {
            SurgeryTrainConfig scfg = cfg.surgery;
            scfg.loss = kind;
            scfg.seed = s;
            const SurgeryOutput out = run_surgery(ws, merged.merged, scfg);
            result.csv_rows.push_back(std::to_string(s) + "," + loss_kind_name(kind) + "," +
                                      fmt(out.trace.initial_objective) + "," +
                                      fmt(out.trace.final_objective));
            add_verdict(result, out.trace.final_objective < 0.5 * out.trace.initial_objective,
                        std::string(loss_kind_name(kind)) + " seed " + std::to_string(s) +
                            " final < 50% of initial (" + fmt(out.trace.final_objective) + " vs " +
                            fmt(out.trace.initial_objective) + ")");
        }
    }
    return result;
}

SuiteResult suite_ratio_sweep(const RunConfig& base, const std::vector<uint64_t>& seeds) {
    SuiteResult result;
    result.name = "ratio-sweep";
    result.csv_rows.push_back("seed,ratio,mean_bias");
    const std::vector<double> ratios = {0.01, 0.05, 0.1, 1.0};
    std::vector<double> mean_bias(ratios.size(), 0.0);
    for (uint64_t s : seeds) {
        RunConfig cfg = base;
        cfg.seed = s;
        Workspace ws = prepare_workspace(cfg);
        MergeOutput merged = run_merge(ws, cfg.merge);
        for (size_t i = 0; i < ratios.size(); ++i) {
            SurgeryTrainConfig scfg = cfg.surgery;
            scfg.data_ratio = ratios[i];
            scfg.seed = s;
            const SurgeryOutput out = run_surgery(ws, merged.merged, scfg);
            // Bias over the full test set regardless of the visible ratio.
            const BiasReport report =
                bias_report(out.bundle.merged, individual_ptrs(ws), &out.bundle, test_inputs(ws),
                            merge_method_name(cfg.merge.method), s);
            result.csv_rows.push_back(std::to_string(s) + "," + fmt(ratios[i]) + "," +
                                      fmt(report.mean));
            mean_bias[i] += report.mean / static_cast<double>(seeds.size());
        }
    }
    const auto idx = [&](double r) {
        for (size_t i = 0; i < ratios.size(); ++i) {
            if (ratios[i] == r) return i;
        }
        throw std::logic_error("ratio missing");
    };
    add_verdict(result, mean_bias[idx(1.0)] <= mean_bias[idx(0.1)],
                "seed-mean bias ratio 1.0 <= ratio 0.1 (" + fmt(mean_bias[idx(1.0)]) + " vs " +
                    fmt(mean_bias[idx(0.1)]) + ")");
    add_verdict(result, mean_bias[idx(0.1)] <= mean_bias[idx(0.01)],
                "seed-mean bias ratio 0.1 <= ratio 0.01 (" + fmt(mean_bias[idx(0.1)]) + " vs " +
                    fmt(mean_bias[idx(0.01)]) + ")");
    return result;
}

SuiteResult suite_online_sweep(const RunConfig& base, const std::vector<uint64_t>& seeds) {
    SuiteResult result;
    result.name = "online-sweep";
    result.csv_rows.push_back("seed,ratio,mean_bias");
    const std::vector<double> ratios = {0.1, 0.5, 1.0};
    std::vector<double> mean_bias(ratios.size(), 0.0);
    for (uint64_t s : seeds) {
        RunConfig cfg = base;
        cfg.seed = s;
        Workspace ws = prepare_workspace(cfg);
        MergeOutput merged = run_merge(ws, cfg.merge);
        for (size_t i = 0; i < ratios.size(); ++i) {
            SurgeryTrainConfig scfg = cfg.surgery;
            scfg.regime = Regime::online;
            scfg.data_ratio = ratios[i];
            scfg.seed = s;
            const SurgeryOutput out = run_surgery(ws, merged.merged, scfg);
            const BiasReport report =
                bias_report(out.bundle.merged, individual_ptrs(ws), &out.bundle, test_inputs(ws),
                            merge_method_name(cfg.merge.method), s);
            result.csv_rows.push_back(std::to_string(s) + "," + fmt(ratios[i]) + "," +
                                      fmt(report.mean));
            mean_bias[i] += report.mean / static_cast<double>(seeds.size());
        }
    }
    add_verdict(result, mean_bias[1] <= mean_bias[0],
                "seed-mean online bias ratio 0.5 <= ratio 0.1 (" + fmt(mean_bias[1]) + " vs " +
                    fmt(mean_bias[0]) + ")");
    return result;
}

}  // namespace

std::vector<std::string> all_suite_names() {
    return {"bias-ordering", "rank-sweep", "loss-sweep", "ratio-sweep", "online-sweep"};
}

SuiteResult run_suite(const RunConfig& base, const std::string& suite_name,
                      const std::vector<uint64_t>& seeds) {
    if (seeds.empty()) throw UsageError("run_suite: empty seed grid");
    if (suite_name == "bias-ordering") return suite_bias_ordering(base, seeds);
    if (suite_name == "rank-sweep") return suite_rank_sweep(base, seeds);
    if (suite_name == "loss-sweep") return suite_loss_sweep(base, seeds);
    if (suite_name == "ratio-sweep") return suite_ratio_sweep(base, seeds);
    if (suite_name == "online-sweep") return suite_online_sweep(base, seeds);
    throw UsageError("unknown suite '" + suite_name + "'");
}

void write_suite_files(const RunConfig& base, const SuiteResult& result) {
    const std::string dir = base.out_dir + "/reproduce";
    std::ostringstream csv;
    for (const std::string& row : result.csv_rows) csv << row << "\n";
    write_text_file(dir + "/" + result.name + ".csv", csv.str());
    std::ostringstream verdicts;
    for (const std::string& line : result.verdict_lines) verdicts << line << "\n";
    verdicts << (result.pass ? "SUITE PASS" : "SUITE FAIL") << "\n";
    write_text_file(dir + "/" + result.name + "_verdict.txt", verdicts.str());
}

}  // namespace msrg
