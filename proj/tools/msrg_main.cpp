// Pipeline driver: prepare -> merge -> surgery -> report, plus the
// reproduction suites. Exit codes: 0 ok, 1 usage/config, 2 numerical
// failure, 3 reproduction trend violation.

#include <cstdint>
#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "msrg/errors.hpp"
#include "msrg/harness.hpp"

namespace {

struct FlagState {
    std::string config_path;
    uint64_t seed = 0;
    std::string out_dir;
    std::string method;
    double lambda = 0.0;
    double trim = 0.0;
    std::string mode;
    int64_t rank = 0;
    std::string loss;
    double lr = 0.0;
    int iters = 0;
    int batch = 0;
    double ratio = 0.0;
    std::string regime;
    std::string seeds_csv;
    std::string suite;
};

msrg::RunConfig base_config(const FlagState& flags, const CLI::App* cmd) {
    msrg::RunConfig cfg;
    if (!flags.config_path.empty()) cfg = msrg::RunConfig::from_file(flags.config_path);
    if (cmd->count("--seed")) cfg.seed = flags.seed;
    if (cmd->count("--out")) cfg.out_dir = flags.out_dir;
    cfg.surgery.seed = cfg.seed;
    return cfg;
}

std::vector<uint64_t> parse_seed_grid(const std::string& csv) {
    if (csv.empty()) return {0, 1, 2};
    std::vector<uint64_t> seeds;
    size_t pos = 0;
    while (pos < csv.size()) {
        const size_t comma = csv.find(',', pos);
        const std::string item = csv.substr(pos, comma == std::string::npos ? comma : comma - pos);
        seeds.push_back(std::stoull(item));
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    return seeds;
}

void add_common_flags(CLI::App* cmd, FlagState& flags) {
    cmd->add_option("--config", flags.config_path, "JSON config file");
    cmd->add_option("--seed", flags.seed, "run seed");
    cmd->add_option("--out", flags.out_dir, "output directory");
}

void add_merge_flags(CLI::App* cmd, FlagState& flags) {
    cmd->add_option("--method", flags.method, "avg|task-arith|ties|adamerging");
    cmd->add_option("--lambda", flags.lambda, "task vector scale");
    cmd->add_option("--trim", flags.trim, "ties trim fraction");
    cmd->add_option("--mode", flags.mode, "adamerging coefficients: task|layer");
}

void apply_merge_flags(msrg::RunConfig& cfg, const FlagState& flags, const CLI::App* cmd) {
    if (cmd->count("--method")) cfg.merge.method = msrg::merge_method_from_string(flags.method);
    if (cmd->count("--lambda")) cfg.merge.lambda = flags.lambda;
    if (cmd->count("--trim")) cfg.merge.trim = flags.trim;
    if (cmd->count("--mode")) {
        if (flags.mode == "task") {
            cfg.merge.mode = msrg::CoeffMode::task_wise;
        } else if (flags.mode == "layer") {
            cfg.merge.mode = msrg::CoeffMode::layer_wise;
        } else {
            throw msrg::UsageError("--mode must be task or layer");
        }
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"multi-task model merging with representation surgery"};
    app.require_subcommand(1);
    FlagState flags;

    CLI::App* prepare = app.add_subcommand("prepare", "generate data, pretrain and fine-tune");
    add_common_flags(prepare, flags);

    CLI::App* merge = app.add_subcommand("merge", "merge fine-tuned checkpoints");
    add_common_flags(merge, flags);
    add_merge_flags(merge, flags);
    merge->add_option("--lr", flags.lr, "adamerging learning rate");
    merge->add_option("--iters", flags.iters, "adamerging steps");
    merge->add_option("--batch", flags.batch, "adamerging unlabeled batch (0 = full)");

    CLI::App* surgery = app.add_subcommand("surgery", "train surgery adapters on a merged model");
    add_common_flags(surgery, flags);
    surgery->add_option("--method", flags.method, "which merged checkpoint to operate on");
    surgery->add_option("--rank", flags.rank, "adapter rank");
    surgery->add_option("--loss", flags.loss, "l1|mse|smoothl1|negcos");
    surgery->add_option("--lr", flags.lr, "learning rate");
    surgery->add_option("--iters", flags.iters, "training iterations");
    surgery->add_option("--batch", flags.batch, "batch size");
    surgery->add_option("--ratio", flags.ratio, "visible fraction of unlabeled data");
    surgery->add_option("--regime", flags.regime, "offline|online");

    CLI::App* report = app.add_subcommand("report", "summarize all prepared seeds");
    add_common_flags(report, flags);

    CLI::App* reproduce = app.add_subcommand("reproduce", "run a trend-reproduction suite");
    add_common_flags(reproduce, flags);
    reproduce
        ->add_option("suite", flags.suite,
                     "bias-ordering|rank-sweep|loss-sweep|ratio-sweep|online-sweep")
        ->required();
    reproduce->add_option("--seeds", flags.seeds_csv, "comma-separated seed grid (default 0,1,2)");

    try {
        app.parse(argc, argv);

        if (prepare->parsed()) {
            msrg::cmd_prepare(base_config(flags, prepare));
        } else if (merge->parsed()) {
            msrg::RunConfig cfg = base_config(flags, merge);
            apply_merge_flags(cfg, flags, merge);
            if (merge->count("--lr")) cfg.merge.lr = flags.lr;
            if (merge->count("--iters")) cfg.merge.steps = flags.iters;
            if (merge->count("--batch")) cfg.merge.batch = flags.batch;
            cfg.validate();
            msrg::cmd_merge(cfg);
        } else if (surgery->parsed()) {
            msrg::RunConfig cfg = base_config(flags, surgery);
            if (surgery->count("--method")) {
                cfg.merge.method = msrg::merge_method_from_string(flags.method);
            }
            if (surgery->count("--rank")) cfg.surgery.rank = flags.rank;
            if (surgery->count("--loss")) cfg.surgery.loss = msrg::loss_kind_from_string(flags.loss);
            if (surgery->count("--lr")) cfg.surgery.lr = flags.lr;
            if (surgery->count("--iters")) cfg.surgery.iterations = flags.iters;
            if (surgery->count("--batch")) cfg.surgery.batch = flags.batch;
            if (surgery->count("--ratio")) cfg.surgery.data_ratio = flags.ratio;
            if (surgery->count("--regime")) {
                if (flags.regime != "offline" && flags.regime != "online") {
                    throw msrg::UsageError("--regime must be offline or online");
                }
                cfg.surgery.regime =
                    flags.regime == "online" ? msrg::Regime::online : msrg::Regime::offline;
            }
            cfg.validate();
            msrg::cmd_surgery(cfg);
        } else if (report->parsed()) {
            msrg::cmd_report(base_config(flags, report));
        } else if (reproduce->parsed()) {
            msrg::RunConfig cfg = base_config(flags, reproduce);
            cfg.validate();
            const msrg::SuiteResult result =
                msrg::run_suite(cfg, flags.suite, parse_seed_grid(flags.seeds_csv));
            msrg::write_suite_files(cfg, result);
            for (const std::string& line : result.verdict_lines) std::cout << line << "\n";
            std::cout << (result.pass ? "SUITE PASS" : "SUITE FAIL") << ": " << result.name << "\n";
            if (!result.pass) return 3;
        }
        return 0;
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    } catch (const msrg::NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
