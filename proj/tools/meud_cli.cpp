#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "meud/errors.hpp"
#include "meud/experiment.hpp"

namespace {

struct CommonFlags {
    std::string config_path;
    std::string dataset;
    std::string format;
    std::string variant;
    std::size_t r = 0;
    std::vector<std::uint64_t> seeds;
    int jobs = 0;
    std::string out_dir;
    bool neutral_test_embedding = false;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
    cmd->add_option("--config", flags.config_path, "flat key = value configuration file");
    cmd->add_option("--dataset", flags.dataset, "dataset directory (idx/cifar10 formats)");
    cmd->add_option("--format", flags.format, "dataset format: idx, cifar10 or synth");
    cmd->add_option("--seed", flags.seeds, "experiment seed(s)");
    cmd->add_option("--jobs", flags.jobs, "parallel sweep cells");
    cmd->add_option("--out-dir", flags.out_dir, "output directory");
    cmd->add_flag("--neutral-test-embedding", flags.neutral_test_embedding,
                  "zero the label block of test samples instead of embedding the true label");
}

meud::ExperimentConfig resolve(const CommonFlags& flags) {
    meud::ExperimentConfig cfg;
    if (!flags.config_path.empty()) cfg = meud::load_config_file(flags.config_path);
    if (!flags.dataset.empty()) cfg.dataset_dir = flags.dataset;
    if (!flags.format.empty()) cfg.format = flags.format;
    if (!flags.seeds.empty()) cfg.seeds = flags.seeds;
    if (flags.jobs > 0) cfg.jobs = flags.jobs;
    if (!flags.out_dir.empty()) cfg.out_dir = flags.out_dir;
    if (flags.neutral_test_embedding) cfg.eval.neutral_test_embedding = true;
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"MEUD autoencoder family: training, r-sweeps and evaluation"};
    app.require_subcommand(1);

    CommonFlags train_flags, sweep_flags, eval_flags;
    std::string checkpoint_path;

    CLI::App* train_cmd =
        app.add_subcommand("train", "train one variant and write checkpoint + loss CSV");
    add_common(train_cmd, train_flags);
    train_cmd->add_option("--variant", train_flags.variant, "model variant")->required();
    train_cmd->add_option("--r", train_flags.r, "target dimension")->required();

    CLI::App* sweep_cmd =
        app.add_subcommand("sweep", "train and evaluate every (variant, r, seed) cell");
    add_common(sweep_cmd, sweep_flags);
    sweep_cmd->add_option("--variant", sweep_flags.variant,
                          "restrict the sweep to one variant");
    sweep_cmd->add_option("--r", sweep_flags.r, "restrict the sweep to one target dimension");

    CLI::App* eval_cmd = app.add_subcommand("eval", "re-evaluate a saved checkpoint");
    add_common(eval_cmd, eval_flags);
    eval_cmd->add_option("checkpoint", checkpoint_path, "checkpoint file")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (train_cmd->parsed()) {
            const auto cfg = resolve(train_flags);
            const auto variant = meud::variant_from_name(train_flags.variant);
            if (!variant) {
                std::fprintf(stderr, "unknown variant '%s'\n", train_flags.variant.c_str());
                return 2;
            }
            return meud::cmd_train(cfg, *variant, train_flags.r);
        }
        if (sweep_cmd->parsed()) {
            auto cfg = resolve(sweep_flags);
            if (!sweep_flags.variant.empty()) {
                const auto variant = meud::variant_from_name(sweep_flags.variant);
                if (!variant) {
                    std::fprintf(stderr, "unknown variant '%s'\n", sweep_flags.variant.c_str());
                    return 2;
                }
                cfg.variants = {*variant};
            }
            if (sweep_flags.r > 0) cfg.r_values = {sweep_flags.r};
            return meud::cmd_sweep(cfg);
        }
        if (eval_cmd->parsed()) {
            return meud::cmd_eval(resolve(eval_flags), checkpoint_path);
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 2;
}
