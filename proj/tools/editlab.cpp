// editlab: config-driven experiments for model editing and robustness
// evaluation on procedural desk-scale tasks.
//
//   editlab gen --config F --out D    generate and export the datasets
//   editlab train-base --config F     train the base model, save checkpoint
//   editlab edit --config F           run the layers x lr x restarts grid
//   editlab sweep --config F          full experiment incl. interpolation,
//                                     penalties and report rendering
//   editlab report --in D             re-render plot data from CSVs
//   editlab config --defaults         print the default config schema

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

#include "editlab/editlab.hpp"

namespace {

editlab::ExperimentConfig load_with_overrides(const std::string& config_path, long long seed,
                                              int jobs) {
    auto cfg = editlab::load_config(config_path);
    if (seed >= 0) cfg.seed = static_cast<std::uint64_t>(seed);
    if (jobs > 0) cfg.jobs = jobs;
    return cfg;
}

void cmd_gen(const editlab::ExperimentConfig& cfg, const std::string& out, bool quiet) {
    namespace fs = std::filesystem;
    auto data = editlab::prepare_data(cfg);
    const fs::path dir(out.empty() ? cfg.out_dir : out);
    editlab::save_base_dataset(dir / "base_train", data.base_train);
    editlab::save_base_dataset(dir / "base_val", data.base_val);
    editlab::save_base_dataset(dir / "edit_pool", data.pool);
    editlab::save_triples(dir / "edit_train", data.edit_data.train,
                          {{"split", "train"}, {"style", cfg.data.style}});
    editlab::save_triples(dir / "edit_val", data.edit_data.val,
                          {{"split", "val"}, {"style", cfg.data.style}});
    if (!quiet)
        std::cout << "wrote datasets to " << dir.string() << " (base " << data.base_train.size()
                  << "/" << data.base_val.size() << ", edit " << data.edit_data.train.size() << "/"
                  << data.edit_data.val.size() << ")\n";
}

void cmd_train_base(const editlab::ExperimentConfig& cfg, bool quiet) {
    namespace fs = std::filesystem;
    auto data = editlab::prepare_data(cfg);
    editlab::EditTrace trace;
    auto net = editlab::make_base_model(cfg, data, &trace, quiet);
    const fs::path out(cfg.out_dir);
    fs::create_directories(out);
    editlab::save_checkpoint(out / "original.ckpt", editlab::capture(net),
                             {{"kind", "original"}, {"arch", net.arch_id}});
    editlab::rundetail::write_trace_csv(out / "base.csv", trace);
    if (!quiet)
        std::cout << "base val acc " << editlab::fmt_double(trace.best_val_acc) << ", checkpoint "
                  << (out / "original.ckpt").string() << "\n";
}

void cmd_edit(editlab::ExperimentConfig cfg, bool quiet) {
    // the edit grid without interpolation sweeps or penalty evaluation
    cfg.shifts.clear();
    cfg.report.curve_shifts.clear();
    cfg.alphas = {0.0, 1.0};
    auto result = editlab::run_experiment(cfg, quiet);
    if (!quiet) {
        for (const auto& o : result.outcomes)
            std::cout << "layer " << o.layer << ": best val acc "
                      << editlab::fmt_double(o.winner.best_val_acc) << " (lr "
                      << editlab::fmt_double(o.winner.lr) << ", restart " << o.winner.restart
                      << ")\n";
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"editlab: model editing and robustness experiments"};
    app.require_subcommand(1);

    long long seed_override = -1;
    int jobs_override = 0;
    bool quiet = false;
    app.add_option("--seed", seed_override, "override the config seed");
    app.add_option("--jobs", jobs_override, "worker threads for independent runs");
    app.add_flag("--quiet", quiet, "suppress progress output");

    std::string config_path, out_dir, in_dir;
    bool show_defaults = false;
    bool no_svg = false;

    auto* gen = app.add_subcommand("gen", "generate datasets");
    gen->add_option("--config", config_path, "config file")->required();
    gen->add_option("--out", out_dir, "output directory (defaults to config out_dir)");

    auto* train = app.add_subcommand("train-base", "train the base model");
    train->add_option("--config", config_path, "config file")->required();

    auto* edit = app.add_subcommand("edit", "run the editing grid");
    edit->add_option("--config", config_path, "config file")->required();

    auto* sweep = app.add_subcommand("sweep", "full experiment with interpolation and penalties");
    sweep->add_option("--config", config_path, "config file")->required();

    auto* report = app.add_subcommand("report", "re-render plot data from CSVs");
    report->add_option("--in", in_dir, "experiment output directory")->required();
    report->add_flag("--no-svg", no_svg, "skip SVG rendering");

    auto* config = app.add_subcommand("config", "config utilities");
    config->add_flag("--defaults", show_defaults, "print the default config");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) {
            cmd_gen(load_with_overrides(config_path, seed_override, jobs_override), out_dir, quiet);
        } else if (train->parsed()) {
            cmd_train_base(load_with_overrides(config_path, seed_override, jobs_override), quiet);
        } else if (edit->parsed()) {
            cmd_edit(load_with_overrides(config_path, seed_override, jobs_override), quiet);
        } else if (sweep->parsed()) {
            auto cfg = load_with_overrides(config_path, seed_override, jobs_override);
            auto result = editlab::run_experiment(cfg, quiet);
            if (!quiet)
                std::cout << "done: " << result.runs.size() << " runs, outputs in " << cfg.out_dir
                          << "\n";
        } else if (report->parsed()) {
            editlab::emit_report(in_dir, !no_svg);
            if (!quiet) std::cout << "report rendered in " << in_dir << "\n";
        } else if (config->parsed()) {
            if (show_defaults)
                std::cout << editlab::to_json(editlab::ExperimentConfig{}).dump(2) << "\n";
            else
                std::cout << "use --defaults to print the default config\n";
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
