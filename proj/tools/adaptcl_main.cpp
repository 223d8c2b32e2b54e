#include <cstdint>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "adaptcl/commands.hpp"

int main(int argc, char** argv) {
    CLI::App app{"adaptcl - adapter-based class-incremental learning experiments"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir = "run";
    std::uint64_t seed = 1;
    std::vector<std::string> overrides;
    bool emit_json = false;

    auto* train = app.add_subcommand("train", "run the incremental protocol from a config");
    train->add_option("config", config_path, "config file")->required();
    train->add_option("--seed", seed, "master seed");
    train->add_option("--out", out_dir, "output directory");
    train->add_option("--set", overrides, "override section.key=value")->take_all();
    train->add_flag("--json", emit_json, "print the report as JSON");

    std::string axis = "kinds";
    std::string grid = "all8";
    auto* sw = app.add_subcommand("sweep", "run the protocol over a grid of one axis");
    sw->add_option("config", config_path, "config file")->required();
    sw->add_option("--axis", axis,
                   "adapter_count | adapter_position | kinds | bottleneck | imbalance")
        ->required();
    sw->add_option("--grid", grid, "comma grid; 'all8' enumerates kind subsets")->required();
    sw->add_option("--seed", seed, "master seed");
    sw->add_option("--out", out_dir, "output directory");
    sw->add_option("--set", overrides, "override section.key=value")->take_all();
    sw->add_flag("--json", emit_json, "print the sweep table as JSON");

    std::string dims;
    double tol = 1e-6;
    double tol32 = 1e-3;
    auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient verification");
    gc->add_option("--dims", dims, "D,B,heads[,R] for the composite check");
    gc->add_option("--tol", tol, "64-bit tolerance");
    gc->add_option("--tol32", tol32, "32-bit tolerance");

    std::vector<std::string> run_dirs;
    std::string format = "csv";
    bool force = false;
    auto* rep = app.add_subcommand("report", "merge run reports");
    rep->add_option("dirs", run_dirs, "run directories")->required();
    rep->add_option("--format", format, "csv | json | gnuplot-data");
    rep->add_flag("--force", force, "merge runs with mismatched fingerprints");

    CLI11_PARSE(app, argc, argv);

    if (train->parsed()) {
        return adaptcl::cmd_train(config_path, overrides, seed, out_dir, emit_json);
    }
    if (sw->parsed()) {
        return adaptcl::cmd_sweep(config_path, overrides, axis, grid, seed, out_dir, emit_json);
    }
    if (gc->parsed()) {
        return adaptcl::cmd_gradcheck(dims, tol, tol32);
    }
    if (rep->parsed()) {
        return adaptcl::cmd_report(run_dirs, format, force);
    }
    return 2;
}
