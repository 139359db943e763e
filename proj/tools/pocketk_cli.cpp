#include "pocketk/study.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <cstdio>
#include <functional>
#include <optional>

namespace {

using pocketk::study::RunConfig;
using pocketk::study::StageLog;

int print_log(std::string_view stage, const StageLog& log) {
    for (const auto& line : log) fmt::print("[{}] {}\n", stage, line);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"pocketk: single-lead ECG hyperkalemia screening study on synthetic cohorts"};
    app.require_subcommand(0, 1);

    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out_dir;
    std::string data_dir;
    bool print_defaults = false;
    app.add_option("--config", config_path, "key = value configuration file");
    app.add_option("--seed", seed, "master seed");
    app.add_option("--out", out_dir, "run directory");
    app.add_option("--data-dir", data_dir, fmt::format("cohort root (default ${} or ./data)",
                                                       pocketk::study::kDataDirEnv));
    app.add_flag("--print-defaults", print_defaults, "print the default configuration and exit");

    std::optional<double> window_minutes;
    std::string cutoff;
    std::optional<int> bootstrap;
    std::string profile;
    std::string device_input;
    std::string device_output;

    auto* synth = app.add_subcommand("synth", "generate the development and external cohorts");
    auto* pair = app.add_subcommand("pair", "pair ECGs to labs and run the quality gate");
    pair->add_option("--window-minutes", window_minutes, "pairing window, +/- minutes");
    auto* split = app.add_subcommand("split", "chronological and 8:1:1 patient split, STARD, baseline table");
    split->add_option("--cutoff", cutoff, "RFC3339 chronological cutoff");
    auto* train = app.add_subcommand("train", "fit the classifier and freeze the threshold");
    train->add_option("--profile", profile, "compact or reference")->check(CLI::IsMember({"compact", "reference"}));
    auto* eval = app.add_subcommand("eval", "score validation sets and report metrics with bootstrap CIs");
    eval->add_option("--bootstrap", bootstrap, "bootstrap resamples");
    auto* explain = app.add_subcommand("explain", "averaged waveforms and reference-negative phenotypes");
    auto* track = app.add_subcommand("track", "longitudinal trajectories and exemplar selection");
    auto* device = app.add_subcommand("device", "score one wire-format recording");
    device->add_option("--input", device_input, "PKECG1 recording")->required();
    device->add_option("--output", device_output, "result JSON (default <out>/device_result.json)");
    auto* report = app.add_subcommand("report", "assemble the run directory report");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        RunConfig cfg = RunConfig::defaults();
        if (print_defaults) {
            fmt::print("{}", cfg.to_text(true));
            return 0;
        }
        if (!config_path.empty()) cfg = RunConfig::load(config_path, cfg);
        if (seed) cfg.seed = *seed;
        if (!out_dir.empty()) cfg.out_dir = out_dir;
        if (!data_dir.empty()) cfg.data_dir = data_dir;
        if (window_minutes) cfg.window_minutes = *window_minutes;
        if (!cutoff.empty()) cfg.set("cutoff", cutoff);
        if (bootstrap) cfg.set("bootstrap_resamples", std::to_string(*bootstrap));
        if (!profile.empty()) cfg.profile = profile;
        cfg.validate();

        const std::pair<CLI::App*, std::function<StageLog(const RunConfig&)>> stages[] = {
            {synth, pocketk::study::run_synth},     {pair, pocketk::study::run_pair},
            {split, pocketk::study::run_split},     {train, pocketk::study::run_train},
            {eval, pocketk::study::run_eval},       {explain, pocketk::study::run_explain},
            {track, pocketk::study::run_track},     {report, pocketk::study::run_report},
        };
        for (const auto& [cmd, fn] : stages) {
            if (cmd->parsed()) return print_log(cmd->get_name(), fn(cfg));
        }
        if (device->parsed()) {
            const auto result = pocketk::study::run_device(cfg, device_input, device_output);
            fmt::print("{}", pocketk::device::result_to_json(result));
            return 0;
        }
        fmt::print("{}", app.help());
        return 0;
    } catch (const pocketk::QualityError& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return 1;
    }
}
