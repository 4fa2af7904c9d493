// avr: batch pipeline front end. Summaries go to stdout as JSON; warnings
// and errors go to stderr as one JSON record per line. Exit status is 0 iff
// no error occurred.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "avr/config.hpp"
#include "avr/error.hpp"
#include "avr/pipeline.hpp"

namespace {

void diagnostic(std::string_view level, std::string_view kind, std::string_view message) {
    nlohmann::json j = {{"level", level}, {"message", message}};
    if (!kind.empty()) j["kind"] = kind;
    std::cerr << j.dump() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Penguin feeding-behaviour pipeline: flow extraction, feature assembly, LSTM training, evaluation"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<int> jobs;
    bool force = false;
    std::vector<std::string> overrides;
    app.add_option("--config", config_path, "Config file (sectioned key = value)")->check(CLI::ExistingFile);
    app.add_option("--seed", seed, "Override train.seed");
    app.add_option("--jobs", jobs, "Worker threads")->check(CLI::PositiveNumber);
    app.add_flag("--force", force, "Recompute outputs that already exist");
    app.add_option("--set", overrides, "Override a config value, e.g. --set train.epochs=20");

    auto* extract = app.add_subcommand("extract-flow", "TV-L1 flow for every adjacent frame pair");
    auto* assemble = app.add_subcommand("assemble", "Join detections, fish probabilities and flow into feature files");
    auto* train = app.add_subcommand("train", "Train the behaviour LSTM");
    std::optional<int> layers, hidden;
    bool sweep = false;
    train->add_option("--layers", layers, "LSTM layers")->check(CLI::PositiveNumber);
    train->add_option("--hidden", hidden, "LSTM hidden size")->check(CLI::PositiveNumber);
    train->add_flag("--sweep", sweep, "Train the four comparison layouts and write a comparison table");
    auto* eval = app.add_subcommand("eval", "Behaviour accuracy of a checkpoint on the test videos");
    std::string checkpoint;
    eval->add_option("--checkpoint", checkpoint, "Checkpoint (default: models/lstm_<L>x<H>.plsm)");
    eval->add_option("--layers", layers, "Layout of the default checkpoint")->check(CLI::PositiveNumber);
    eval->add_option("--hidden", hidden, "Layout of the default checkpoint")->check(CLI::PositiveNumber);
    auto* eval_det = app.add_subcommand("eval-detections", "Detection and fish-classifier metrics");
    auto* stats = app.add_subcommand("dataset-stats", "Annotation counts and split sizes");
    auto* show = app.add_subcommand("print-config", "Print the effective configuration");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        diagnostic("error", "usage", e.what());
        return 2;
    }

    std::vector<std::string> warnings;
    int status = 0;
    try {
        avr::PipelineConfig cfg;
        if (!config_path.empty()) {
            cfg = avr::load_config(config_path);
        } else {
            avr::apply_env_overrides(cfg);
        }
        for (const auto& o : overrides) {
            const auto eq = o.find('='), dot = o.find('.');
            if (eq == std::string::npos || dot == std::string::npos || dot > eq)
                throw avr::Error(avr::ErrorKind::config, "--set expects section.key=value, got '" + o + "'");
            cfg = avr::parse_config("[" + o.substr(0, dot) + "]\n" + o.substr(dot + 1) + "\n", cfg);
        }
        if (seed) cfg.train.seed = *seed;
        if (jobs) cfg.jobs = *jobs;
        if (layers) cfg.model.num_layers = *layers;
        if (hidden) cfg.model.hidden_size = *hidden;
        cfg.validate();

        const avr::RunOptions opt{force, &warnings};
        nlohmann::json summary;
        if (*extract) summary = avr::cmd_extract_flow(cfg, opt);
        else if (*assemble) summary = avr::cmd_assemble(cfg, opt);
        else if (*train) summary = avr::cmd_train(cfg, opt, {sweep});
        else if (*eval) {
            const auto path = checkpoint.empty() ? std::filesystem::path(cfg.paths.output_dir) / "models" /
                                                       (avr::pipeline_detail::model_stem(cfg.lstm_layout()) + ".plsm")
                                                 : std::filesystem::path(checkpoint);
            summary = avr::cmd_eval(cfg, path, opt);
        } else if (*eval_det) summary = avr::cmd_eval_detections(cfg, opt);
        else if (*stats) summary = avr::cmd_dataset_stats(cfg, opt);
        else if (*show) {
            std::cout << avr::serialize_config(cfg);
            return 0;
        }
        std::cout << summary.dump(2) << '\n';
    } catch (const avr::Error& e) {
        diagnostic("error", avr::to_string(e.kind()), e.what());
        status = 1;
    } catch (const std::exception& e) {
        diagnostic("error", "internal", e.what());
        status = 1;
    }
    for (const auto& w : warnings) diagnostic("warning", "", w);
    return status;
}
