#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "fedmeta/dataset.hpp"
#include "fedmeta/error.hpp"
#include "fedmeta/experiment.hpp"

using namespace fedmeta;

namespace {

// Exit codes.
constexpr int kOk = 0;
constexpr int kFailure = 1;
constexpr int kBadConfig = 2;

void diagnose(const Error& e) {
    nlohmann::ordered_json j;
    j["error"] = to_string(e.kind());
    if (const auto* ce = dynamic_cast<const ConfigError*>(&e)) {
        j["issues"] = nlohmann::ordered_json::array();
        for (const auto& i : ce->issues()) j["issues"].push_back({{"path", i.path}, {"message", i.message}});
    } else {
        j["message"] = e.what();
    }
    std::cerr << j.dump() << '\n';
}

/// A built-in name or a JSON file.
ExperimentConfig resolve(const std::string& what) {
    if (!std::filesystem::exists(what)) {
        const auto names = builtin_experiment_names();
        if (std::find(names.begin(), names.end(), what) != names.end()) return builtin_experiment(what);
    }
    return load_config_file(what);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Federated meta-learning backdoor experiments"};
    app.require_subcommand(1);

    auto* run = app.add_subcommand("run", "Run an experiment from a config file or built-in name");
    std::string run_config;
    std::optional<std::uint64_t> seed;
    std::string out_dir;
    bool paper_scale = false;
    std::optional<std::size_t> threads;
    bool quiet = false;
    run->add_option("config", run_config, "Config file or built-in experiment name")->required();
    run->add_option("--seed", seed, "Master seed");
    run->add_option("--out", out_dir, "Output directory");
    run->add_flag("--paper-scale", paper_scale, "Use the paper-scale episode counts and network width");
    run->add_option("--threads", threads, "Worker threads (0: all cores)");
    run->add_flag("--quiet", quiet, "No progress output");

    auto* validate = app.add_subcommand("validate", "Check a config and print its resolved form");
    std::string validate_config_path;
    validate->add_option("config", validate_config_path, "Config file or built-in experiment name")->required();

    auto* list = app.add_subcommand("list-experiments", "List built-in experiment names");

    auto* synth = app.add_subcommand("make-synthetic", "Write a synthetic glyph dataset as an FMD1 file");
    SyntheticConfig scfg;
    std::string synth_out;
    std::uint64_t synth_seed = 42;
    synth->add_option("--classes", scfg.meta_train_classes, "Meta-training classes")->required();
    synth->add_option("--meta-test-classes", scfg.meta_test_classes, "Meta-test classes");
    synth->add_option("--backdoor-classes", scfg.backdoor_classes, "Backdoor classes");
    synth->add_option("--examples", scfg.examples_per_class, "Examples per class");
    synth->add_option("--size", scfg.image_size, "Image side in pixels");
    synth->add_option("--seed", synth_seed, "Generator seed");
    synth->add_option("--out", synth_out, "Output file")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*list) {
            for (const auto& name : builtin_experiment_names()) std::cout << name << '\n';
            return kOk;
        }
        if (*validate) {
            auto config = resolve(validate_config_path);
            std::cout << config_to_json(config).dump(2) << '\n';
            return kOk;
        }
        if (*synth) {
            const auto data = make_synthetic_dataset(scfg, synth_seed);
            save_packed_dataset(synth_out, data.dataset);
            std::cout << "wrote " << data.dataset.class_count() << " classes to " << synth_out << '\n';
            return kOk;
        }
        if (*run) {
            auto config = resolve(run_config);
            if (seed) config.seed = *seed;
            if (threads) config.threads = *threads;
            if (!out_dir.empty()) config.output_dir = out_dir;
            if (paper_scale) apply_paper_scale(config);
            if (config.output_dir.empty()) config.output_dir = "runs/" + config.name + "-seed" + std::to_string(config.seed);
            const auto issues = check_config(config);
            if (!issues.empty()) throw ConfigError(issues);

            DirectorySink sink(config.output_dir, [&](std::string_view msg) {
                if (!quiet) std::cerr << msg << '\n';
            });
            const auto result = run_experiment(config, sink);
            sink.write_manifest(config, result);
            std::cout << "wrote " << config.output_dir << '\n';
            return kOk;
        }
    } catch (const ConfigError& e) {
        diagnose(e);
        return kBadConfig;
    } catch (const Error& e) {
        diagnose(e);
        return kFailure;
    } catch (const std::exception& e) {
        std::cerr << nlohmann::json{{"error", "internal"}, {"message", e.what()}}.dump() << '\n';
        return kFailure;
    }
    return kFailure;
}
