// mfliq: command-line front end. One subcommand per run; see README.md.

#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "mfliq/cli/run.hpp"

int main(int argc, char** argv) {
    using namespace mfliq::cli;
    CLI::App app{"Linear conditional McKean-Vlasov FBSDE and liquidation game solver"};
    app.set_version_flag("--version", std::string(version));
    app.require_subcommand(1, 1);

    std::string config, out = "out";
    std::optional<std::uint64_t> seed;
    unsigned workers = 1;
    for (const auto& name : subcommands()) {
        auto* sc = app.add_subcommand(name);
        sc->add_option("--config,-c", config, "JSON run configuration")->required()->check(CLI::ExistingFile);
        sc->add_option("--out,-o", out, "output directory")->capture_default_str();
        sc->add_option("--seed", seed, "override ensemble.seed");
        sc->add_option("--workers", workers, "worker threads")->capture_default_str()->check(CLI::PositiveNumber);
    }
    CLI11_PARSE(app, argc, argv);
    const std::string sub = app.get_subcommands().front()->get_name();

    RunConfig cfg;
    try {
        cfg = load_config(config);
    } catch (const ConfigError& e) {
        std::filesystem::create_directories(out);
        write_json(std::filesystem::path(out) / "error.json",
                   {{"kind", "config_error"}, {"message", e.what()}, {"exit_code", config_error}, {"subcommand", sub}});
        std::cerr << "mfliq: " << e.what() << '\n';
        return config_error;
    }
    if (seed) {
        cfg.ensemble.seed = *seed;
        cfg.raw["ensemble"]["seed"] = *seed;
    }
    cfg.workers = workers;

    const int status = run(sub, cfg, out);
    if (status != ok) {
        std::cerr << "mfliq " << sub << ": failed with exit code " << status << ", see "
                  << (std::filesystem::path(out) / "error.json").string() << '\n';
    }
    return status;
}
