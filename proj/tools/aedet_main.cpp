#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "aedet/pipeline.hpp"

int main(int argc, char** argv) {
    CLI::App app{"adversarial-example detection laboratory"};
    app.require_subcommand(1);

    std::string config_path = "experiment.json";
    bool force = false;
    int threads = 0;  // 0 = take the config's value
    std::vector<std::string> overrides;
    app.add_option("-c,--config", config_path, "experiment config (JSON)");
    app.add_flag("--force", force, "rerun stages even when up to date");
    app.add_option("--threads", threads, "worker threads (1 = bit-reproducible)");
    app.add_option("--set", overrides, "override a config leaf, e.g. network.epochs=3");

    std::vector<std::string> commands = aedet::stage_names();
    commands.push_back("all");
    for (const auto& name : commands) app.add_subcommand(name)->fallthrough();

    CLI11_PARSE(app, argc, argv);

    try {
        auto config = aedet::load_experiment_config(config_path, overrides);
        if (const char* root = std::getenv("AEDET_OUTPUT_ROOT"))
            config.output_dir = std::string(root) + "/" + config.output_dir;
        if (threads > 0) config.threads = threads;
        aedet::run_stage(config, app.get_subcommands().at(0)->get_name(), force);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
