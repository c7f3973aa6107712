#include "isocorr/runner.hpp"

#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <string>

namespace {

// Exit codes: 0 success, 2 config error, 3 precondition violation,
// 4 numerical failure.
int dispatch(const std::string& command, const std::string& config_path, const std::string& out_dir,
             std::uint64_t seed) {
    try {
        const isocorr::json manifest = isocorr::run_config_file(config_path, out_dir, seed);
        if (manifest.at("command") != command) {
            std::cerr << "error: config command '" << manifest.at("command").get<std::string>()
                      << "' does not match subcommand '" << command << "'\n";
            return 2;
        }
        std::cout << "wrote " << out_dir << "/manifest.json\n";
        return 0;
    } catch (const isocorr::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const isocorr::IoError& e) {
        std::cerr << "io error: " << e.what() << '\n';
        return 2;
    } catch (const isocorr::PreconditionError& e) {
        std::cerr << "precondition violation: " << e.what() << '\n';
        return 3;
    } catch (const isocorr::NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Convex-integration engine: corrugation stages, adapted short embeddings, "
                 "and one-sided isometric extensions on discrete charts"};
    app.require_subcommand(1);

    std::string config_path, out_dir = "out";
    std::uint64_t seed = 0;

    const std::vector<std::string> commands = {"stage", "ladder", "iterate",
                                               "embed-torus", "extend", "verify"};
    std::string chosen;
    for (const std::string& name : commands) {
        CLI::App* sub = app.add_subcommand(name);
        sub->add_option("--config", config_path, "JSON run configuration")->required();
        sub->add_option("--out", out_dir, "output directory");
        sub->add_option("--seed", seed, "RNG seed recorded in the manifest");
        sub->callback([&chosen, name] { chosen = name; });
    }

    CLI11_PARSE(app, argc, argv);
    return dispatch(chosen, config_path, out_dir, seed);
}
