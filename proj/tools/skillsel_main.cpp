#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "skillsel/pipeline.hpp"
#include "skillsel/util.hpp"

using namespace skillsel;

int main(int argc, char** argv) {
    CLI::App app{"skillsel: skill-graph corpus scoring and selection"};
    app.require_subcommand(1);

    std::string config_path;
    pipeline::Overrides overrides;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "pipeline config file")->required();
        cmd->add_option_function<double>("--ratio", [&](double v) { overrides.ratio = v; },
                                         "selection ratio override (percent)");
        cmd->add_option_function<double>("--temperature", [&](double v) { overrides.temperature = v; },
                                         "graph softmax temperature override");
        cmd->add_option_function<std::string>("--variant", [&](std::string v) { overrides.variant = v; },
                                              "similarity variant: max|mean|name");
        cmd->add_option_function<std::string>("--mask", [&](std::string v) { overrides.mask = v; },
                                              "adjacency mask: full|diag|nondiag");
        cmd->add_option_function<size_t>("--workers", [&](size_t v) { overrides.workers = v; },
                                         "worker threads for scoring");
        cmd->add_option_function<uint64_t>("--seed", [&](uint64_t v) { overrides.seed = v; },
                                           "sampling seed override");
        cmd->add_flag_function("--force", [&](int64_t) { overrides.force = true; },
                               "ignore cached stage outputs");
    };

    std::vector<std::string> stage_cmds;
    for (const char* stage : pipeline::kStageNames) stage_cmds.push_back(stage);
    stage_cmds.push_back("run-all");
    for (const auto& name : stage_cmds) {
        auto* cmd = app.add_subcommand(name, name == "run-all" ? "run every stage in order"
                                                               : "run the " + name + " stage");
        add_common(cmd);
    }

    CLI11_PARSE(app, argc, argv);

    std::string stage = app.get_subcommands().front()->get_name();
    try {
        pipeline::PipelineConfig cfg = pipeline::load_config(config_path, overrides);
        if (stage == "run-all") {
            pipeline::run_all(cfg);
        } else {
            pipeline::run_stage(cfg, stage);
        }
        return 0;
    } catch (const MissingInputError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const FormatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const ProviderError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
