// wt: command-line front end for the pruning experiments.

#include <cstdio>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "wt/harness.hpp"

namespace {

std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (c == '"' || c == '\\') out += '\\';
        if (c == '\n') {
            out += "\\n";
            continue;
        }
        out += c;
    }
    return out;
}

int report_error(const char* kind, const std::string& msg) {
    std::cerr << "wt: error=" << kind << " msg=\"" << escape(msg) << "\"\n";
    return 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Lottery-ticket pruning experiments for deepfake detectors"};
    app.require_subcommand(1);
    std::string config_path;
    std::string out_dir;
    std::uint64_t seed = 0;
    bool quiet = false;

    struct Sub {
        const char* name;
        const char* help;
    };
    const Sub subs[] = {{"generate", "write the synthetic dataset"},
                        {"train", "dense training per seed"},
                        {"prune", "IMP or one-shot sweep"},
                        {"transfer", "train a ticket on another dataset"},
                        {"gradcam", "attention maps along the pruning sweep"},
                        {"report", "aggregate a run directory"}};
    for (const auto& s : subs) {
        auto* cmd = app.add_subcommand(s.name, s.help);
        if (std::string(s.name) == "report") {
            cmd->add_option("--config", config_path, "config file (optional; its 'out' names the run directory)");
        } else {
            cmd->add_option("--config", config_path, "key = value config file")->required();
        }
        cmd->add_option("--seed", seed, "run a single seed instead of the configured list");
        cmd->add_option("--out", out_dir, "output directory");
        cmd->add_flag("-q,--quiet", quiet, "no progress output");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return report_error("usage", e.what());
    }

    const std::string command = app.get_subcommands().front()->get_name();
    const wt::Logger log = quiet ? wt::Logger{} : wt::Logger([](const std::string& m) { std::cerr << "wt: " << m << "\n"; });
    try {
        wt::ExperimentConfig cfg;
        if (!config_path.empty()) cfg = wt::load_config(config_path);
        if (app.get_subcommands().front()->count("--seed") > 0) cfg.seeds = {seed};
        if (!out_dir.empty()) cfg.out = out_dir;

        if (command == "generate") {
            std::cout << wt::cmd_generate(cfg, log).dump() << "\n";
        } else if (command == "train") {
            wt::cmd_train(cfg, log);
        } else if (command == "prune") {
            wt::cmd_prune(cfg, log);
        } else if (command == "transfer") {
            wt::cmd_transfer(cfg, log);
        } else if (command == "gradcam") {
            wt::cmd_gradcam(cfg, log);
        } else {
            wt::cmd_report(cfg.out, log);
        }
        if (!quiet) std::cerr << "wt: " << command << " done\n";
        return 0;
    } catch (const wt::Error& e) {
        return report_error(wt::to_string(e.kind()), e.what());
    } catch (const std::exception& e) {
        return report_error("internal", e.what());
    }
}
