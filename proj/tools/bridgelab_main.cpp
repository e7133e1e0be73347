#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include <bridgelab/bridgelab.hpp>

int main(int argc, char** argv) {
    CLI::App app{"bridgelab: entropic interpolation workbench on 1d grids"};
    app.require_subcommand(1);

    auto* runcmd = app.add_subcommand("run", "execute a configured verification run");
    std::string config_path, out_dir, claims;
    double resolution = 1.0;
    runcmd->add_option("config", config_path, "path to a JSON run configuration")->required();
    runcmd->add_option("--out", out_dir, "output directory (overrides config)");
    runcmd->add_option("--claims", claims, "comma-separated claim ids; others are skipped");
    runcmd->add_option("--resolution", resolution,
                       "refinement multiplier applied to grid size and time steps");

    CLI11_PARSE(app, argc, argv);

    try {
        bridgelab::RunConfig cfg = bridgelab::parse_config(config_path);
        if (!out_dir.empty()) cfg.out_dir = out_dir;
        if (!claims.empty()) {
            std::stringstream ss(claims);
            std::string id;
            while (std::getline(ss, id, ','))
                if (!id.empty()) cfg.claims_filter.insert(id);
            for (const auto& id : cfg.claims_filter) {
                bool known = false;
                for (const auto& k : bridgelab::claim_ids())
                    if (k == id) known = true;
                if (!known) throw bridgelab::ConfigError("unknown claim id in --claims: " + id);
            }
        }
        bridgelab::apply_resolution(cfg, resolution);
        bridgelab::RunResult result = bridgelab::run(cfg);
        return result.exit_code;
    } catch (const bridgelab::ConfigError& e) {
        std::cerr << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 1;
    }
}
