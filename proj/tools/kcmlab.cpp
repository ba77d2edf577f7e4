#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "kcmlab/errors.hpp"
#include "kcmlab/experiments.hpp"
#include "kcmlab/lattice.hpp"

namespace fs = std::filesystem;

namespace {

fs::path output_base(const std::string& flag, const kcm::ExperimentConfig& cfg) {
    if (!flag.empty()) return flag;
    const auto& out = cfg.params.at("out");
    if (out.is_string()) return out.get<std::string>();
    if (const char* env = std::getenv("KCMLAB_OUT"); env && *env) return env;
    return "kcmlab-out";
}

void print_verdicts(const std::vector<kcm::Verdict>& vs) {
    for (const auto& v : vs) {
        std::cout << (v.passed ? "PASS " : "FAIL ") << v.name;
        if (!v.detail.empty()) std::cout << "  (" << v.detail << ')';
        std::cout << '\n';
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Kinetically constrained models, contact processes and bootstrap percolation lab"};
    app.set_version_flag("--version", std::string(kcm::version()));
    app.require_subcommand(1);

    auto* run = app.add_subcommand("run", "Run an experiment from a TOML or JSON config");
    std::string config_path, out_dir;
    std::optional<std::uint64_t> seed;
    std::optional<unsigned> jobs;
    run->add_option("config", config_path, "Config file (.toml or .json)")->required()->check(CLI::ExistingFile);
    run->add_option("--seed", seed, "Override the base seed");
    run->add_option("--jobs", jobs, "Worker threads (0 = all cores)");
    run->add_option("--out", out_dir, "Base output directory (default $KCMLAB_OUT or ./kcmlab-out)");

    auto* cls = app.add_subcommand("classify", "Classify an update family");
    std::string family;
    cls->add_option("--family", family, "fa:j:d, u0:d, a JSON file or inline JSON")->required();

    auto* ver = app.add_subcommand("verify", "Re-check a run from its manifest");
    std::string manifest;
    ver->add_option("manifest", manifest, "manifest.json of a run")->required()->check(CLI::ExistingFile);

    auto* sum = app.add_subcommand("summary", "Summary table over run manifests");
    std::vector<std::string> manifests;
    sum->add_option("manifests", manifests, "manifest.json files")->check(CLI::ExistingFile);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run) {
            const auto cfg = kcm::with_overrides(kcm::load_config(config_path), seed, jobs);
            const fs::path dir = kcm::run_directory(cfg, output_base(out_dir, cfg));
            const auto rec = kcm::run_experiment(cfg, dir);
            print_verdicts(rec.verdicts);
            std::cout << "outputs: " << dir.string() << '\n';
            return rec.passed() ? 0 : 1;
        }
        if (*cls) {
            const auto fam = kcm::parse_family_spec(family);
            std::cout << kcm::to_string(kcm::classify(fam)) << '\n';
            return 0;
        }
        if (*ver) {
            const auto rep = kcm::verify_manifest(manifest);
            print_verdicts(rep.verdicts);
            return rep.passed() ? 0 : 1;
        }
        if (*sum) {
            std::vector<kcm::RunRecord> recs;
            for (const auto& m : manifests) {
                std::ifstream in(m);
                recs.push_back(kcm::record_from_json(nlohmann::json::parse(in)));
            }
            const auto table = kcm::emit_summary(recs);
            std::cout << table.to_csv();
            bool ok = true;
            for (const auto& r : recs) ok = ok && r.passed();
            return ok ? 0 : 1;
        }
    } catch (const kcm::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
