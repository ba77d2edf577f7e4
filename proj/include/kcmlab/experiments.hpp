#pragma once

// Experiment configuration (TOML or JSON), orchestration, run records,
// summaries and re-verification of stored outputs.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace kcm {

std::string_view version();

/// Names of the supported experiment kinds.
const std::vector<std::string>& experiment_kinds();

/// A validated configuration: every key of the kind's schema is present
/// (defaults filled, optional values null) and families are stored inline.
struct ExperimentConfig {
    std::string kind;
    nlohmann::json params;

    std::uint64_t seed() const { return params.at("seed").get<std::uint64_t>(); }
    unsigned jobs() const { return params.at("jobs").get<unsigned>(); }
};

/// Validates against the kind's schema. Throws ConfigError naming the
/// offending field path.
ExperimentConfig config_from_json(const nlohmann::json& j);
/// TOML document to JSON (tables to objects, arrays to arrays).
nlohmann::json toml_to_json(std::string_view text, const std::string& source = "config");
ExperimentConfig config_from_toml(std::string_view text, const std::string& source = "config");
/// By extension: .json is parsed as JSON, anything else as TOML.
ExperimentConfig load_config(const std::filesystem::path& path);

ExperimentConfig with_overrides(ExperimentConfig cfg, std::optional<std::uint64_t> seed,
                                std::optional<unsigned> jobs);

/// Sorted-key compact JSON.
std::string canonical_json(const nlohmann::json& j);
/// 64-bit FNV-1a as 16 hex digits.
std::string fnv1a_hex(std::string_view bytes);
/// Hash of the canonical configuration without "jobs" and "out".
std::string config_hash(const ExperimentConfig& cfg);

struct Verdict {
    std::string name;
    bool passed = false;
    std::string detail;
};

struct OutputFile {
    std::string path;  // relative to the run directory
    std::string role;
    std::string hash;
    std::uintmax_t bytes = 0;
};

struct RunRecord {
    std::string kind;
    std::string config_hash;
    std::string version;
    double wall_time = 0;
    nlohmann::json config;
    std::vector<OutputFile> outputs;
    std::vector<Verdict> verdicts;
    nlohmann::json results = nlohmann::json::object();

    bool passed() const;
};

nlohmann::json record_to_json(const RunRecord& r);
RunRecord record_from_json(const nlohmann::json& j);

/// Runs the experiment, writes its outputs and manifest.json into `dir`
/// (created if needed) and returns the record.
RunRecord run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& dir);

/// Default run directory: <base>/<kind>-<first 8 hash digits>.
std::filesystem::path run_directory(const ExperimentConfig& cfg, const std::filesystem::path& base);

struct SummaryTable {
    std::vector<std::string> columns;
    std::vector<std::vector<std::string>> rows;
    bool empty() const noexcept { return rows.empty(); }
    std::string to_csv() const;
};

/// One row per verdict, plus doubling ratios for mixing-scaling records and
/// the fitted rate for survival records.
SummaryTable emit_summary(const std::vector<RunRecord>& records);

struct VerifyReport {
    std::vector<Verdict> verdicts;
    bool passed() const;
};

/// Re-hashes every listed output and re-checks the exact invariants of the
/// run from the stored files.
VerifyReport verify_manifest(const std::filesystem::path& manifest);

}  // namespace kcm
