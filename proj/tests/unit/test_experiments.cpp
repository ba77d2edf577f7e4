#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "kcmlab/errors.hpp"
#include "kcmlab/experiments.hpp"

using namespace kcm;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path tmp_root() {
    const char* t = std::getenv("KCMLAB_TEST_TMP");
    return fs::path(t ? t : "kcmlab-test-tmp");
}

fs::path tmp_dir(const std::string& name) {
    fs::path p = tmp_root() / name;
    fs::remove_all(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

ExperimentConfig cfg(const char* text) { return config_from_json(json::parse(text)); }

bool has_verdict(const RunRecord& r, const std::string& name, bool passed) {
    for (const auto& v : r.verdicts)
        if (v.name == name) return v.passed == passed;
    return false;
}

}  // namespace

TEST_CASE("classify experiment") {
    const auto rec = run_experiment(cfg(R"({"kind":"classify"})"), tmp_dir("classify"));
    CHECK(rec.passed());
    CHECK_FALSE(rec.verdicts.empty());
    const auto bad = run_experiment(
        cfg(R"({"kind":"classify","families":["fa:2:2"],"expect":["Supercritical"]})"), tmp_dir("classify-bad"));
    CHECK_FALSE(bad.passed());
}

TEST_CASE("reruns produce byte-identical outputs") {
    for (const char* text : {R"({"kind":"kcm","n":8,"horizon":5.0,"replicas":2,"frames":[1.0,5.0]})",
                             R"({"kind":"lpp","sizes":[4,8],"replicas":5,"ratio_from":8})",
                             R"({"kind":"cluster-tail","mode":"bp","size":48,"replicas":2,"max_ell":4})",
                             R"({"kind":"orange","n":8,"horizon":10.0,"replicas":2})"}) {
        CAPTURE(text);
        const auto c = cfg(text);
        const auto a = run_experiment(c, tmp_dir("rerun-a"));
        const auto b = run_experiment(with_overrides(c, std::nullopt, 1u), tmp_dir("rerun-b"));
        REQUIRE(a.outputs.size() == b.outputs.size());
        REQUIRE_FALSE(a.outputs.empty());
        for (std::size_t i = 0; i < a.outputs.size(); ++i) {
            CHECK(a.outputs[i].path == b.outputs[i].path);
            CHECK(a.outputs[i].hash == b.outputs[i].hash);
            CHECK(slurp(tmp_root() / "rerun-a" / a.outputs[i].path).size() == a.outputs[i].bytes);
        }
        CHECK(a.results == b.results);
    }
}

TEST_CASE("a grand coupling with the corrupted tracker fails") {
    const auto rec = run_experiment(
        cfg(R"({"kind":"grand-coupling","n":10,"horizon":30.0,"replicas":1,"inits":2,"corrupt_tracker":true})"),
        tmp_dir("corrupt"));
    CHECK_FALSE(rec.passed());
    bool any = false;
    for (const auto& o : rec.outputs)
        if (o.path == "violations.json") any = slurp(tmp_root() / "corrupt" / o.path) != "[]\n";
    CHECK(any);
}

TEST_CASE("summary of no records is empty") {
    const auto t = emit_summary({});
    CHECK(t.empty());
    CHECK(t.to_csv() == "kind,config_hash,item,value,ci_lo,ci_hi,verdict\n");
}

TEST_CASE("summary of mixing and survival records") {
    const auto mix = run_experiment(
        cfg(R"({"kind":"mixing-scaling","sizes":[2,4],"replicas":30,"bootstrap":50})"), tmp_dir("mix"));
    const auto surv = run_experiment(
        cfg(R"({"kind":"survival","replicas":300,"horizon":8.0,"validate_buffer":false,"buffer":4})"),
        tmp_dir("surv"));
    const auto t = emit_summary({mix, surv});
    bool ratio = false, lower = false, rate = false;
    for (const auto& row : t.rows) {
        REQUIRE(row.size() == t.columns.size());
        if (row[2] == "t_hat ratio 2->4") ratio = !row[3].empty() && (row[6] == "PASS" || row[6] == "FAIL");
        if (row[2] == "lower-proxy ratio 2->4") lower = !row[3].empty();
        if (row[0] == "survival" && row[2] == "decay rate") rate = !row[3].empty() && !row[4].empty() && !row[5].empty();
    }
    CHECK(ratio);
    CHECK(lower);
    CHECK(rate);
    const auto back = record_from_json(record_to_json(mix));
    CHECK(record_to_json(back) == record_to_json(mix));
}

TEST_CASE("verify re-checks a run and detects tampering") {
    const auto dir = tmp_dir("verify");
    const auto rec = run_experiment(cfg(R"({"kind":"kcm","n":8,"horizon":5.0,"replicas":1})"), dir);
    REQUIRE(rec.passed());
    CHECK(verify_manifest(dir / "manifest.json").passed());

    std::string victim;
    for (const auto& o : rec.outputs)
        if (o.path.find(".jsonl") != std::string::npos) victim = o.path;
    REQUIRE_FALSE(victim.empty());
    {
        std::ofstream out(dir / victim, std::ios::app);
        out << "{\"t\":1.0,\"x\":0,\"v\":1}\n";
    }
    CHECK_FALSE(verify_manifest(dir / "manifest.json").passed());
    CHECK_FALSE(verify_manifest(dir / "missing.json").passed());
}

TEST_CASE("geometry failures are forwarded") {
    const auto c = cfg(R"({"kind":"renorm-check","family":{"dim":2,"rules":[[[-3,0],[0,-3]]]},"R":1,"replicas":1})");
    CHECK_THROWS_AS(run_experiment(c, tmp_dir("geom")), GeometryError);
}

TEST_CASE("invalid configs raise ConfigError") {
    CHECK_THROWS_AS(cfg(R"({"kind":"kcm","colour":1})"), ConfigError);
    CHECK(experiment_kinds().size() == 16);
}

TEST_CASE("run directories are keyed by kind and hash") {
    const auto c = cfg(R"({"kind":"classify"})");
    const auto d = run_directory(c, "base");
    CHECK(d.parent_path() == fs::path("base"));
    CHECK(d.filename().string() == "classify-" + config_hash(c).substr(0, 8));
}
