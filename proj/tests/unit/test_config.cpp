#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <string>

#include "kcmlab/errors.hpp"
#include "kcmlab/experiments.hpp"

using namespace kcm;
namespace fs = std::filesystem;

namespace {

fs::path source_dir() {
    const char* s = std::getenv("KCMLAB_SOURCE_DIR");
    return s ? fs::path(s) : fs::path(".");
}

std::string error_path(const std::string& toml) {
    try {
        config_from_toml(toml);
    } catch (const ConfigError& e) {
        return e.path();
    }
    return "<no error>";
}

}  // namespace

TEST_CASE("TOML and JSON describe the same configuration") {
    const auto a = config_from_toml(R"(
kind = "lpp"
sizes = [4, 8]
replicas = 3
family = { dim = 2, rules = [[[-1, 0], [0, -1], [-1, -1]]] }
ratio_lo = 1
)");
    const auto b = config_from_json(nlohmann::json::parse(R"({
"kind": "lpp", "sizes": [4, 8], "replicas": 3, "family": "u0:2", "ratio_lo": 1.0})"));
    CHECK(a.kind == b.kind);
    CHECK(a.params == b.params);
    CHECK(config_hash(a) == config_hash(b));
    CHECK(config_hash(load_config(source_dir() / "configs/chain-props.toml")) ==
          config_hash(load_config(source_dir() / "configs/chain-props.json")));
}

TEST_CASE("every shipped config validates") {
    std::size_t n = 0;
    for (const auto& e : fs::directory_iterator(source_dir() / "configs")) {
        CAPTURE(e.path().string());
        CHECK_NOTHROW(load_config(e.path()));
        ++n;
    }
    CHECK(n >= 16);
}

TEST_CASE("defaults are filled and hashing ignores jobs and out") {
    const auto a = config_from_toml("kind = \"kcm\"");
    CHECK(a.params.at("n") == 16);
    CHECK(a.params.at("seed") == 1);
    CHECK(a.params.at("out").is_null());
    const auto b = with_overrides(a, std::nullopt, 3u);
    CHECK(b.jobs() == 3);
    CHECK(config_hash(a) == config_hash(b));
    const auto c = with_overrides(a, 9ull, std::nullopt);
    CHECK(c.seed() == 9);
    CHECK(config_hash(a) != config_hash(c));
    CHECK(fnv1a_hex("").size() == 16);
    CHECK(fnv1a_hex("") == "cbf29ce484222325");
    CHECK(canonical_json(nlohmann::json::parse(R"({"b":1,"a":[2,{"d":1,"c":0}]})")) == R"({"a":[2,{"c":0,"d":1}],"b":1})");
}

TEST_CASE("unknown keys are rejected with their path") {
    CHECK(error_path("kind = \"kcm\"\ncolour = \"blue\"") == "colour");
    CHECK(error_path("kind = \"kcm\"\nfamily = { dim = 2, rules = [[[1, 0]]], extra = 1 }") == "family.extra");
    try {
        config_from_toml("kind = \"kcm\"\ncolour = \"blue\"");
        FAIL("expected a ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).rfind("colour: unknown key", 0) == 0);
    }
}

TEST_CASE("type and range errors name the field") {
    CHECK(error_path("kind = \"kcm\"\nq = 1.5") == "q");
    CHECK(error_path("kind = \"kcm\"\nn = 0") == "n");
    CHECK(error_path("kind = \"kcm\"\nn = 2.5") == "n");
    CHECK(error_path("kind = \"kcm\"\ninit = \"stripes\"") == "init");
    CHECK(error_path("kind = \"kcm\"\nframes = [1.0, \"x\"]") == "frames[1]");
    CHECK(error_path("kind = \"lpp\"\nsizes = [8, 4]") == "sizes[1]");
    CHECK(error_path("kind = \"grand-coupling\"\nq = 0.5\nq0 = 0.9") == "q0");
    CHECK(error_path("kind = \"nope\"") == "kind");
    CHECK(error_path("n = 3") == "kind");
}

TEST_CASE("family errors carry nested paths") {
    CHECK(error_path("kind = \"kcm\"\nfamily = { dim = 2, rules = [[[0, 0]]] }") == "family.rules[0][0]");
    CHECK(error_path("kind = \"kcm\"\nfamily = { dim = 2, rules = [[[1, 0], [1]]] }") == "family.rules[0][1]");
    CHECK(error_path("kind = \"kcm\"\nfamily = { dim = 2, rules = [[[1, 0.5]]] }") == "family.rules[0][0][1]");
    CHECK(error_path("kind = \"kcm\"\nfamily = { rules = [[[1, 0]]] }") == "family.dim");
    CHECK(error_path("kind = \"kcm\"\nfamily = \"fa:7\"") == "family");
    CHECK(error_path("kind = \"classify\"\nfamilies = [\"fa:1:2\", \"bad\"]") == "families[1]");
}

TEST_CASE("TOML syntax errors report the line") {
    try {
        config_from_toml("kind = \"kcm\"\nn = \n", "cfg.toml");
        FAIL("expected a ConfigError");
    } catch (const ConfigError& e) {
        CHECK(e.path().rfind("cfg.toml:2:", 0) == 0);
    }
}
