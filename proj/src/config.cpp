#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include <toml.hpp>

#include "kcmlab/errors.hpp"
#include "kcmlab/experiments.hpp"
#include "kcmlab/lattice.hpp"

namespace kcm {

using nlohmann::json;

#ifndef KCMLAB_VERSION
#define KCMLAB_VERSION "0.1.0"
#endif

std::string_view version() { return KCMLAB_VERSION; }

namespace {

enum class Type { Int, Real, Bool, String, Family, FamilyList, IntList, RealList, VecList, StringList };

constexpr double kBig = std::numeric_limits<double>::max();

struct Field {
    Type type;
    json def;  // null: optional without default
    double lo = -kBig, hi = kBig;
    std::vector<std::string> choices{};
    bool required = false;
};

using Schema = std::map<std::string, Field>;

Field integer(json def, double lo = 0, double hi = 1e9) { return {Type::Int, std::move(def), lo, hi}; }
Field real(json def, double lo = -kBig, double hi = kBig) { return {Type::Real, std::move(def), lo, hi}; }
Field prob(json def) { return real(std::move(def), 0, 1); }
Field boolean(bool def) { return {Type::Bool, def}; }
Field choice(std::string def, std::vector<std::string> cs) { return {Type::String, def, -kBig, kBig, std::move(cs)}; }
Field family(json def) { return {Type::Family, std::move(def)}; }
Field ints(json def, double lo = 1, double hi = 1e9) { return {Type::IntList, std::move(def), lo, hi}; }
Field reals(json def, double lo = -kBig, double hi = kBig) { return {Type::RealList, std::move(def), lo, hi}; }
Field vecs() { return {Type::VecList, nullptr, -1e6, 1e6}; }

Schema common() {
    return {{"kind", {Type::String, nullptr, -kBig, kBig, {}, true}},
            {"seed", integer(1, 0, 1.8e19)},
            {"jobs", integer(0, 0, 4096)},
            {"out", {Type::String, nullptr}}};
}

const std::map<std::string, Schema>& schemas() {
    static const std::map<std::string, Schema> s = [] {
        std::map<std::string, Schema> m;
        m["classify"] = {{"families", {Type::FamilyList, json::array({"fa:1:2", "fa:2:2", "fa:3:2"})}},
                         {"expect", {Type::StringList, json::array()}}};
        Schema proc = {{"family", family("fa:2:2")},
                       {"n", integer(16, 1, 4096)},
                       {"boundary", choice("ones", {"ones", "zeros"})},
                       {"init", choice("bernoulli", {"ones", "zeros", "bernoulli"})},
                       {"p_init", prob(0.5)},
                       {"q", prob(0.9)},
                       {"horizon", real(10.0, 0, 1e7)},
                       {"replicas", integer(1, 1, 1e7)},
                       {"frames", reals(json::array(), 0, 1e7)},
                       {"store_trajectories", boolean(true)}};
        m["kcm"] = proc;
        m["cp"] = proc;
        m["bp"] = {{"family", family("fa:2:2")},
                   {"n", integer(16, 1, 4096)},
                   {"boundary", choice("zeros", {"ones", "zeros"})},
                   {"init", choice("bernoulli", {"ones", "zeros", "bernoulli", "diagonal"})},
                   {"p_init", prob(0.1)},
                   {"steps", integer(nullptr, 0, 1e8)},
                   {"store_frames", boolean(true)}};
        m["ca-death"] = {{"family", family("u0:2")},
                         {"delta", prob(0.05)},
                         {"n", integer(64, 1, 4096)},
                         {"init", choice("ones", {"ones", "zeros", "bernoulli"})},
                         {"p_init", prob(0.5)},
                         {"steps", integer(200, 0, 1e7)},
                         {"burn_in", integer(100, 0, 1e7)},
                         {"topology", choice("torus", {"torus", "box"})},
                         {"store_frames", boolean(false)}};
        m["lpp"] = {{"family", family("u0:2")},
                    {"sizes", ints(json::array({16, 32, 64, 128}), 1, 1e5)},
                    {"replicas", integer(100, 1, 1e7)},
                    {"weights", choice("exponential", {"exponential", "clock"})},
                    {"identity_check", boolean(false)},
                    {"probe_times", integer(10, 1, 1e6)},
                    {"ratio_lo", real(0.85, 0)},
                    {"ratio_hi", real(1.15, 0)},
                    {"ratio_from", integer(64, 1, 1e9)}};
        m["monotone-set"] = {{"ell", integer(16, 1, 1e4)}, {"dim", integer(2, 1, 6)}, {"replicas", integer(20, 1, 1e7)}};
        m["orange"] = {{"family", family("fa:2:2")},   {"n", integer(16, 1, 4096)},
                       {"q0", prob(0.9)},              {"p_init", prob(0.8)},
                       {"horizon", real(50.0, 0, 1e7)}, {"replicas", integer(1, 1, 1e7)}};
        m["grand-coupling"] = {{"family", family("fa:2:2")},
                               {"n", integer(16, 1, 4096)},
                               {"q", prob(0.95)},
                               {"q0", prob(0.9)},
                               {"p_cp", prob(0.8)},
                               {"p_extra", prob(0.5)},
                               {"inits", integer(10, 0, 1e4)},
                               {"horizon", real(100.0, 0, 1e7)},
                               {"replicas", integer(20, 1, 1e7)},
                               {"corrupt_tracker", boolean(false)},
                               {"store", boolean(true)}};
        m["mixing-scaling"] = {{"family", family("fa:2:2")},
                               {"sizes", ints(json::array({8, 16, 32}), 1, 4096)},
                               {"q", prob(0.95)},
                               {"q0", {Type::Real, nullptr, 0, 1}},
                               {"delta", {Type::Real, 0.25, 1e-9, 1 - 1e-9}},
                               {"replicas", integer(200, 1, 1e7)},
                               {"burn_in", real(0.0, 0)},
                               {"ell", integer(1, 0, 4096)},
                               {"bootstrap", integer(1000, 1, 1e7)},
                               {"max_time", {Type::Real, nullptr, 0, 1e9}},
                               {"ratio_lo", real(1.4, 0)},
                               {"ratio_hi", real(2.6, 0)}};
        m["survival"] = {{"family", family("fa:2:2")},
                         {"q", prob(0.97)},
                         {"q0", prob(0.97)},
                         {"p_init", prob(0.95)},
                         {"window", integer(0, 0, 4096)},
                         {"buffer", integer(12, 0, 4096)},
                         {"horizon", real(60.0, 0, 1e7)},
                         {"replicas", integer(10000, 1, 1e8)},
                         {"t_min", real(0.25, 1e-9)},
                         {"ratio", real(1.15, 1 + 1e-9)},
                         {"validate_buffer", boolean(true)},
                         {"validation_replicas", integer(16, 1, 1e6)},
                         {"max_buffer", integer(256, 0, 1e5)},
                         {"fit_t_min", real(0.0, 0)},
                         {"min_r2", prob(0.95)},
                         {"min_decades", real(1.0, 0)}};
        Schema renorm = {{"family", family("u0:2")},
                         {"u", {Type::IntList, nullptr, -1e6, 1e6}},
                         {"R", integer(2, 1, 1e4)},
                         {"T", real(1.0, 1e-9, 1e6)},
                         {"n", integer(24, 1, 4096)},
                         {"q0", prob(0.97)},
                         {"replicas", integer(50, 1, 1e7)},
                         {"budget", integer(16, 1, 1e4)}};
        m["renorm-check"] = renorm;
        m["renorm-check"]["p_init"] = prob(0.95);
        m["renorm-check"]["taus"] = integer(5, 1, 1e6);
        m["passage-times"] = renorm;
        m["passage-times"]["n"] = integer(32, 1, 4096);
        m["passage-times"]["q0"] = prob(0.9);
        m["warmup"] = {{"family", family("fa:2:2")},
                       {"q", prob(0.99)},
                       {"p", prob(0.3)},
                       {"R", integer(8, 1, 1e4)},
                       {"Ts", reals(json::array({5.0, 50.0}), 0, 1e7)},
                       {"window", integer(24, 0, 1e5)},
                       {"buffer", integer(16, 0, 1e5)},
                       {"replicas", integer(200, 1, 1e7)},
                       {"base_vectors", vecs()},
                       {"min_density", prob(0.9)}};
        m["cluster-tail"] = {{"mode", choice("ca-death", {"ca-death", "bp"})},
                             {"family", family("u0:2")},
                             {"delta", prob(0.05)},
                             {"n", integer(256, 1, 1e5)},
                             {"burn_in", integer(100, 0, 1e7)},
                             {"frames", integer(500, 1, 1e7)},
                             {"k", {Type::Real, nullptr, 1, 1e4}},
                             {"max_ell", integer(40, 0, 1e6)},
                             {"p", prob(0.05)},
                             {"size", integer(512, 1, 1e5)},
                             {"replicas", {Type::Int, nullptr, 1, 1e7}},
                             {"material", integer(0, 0, 1)},
                             {"sample_margin", {Type::Int, nullptr, 0, 1e6}},
                             {"min_r2", prob(0.9)}};
        m["chain-props"] = {{"instances", integer(1000, 1, 1e8)},
                            {"dim", integer(2, 1, 4)},
                            {"k", real(2.0, 1, 100)},
                            {"max_path", integer(30, 1, 1e4)},
                            {"max_set", integer(6, 1, 1e4)}};
        for (auto& [name, sc] : m)
            for (auto& [k, f] : common()) sc.emplace(k, f);
        return m;
    }();
    return s;
}

std::string type_name(Type t) {
    switch (t) {
        case Type::Int: return "an integer";
        case Type::Real: return "a number";
        case Type::Bool: return "a boolean";
        case Type::String: return "a string";
        case Type::Family: return "a family spec string or {dim, rules} table";
        case Type::FamilyList: return "an array of family specs";
        case Type::IntList: return "an array of integers";
        case Type::RealList: return "an array of numbers";
        case Type::VecList: return "an array of integer vectors";
        case Type::StringList: return "an array of strings";
    }
    return "";
}

std::string num_str(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
}

void check_range(const std::string& path, double v, const Field& f) {
    if (!std::isfinite(v)) throw ConfigError(path, "must be finite");
    if (v < f.lo || v > f.hi)
        throw ConfigError(path, "value " + num_str(v) + " outside [" + num_str(f.lo) + ", " + num_str(f.hi) + "]");
}

json check_int(const std::string& path, const json& v, const Field& f) {
    if (!v.is_number_integer()) throw ConfigError(path, "expected an integer");
    check_range(path, v.is_number_unsigned() ? static_cast<double>(v.get<std::uint64_t>())
                                             : static_cast<double>(v.get<std::int64_t>()),
                f);
    return v;
}

json check_real(const std::string& path, const json& v, const Field& f) {
    if (!v.is_number()) throw ConfigError(path, "expected a number");
    const double x = v.get<double>();
    check_range(path, x, f);
    return x;
}

json check_family(const std::string& path, const json& v) {
    if (v.is_string()) {
        try {
            return family_to_json(parse_family_spec(v.get<std::string>()));
        } catch (const std::exception& e) {
            throw ConfigError(path, e.what());
        }
    }
    if (!v.is_object()) throw ConfigError(path, "expected " + type_name(Type::Family));
    for (const auto& [k, _] : v.items())
        if (k != "dim" && k != "rules") throw ConfigError(path + "." + k, "unknown key");
    if (!v.contains("dim")) throw ConfigError(path + ".dim", "missing");
    if (!v.contains("rules")) throw ConfigError(path + ".rules", "missing");
    const json& dj = v.at("dim");
    if (!dj.is_number_integer() || dj.get<std::int64_t>() < 1 || dj.get<std::int64_t>() > 16)
        throw ConfigError(path + ".dim", "expected an integer in [1, 16]");
    const auto d = dj.get<std::size_t>();
    const json& rules = v.at("rules");
    if (!rules.is_array() || rules.empty()) throw ConfigError(path + ".rules", "expected a non-empty array of rules");
    for (std::size_t r = 0; r < rules.size(); ++r) {
        const std::string rp = path + ".rules[" + std::to_string(r) + "]";
        if (!rules[r].is_array() || rules[r].empty()) throw ConfigError(rp, "expected a non-empty array of offsets");
        for (std::size_t o = 0; o < rules[r].size(); ++o) {
            const std::string op = rp + "[" + std::to_string(o) + "]";
            const json& off = rules[r][o];
            if (!off.is_array() || off.size() != d)
                throw ConfigError(op, "expected an integer vector of length " + std::to_string(d));
            bool zero = true;
            for (std::size_t c = 0; c < d; ++c) {
                if (!off[c].is_number_integer())
                    throw ConfigError(op + "[" + std::to_string(c) + "]", "expected an integer");
                if (off[c].get<std::int64_t>() != 0) zero = false;
            }
            if (zero) throw ConfigError(op, "offset must be non-zero");
        }
    }
    try {
        return family_to_json(family_from_json(v));
    } catch (const std::exception& e) {
        throw ConfigError(path, e.what());
    }
}

template <class F>
json check_list(const std::string& path, const json& v, Type t, F&& each) {
    if (!v.is_array()) throw ConfigError(path, "expected " + type_name(t));
    json out = json::array();
    for (std::size_t i = 0; i < v.size(); ++i) out.push_back(each(path + "[" + std::to_string(i) + "]", v[i]));
    return out;
}

json check_value(const std::string& path, const json& v, const Field& f) {
    switch (f.type) {
        case Type::Int: return check_int(path, v, f);
        case Type::Real: return check_real(path, v, f);
        case Type::Bool:
            if (!v.is_boolean()) throw ConfigError(path, "expected a boolean");
            return v;
        case Type::String: {
            if (!v.is_string()) throw ConfigError(path, "expected a string");
            if (!f.choices.empty()) {
                const auto s = v.get<std::string>();
                bool ok = false;
                for (const auto& c : f.choices) ok = ok || c == s;
                if (!ok) {
                    std::string all;
                    for (const auto& c : f.choices) all += (all.empty() ? "" : ", ") + c;
                    throw ConfigError(path, "'" + s + "' is not one of: " + all);
                }
            }
            return v;
        }
        case Type::Family: return check_family(path, v);
        case Type::FamilyList:
            return check_list(path, v, f.type, [](const std::string& p, const json& e) { return check_family(p, e); });
        case Type::IntList:
            return check_list(path, v, f.type, [&](const std::string& p, const json& e) { return check_int(p, e, f); });
        case Type::RealList:
            return check_list(path, v, f.type, [&](const std::string& p, const json& e) { return check_real(p, e, f); });
        case Type::StringList:
            return check_list(path, v, f.type, [](const std::string& p, const json& e) {
                if (!e.is_string()) throw ConfigError(p, "expected a string");
                return e;
            });
        case Type::VecList:
            return check_list(path, v, f.type, [&](const std::string& p, const json& e) {
                Field inner{Type::Int, nullptr, f.lo, f.hi};
                return check_list(p, e, Type::IntList,
                                  [&](const std::string& q, const json& c) { return check_int(q, c, inner); });
            });
    }
    return v;
}

std::size_t family_dim(const json& fam) { return fam.at("dim").get<std::size_t>(); }

void cross_checks(const std::string& kind, json& p) {
    auto need_sorted = [&](const char* key) {
        const auto& a = p.at(key);
        for (std::size_t i = 1; i < a.size(); ++i)
            if (a[i].get<double>() <= a[i - 1].get<double>())
                throw ConfigError(std::string(key) + "[" + std::to_string(i) + "]", "must be strictly increasing");
    };
    if (kind == "classify") {
        if (p.at("families").empty()) throw ConfigError("families", "must not be empty");
        if (!p.at("expect").empty() && p.at("expect").size() != p.at("families").size())
            throw ConfigError("expect", "must have one entry per family");
        for (std::size_t i = 0; i < p.at("expect").size(); ++i) {
            const auto s = p.at("expect")[i].get<std::string>();
            bool ok = false;
            for (auto c : {FamilyClass::Supercritical, FamilyClass::Critical, FamilyClass::SubcriticalNontrivial,
                           FamilyClass::TrivialSubcritical, FamilyClass::UnknownNonTrivialSubcritical})
                ok = ok || to_string(c) == s;
            if (!ok) throw ConfigError("expect[" + std::to_string(i) + "]", "unknown class '" + s + "'");
        }
    }
    if (kind == "kcm" || kind == "cp") need_sorted("frames");
    if (kind == "lpp" || kind == "mixing-scaling") {
        if (p.at("sizes").empty()) throw ConfigError("sizes", "must not be empty");
        need_sorted("sizes");
    }
    if (kind == "lpp" && p.at("family").at("rules").size() != 1)
        throw ConfigError("family.rules", "an LPP needs exactly one rule");
    if (kind == "grand-coupling" && p.at("q0").get<double>() > p.at("q").get<double>())
        throw ConfigError("q0", "must not exceed q");
    if (kind == "mixing-scaling" && !p.at("q0").is_null() && p.at("q0").get<double>() > p.at("q").get<double>())
        throw ConfigError("q0", "must not exceed q");
    if (kind == "survival" && p.at("q0").get<double>() > p.at("q").get<double>())
        throw ConfigError("q0", "must not exceed q");
    if (kind == "lpp" && p.at("ratio_lo").get<double>() > p.at("ratio_hi").get<double>())
        throw ConfigError("ratio_lo", "must not exceed ratio_hi");
    if (kind == "mixing-scaling" && p.at("ratio_lo").get<double>() > p.at("ratio_hi").get<double>())
        throw ConfigError("ratio_lo", "must not exceed ratio_hi");
    if (kind == "renorm-check" || kind == "passage-times") {
        if (!p.at("u").is_null() && p.at("u").size() != family_dim(p.at("family")))
            throw ConfigError("u", "must have one entry per dimension");
        if (kind == "passage-times" && p.at("q0").get<double>() >= 1) throw ConfigError("q0", "must be < 1");
    }
    if (kind == "warmup") {
        if (p.at("Ts").empty()) throw ConfigError("Ts", "must not be empty");
        need_sorted("Ts");
        const auto& bv = p.at("base_vectors");
        const auto d = family_dim(p.at("family"));
        if (!bv.is_null()) {
            if (bv.size() != d) throw ConfigError("base_vectors", "must have one vector per dimension");
            for (std::size_t i = 0; i < bv.size(); ++i)
                if (bv[i].size() != d)
                    throw ConfigError("base_vectors[" + std::to_string(i) + "]", "must have length " + std::to_string(d));
        }
    }
}

json toml_node(const toml::node& n, const std::string& path) {
    if (auto t = n.as_table()) {
        json o = json::object();
        for (const auto& [k, v] : *t) {
            const std::string key(k.str());
            o[key] = toml_node(v, path.empty() ? key : path + "." + key);
        }
        return o;
    }
    if (auto a = n.as_array()) {
        json o = json::array();
        for (std::size_t i = 0; i < a->size(); ++i) o.push_back(toml_node((*a)[i], path + "[" + std::to_string(i) + "]"));
        return o;
    }
    if (auto v = n.as_integer()) return v->get();
    if (auto v = n.as_floating_point()) return v->get();
    if (auto v = n.as_boolean()) return v->get();
    if (auto v = n.as_string()) return v->get();
    throw ConfigError(path, "dates and times are not supported");
}

}  // namespace

const std::vector<std::string>& experiment_kinds() {
    static const std::vector<std::string> k = [] {
        std::vector<std::string> v;
        for (const auto& [name, _] : schemas()) v.push_back(name);
        return v;
    }();
    return k;
}

ExperimentConfig config_from_json(const json& j) {
    if (!j.is_object()) throw ConfigError("<root>", "expected a table");
    if (!j.contains("kind")) throw ConfigError("kind", "missing");
    if (!j.at("kind").is_string()) throw ConfigError("kind", "expected a string");
    const auto kind = j.at("kind").get<std::string>();
    const auto it = schemas().find(kind);
    if (it == schemas().end()) {
        std::string all;
        for (const auto& k : experiment_kinds()) all += (all.empty() ? "" : ", ") + k;
        throw ConfigError("kind", "unknown experiment kind '" + kind + "' (expected one of: " + all + ")");
    }
    const Schema& schema = it->second;
    for (const auto& [k, _] : j.items())
        if (!schema.count(k)) throw ConfigError(k, "unknown key for experiment kind '" + kind + "'");
    json p = json::object();
    for (const auto& [k, f] : schema) {
        if (j.contains(k) && !j.at(k).is_null())
            p[k] = check_value(k, j.at(k), f);
        else if (f.required)
            throw ConfigError(k, "missing");
        else if (f.def.is_null())
            p[k] = nullptr;
        else
            p[k] = check_value(k, f.def, f);
    }
    cross_checks(kind, p);
    return {kind, p};
}

json toml_to_json(std::string_view text, const std::string& source) {
    try {
        const toml::table t = toml::parse(text, source);
        return toml_node(t, "");
    } catch (const toml::parse_error& e) {
        const auto& b = e.source().begin;
        throw ConfigError(source + ":" + std::to_string(b.line) + ":" + std::to_string(b.column),
                          std::string(e.description()));
    }
}

ExperimentConfig config_from_toml(std::string_view text, const std::string& source) {
    return config_from_json(toml_to_json(text, source));
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError(path.string(), "cannot open");
    std::stringstream ss;
    ss << in.rdbuf();
    if (path.extension() == ".json") {
        json j;
        try {
            j = json::parse(ss.str());
        } catch (const json::parse_error& e) {
            throw ConfigError(path.string(), e.what());
        }
        return config_from_json(j);
    }
    return config_from_toml(ss.str(), path.string());
}

ExperimentConfig with_overrides(ExperimentConfig cfg, std::optional<std::uint64_t> seed,
                                std::optional<unsigned> jobs) {
    json j = cfg.params;
    if (seed) j["seed"] = *seed;
    if (jobs) j["jobs"] = *jobs;
    return config_from_json(j);
}

std::string canonical_json(const json& j) { return j.dump(); }

std::string fnv1a_hex(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    static const char* hex = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[static_cast<std::size_t>(i)] = hex[h & 15];
        h >>= 4;
    }
    return s;
}

std::string config_hash(const ExperimentConfig& cfg) {
    json j = cfg.params;
    j.erase("jobs");
    j.erase("out");
    return fnv1a_hex(canonical_json(j));
}

}  // namespace kcm
