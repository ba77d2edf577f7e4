#include <doctest.h>

#include <cmath>
#include <limits>
#include <sstream>

#include <nlohmann/json.hpp>

#include "kcmlab/io.hpp"

using namespace kcm;

TEST_CASE("doubles round-trip through their shortest form") {
    CHECK(format_double(0.1) == "0.1");
    CHECK(format_double(2.0) == "2");
    CHECK(format_double(std::numeric_limits<double>::infinity()) == "inf");
    CHECK(format_double(-std::numeric_limits<double>::infinity()) == "-inf");
    for (double v : {1.0 / 3.0, 1e-300, 123456.789, -0.000123, 6.02214076e23})
        CHECK(std::stod(format_double(v)) == v);
}

TEST_CASE("boxes and boundaries round-trip") {
    const Box b(LatticeVec{-2, 3}, LatticeVec{4, 9});
    CHECK(box_from_json(box_to_json(b)) == b);
    ExplicitBoundary eb;
    eb.values[{0, 0}] = true;
    eb.values[{0, 1}] = false;
    for (const Boundary& bd : {Boundary{AllOnes{}}, Boundary{AllZeros{}}, Boundary{eb}})
        CHECK(boundary_from_json(boundary_to_json(bd)) == bd);
}

TEST_CASE("trajectories round-trip through JSON lines") {
    const Domain dom{Box::cube(6, 2), AllOnes{}};
    const auto t = run_kcm(fa_family(2, 2), dom, Configuration::bernoulli(dom.box, 0.4, 2), 0.8, 15,
                           ClockField(2, 2, 5));
    REQUIRE_FALSE(t.events.empty());
    std::stringstream ss;
    write_trajectory_jsonl(ss, t);
    const auto back = read_trajectory_jsonl(ss);
    CHECK(back.kind == t.kind);
    CHECK(back.family == t.family);
    CHECK(back.domain.box == t.domain.box);
    CHECK(back.domain.boundary == t.domain.boundary);
    CHECK(back.q == t.q);
    CHECK(back.horizon == t.horizon);
    CHECK(back.clocks == t.clocks);
    CHECK(back.initial == t.initial);
    CHECK(back.events == t.events);
    CHECK(consistent_with_clocks(back));

    std::stringstream again;
    write_trajectory_jsonl(again, back);
    std::stringstream first;
    write_trajectory_jsonl(first, t);
    CHECK(again.str() == first.str());
}

TEST_CASE("tampered trajectories are not consistent with their clocks") {
    const Domain dom{Box::cube(5, 2), AllOnes{}};
    auto t = run_cp(u0_family(2), dom, Configuration::bernoulli(dom.box, 0.5, 1), 0.7, 10, ClockField(1, 2));
    REQUIRE_FALSE(t.events.empty());
    t.events.front().value ^= 1;
    CHECK_FALSE(consistent_with_clocks(t));
}

TEST_CASE("frames round-trip") {
    const auto map = LocalMap::from_bp(u0_family(2));
    const auto traj = run_ca_death(map, 0.1, Configuration::ones(Box::cube(8, 2)), 5, 3);
    std::stringstream ss;
    write_frames_jsonl(ss, traj);
    const auto frames = read_frames_jsonl(ss);
    REQUIRE(frames.size() == traj.frames.size());
    for (std::size_t i = 0; i < frames.size(); ++i) {
        CHECK(frames[i].time == static_cast<double>(i));
        CHECK(frames[i].config == traj.frames[i]);
    }
}

TEST_CASE("CSV writers and reader") {
    SurvivalCurve c;
    c.times = {0, 1.5};
    c.hits = {10, 3};
    c.replicas = 20;
    c.p_hat = {0.5, 0.15};
    c.ci_lo = {0.3, 0.05};
    c.ci_hi = {0.7, 0.36};
    std::stringstream ss;
    write_survival_csv(ss, c);
    CHECK(ss.str().rfind("t,p_hat,ci_lo,ci_hi,n_replicas\n", 0) == 0);
    const auto tab = read_csv(ss);
    CHECK(tab.header == std::vector<std::string>{"t", "p_hat", "ci_lo", "ci_hi", "n_replicas"});
    REQUIRE(tab.rows.size() == 2);
    CHECK(tab.rows[1] == std::vector<double>{1.5, 0.15, 0.05, 0.36, 20});

    TailTable t;
    t.ell = {0, 1};
    t.count = {5, 2};
    t.censored = {0, 1};
    t.samples = 10;
    t.p_hat = {0.5, 0.2};
    t.ci_lo = {0.2, 0.05};
    t.ci_hi = {0.8, 0.5};
    std::stringstream ts;
    write_tail_csv(ts, t);
    CHECK(read_csv(ts).header == std::vector<std::string>{"ell", "count", "censored_count", "p_hat", "ci_lo", "ci_hi"});

    const PassageField f{Box::cube(2, 2), {1, 2, 3, 4}};
    std::stringstream ps;
    write_passage_csv(ps, f);
    const auto pt = read_csv(ps);
    REQUIRE(pt.rows.size() == 4);
    CHECK(pt.rows[2] == std::vector<double>{2, 1, 3});
}

TEST_CASE("violation reports are empty arrays on a pass") {
    GrandCouplingReport r{{}, 0, {}, 0, UpdateRule{{-1, 0}}, RationalDirection{1, 0}};
    const auto j = violations_to_json(r);
    CHECK(j.is_array());
    CHECK(j.empty());
    r.violations.push_back({1.5, {1, 2}, "inclusion", 3});
    r.violation_count = 1;
    const auto k = violations_to_json(r);
    REQUIRE(k.size() == 1);
    CHECK(k[0].dump().find("inclusion") != std::string::npos);
}
