#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include <nlohmann/json.hpp>

#include "kcmlab/cluster.hpp"
#include "kcmlab/rng.hpp"

using namespace kcm;

namespace {

bool near(const LatticeVec& x, const std::set<LatticeVec>& z) {
    std::int64_t diam2 = 0, best = -1;
    for (const auto& a : z)
        for (const auto& b : z) diam2 = std::max(diam2, dist2(a, b));
    for (const auto& a : z) {
        const auto d = dist2(x, a);
        if (best < 0 || d < best) best = d;
    }
    const double r = 3.0 * (1.0 + std::sqrt(static_cast<double>(diam2)));
    return std::sqrt(static_cast<double>(best)) <= r + 1e-9;
}

struct OracleStep {
    std::size_t i;
    std::set<std::size_t> removed, members;
};

/// The extraction iteration read literally: i_t is the first uncovered path
/// index, J_t the members whose Z meets Z_{p_{i_t}}, I_t = {i_t} u (I_{t-1} \ J_t).
std::vector<OracleStep> oracle_iteration(const std::vector<LatticeVec>& path, const std::vector<DecoratedSet>& sets) {
    std::vector<std::set<LatticeVec>> z;
    for (const auto& s : sets) z.emplace_back(s.z.begin(), s.z.end());
    auto covered = [&](const std::set<std::size_t>& members, std::size_t j) {
        for (auto a : members)
            if (near(path[j], z[a])) return true;
        return false;
    };
    std::vector<OracleStep> steps{{0, {}, {0}}};
    for (;;) {
        const auto& cur = steps.back().members;
        std::size_t i = path.size();
        for (std::size_t j = 0; j < path.size(); ++j)
            if (!covered(cur, j)) {
                i = j;
                break;
            }
        if (i == path.size()) break;
        OracleStep s{i, {}, {i}};
        for (auto a : cur) {
            bool meet = false;
            for (const auto& p : z[a]) meet = meet || z[i].count(p);
            if (meet) s.removed.insert(a);
            else s.members.insert(a);
        }
        steps.push_back(s);
        REQUIRE(steps.size() <= path.size() + 1);
    }
    return steps;
}

void check_against_oracle(const std::vector<LatticeVec>& path, const std::vector<DecoratedSet>& sets, double k) {
    const auto ex = extract_chain(path, sets, k);
    const auto oracle = oracle_iteration(path, sets);
    REQUIRE(ex.steps.size() == oracle.size());
    for (std::size_t t = 0; t < oracle.size(); ++t) {
        if (t > 0) CHECK(ex.steps[t].i == oracle[t].i);
        CHECK(std::set<std::size_t>(ex.steps[t].j_removed.begin(), ex.steps[t].j_removed.end()) == oracle[t].removed);
        CHECK(std::set<std::size_t>(ex.steps[t].members.begin(), ex.steps[t].members.end()) == oracle[t].members);
    }
    CHECK(ex.claims.all());
    const double n = std::sqrt(static_cast<double>(dist2(path.front(), path.back())));
    CHECK(verify_chain(ex.chain, path.front(), n, k));
}

PointSet closure_oracle(const PointSet& cloud, const LatticeVec& seed, std::int64_t k2) {
    std::set<LatticeVec> comp{seed};
    for (bool grew = true; grew;) {
        grew = false;
        for (const auto& p : cloud) {
            if (comp.count(p)) continue;
            for (const auto& c : comp)
                if (dist2(p, c) <= k2) {
                    comp.insert(p);
                    grew = true;
                    break;
                }
        }
    }
    return PointSet(comp.begin(), comp.end());
}

}  // namespace

TEST_CASE("k_component examples") {
    const PointSet iso = make_point_set({{0, 0}, {5, 5}, {9, 0}});
    CHECK(k_component(iso, {5, 5}, 2) == PointSet{{5, 5}});
    std::vector<LatticeVec> line;
    for (int i = 0; i <= 12; ++i) line.push_back(LatticeVec{i});
    const auto l = make_point_set(line);
    CHECK(k_component(l, {4}, 1) == l);
    CHECK_THROWS_AS(k_component(l, {40}, 1), std::invalid_argument);
}

TEST_CASE("k_component equals the brute-force closure on random clouds") {
    for (std::uint64_t s = 0; s < 30; ++s) {
        KeyedRng rng(fold(s, 50));
        std::vector<LatticeVec> pts;
        for (int i = 0; i < 50; ++i)
            pts.push_back({static_cast<int>(rng.integer(0, 12)), static_cast<int>(rng.integer(0, 12))});
        const auto cloud = make_point_set(pts);
        for (std::size_t a = 0; a < cloud.size(); a += 7) CHECK(k_component(cloud, cloud[a], 2) == closure_oracle(cloud, cloud[a], 4));
        std::size_t total = 0;
        for (const auto& c : k_components(cloud, 2)) {
            CHECK(is_k_connected(c, 2));
            total += c.size();
        }
        CHECK(total == cloud.size());
    }
    CHECK(k_squared(std::sqrt(3.0)) == 3);
}

TEST_CASE("regularize examples") {
    const auto r0 = regularize(PointSet{{0, 0}});
    std::size_t expect = 0;
    for (int x = -3; x <= 3; ++x)
        for (int y = -3; y <= 3; ++y)
            if (x * x + y * y <= 9) {
                ++expect;
                CHECK(std::binary_search(r0.begin(), r0.end(), LatticeVec{x, y}));
            }
    CHECK(r0.size() == expect);

    const PointSet two{{0, 0}, {5, 0}};
    const auto r2 = regularize(two);
    std::size_t cnt = 0;
    for (int x = -20; x <= 25; ++x)
        for (int y = -20; y <= 20; ++y)
            if (std::min(x * x + y * y, (x - 5) * (x - 5) + y * y) <= 18 * 18) {
                ++cnt;
                CHECK(std::binary_search(r2.begin(), r2.end(), LatticeVec{x, y}));
            }
    CHECK(r2.size() == cnt);
    for (const auto& z : two) CHECK(std::binary_search(r2.begin(), r2.end(), z));
    CHECK_THROWS_AS(regularize(PointSet{}), std::invalid_argument);
}

TEST_CASE("extract_chain on a singleton path") {
    const std::vector<LatticeVec> path{{2, 3}};
    const std::vector<DecoratedSet> sets{{PointSet{{2, 3}, {2, 4}}, "g"}};
    const auto ex = extract_chain(path, sets, 1);
    REQUIRE(ex.chain.sets.size() == 1);
    CHECK(ex.chain.sets[0] == sets[0]);
    CHECK(ex.steps.size() == 1);
    CHECK(verify_chain(ex.chain, {2, 3}, 0, 1));
}

TEST_CASE("extract_chain on the straight path 4j with k=4") {
    std::vector<LatticeVec> path;
    std::vector<DecoratedSet> sets;
    for (int j = 0; j <= 10; ++j) {
        path.push_back(LatticeVec{4 * j});
        sets.push_back({PointSet{LatticeVec{4 * j}}, std::to_string(j)});
    }
    const auto r = regularize(sets[0].z);
    CHECK(r.front() == LatticeVec{-3});
    CHECK(r.back() == LatticeVec{3});
    check_against_oracle(path, sets, 4);
}

TEST_CASE("extract_chain matches the literal iteration on random instances") {
    for (std::uint64_t s = 0; s < 1000; ++s) {
        const double k = (s % 3 == 0) ? 1.0 : (s % 3 == 1 ? std::sqrt(2.0) : 2.0);
        const auto inst = random_chain_instance(s, 2, k);
        CAPTURE(s);
        check_against_oracle(inst.path, inst.sets, inst.k);
    }
}

TEST_CASE("verify_chain examples") {
    Chain single{{{PointSet{{0, 0}}, ""}}, {0, 0}, {0, 0}};
    CHECK(verify_chain(single, {0, 0}, 0, 1));
    CHECK_FALSE(verify_chain(single, {0, 0}, 100, 1));
    Chain overlap{{{PointSet{{0, 0}, {1, 0}}, "a"}, {PointSet{{1, 0}, {2, 0}}, "b"}}, {0, 0}, {2, 0}};
    CHECK_FALSE(verify_chain(overlap, {0, 0}, 1, 1));
    Chain far{{{PointSet{{0, 0}}, "a"}, {PointSet{{50, 0}}, "b"}}, {0, 0}, {50, 0}};
    CHECK_FALSE(verify_chain(far, {0, 0}, 1, 1));
}

TEST_CASE("chain JSON round-trip") {
    const auto inst = random_chain_instance(7, 2, 2.0);
    const auto ex = extract_chain(inst.path, inst.sets, inst.k);
    const auto back = chain_from_json(chain_to_json(ex.chain));
    CHECK(back.sets == ex.chain.sets);
    CHECK(back.anchor == ex.chain.anchor);
    CHECK(back.target == ex.chain.target);
}

TEST_CASE("path system counts") {
    const BernoulliPathSystem sys(2, 0.5);
    const auto c = count_by_size(sys, {0, 0}, 3);
    CHECK(c[1] == 1);
    CHECK(c[2] == 4);
    CHECK(c[3] == 18);
    for (const auto& s : sys.enumerate({0, 0}, 4)) CHECK(satisfies_diameter_condition(sys, s));
}

TEST_CASE("CA tails: delta=1 saturates and is censored") {
    const auto map = LocalMap::from_bp(u0_family(2));
    const auto traj = run_ca_death(map, 1.0, Configuration::ones(Box::cube(16, 2)), 40, 3);
    CaTailOptions opt;
    opt.ells = integer_grid(8);
    opt.burn_in = 1;
    const auto t = cluster_tail(traj, opt);
    CHECK(t.components == 1);
    CHECK(t.censored_components == 1);
    for (auto c : t.count) CHECK(c == t.samples);
}

TEST_CASE("CA tails: delta=0 from all-ones has no zeros") {
    const auto map = LocalMap::from_bp(u0_family(2));
    const auto traj = run_ca_death(map, 0.0, Configuration::ones(Box::cube(16, 2)), 30, 3);
    CaTailOptions opt;
    opt.ells = integer_grid(5);
    const auto t = cluster_tail(traj, opt);
    CHECK(t.components == 0);
    for (std::size_t i = 0; i < t.ell.size(); ++i) {
        CHECK(t.count[i] == 0);
        CHECK(t.p_hat[i] == 0.0);
    }
}

TEST_CASE("CA tails are monotone in ell and in delta") {
    const auto map = LocalMap::from_bp(u0_family(2));
    const auto init = Configuration::ones(Box::cube(48, 2));
    CaTailOptions opt;
    opt.ells = integer_grid(6);
    opt.burn_in = 10;
    std::vector<std::size_t> prev;
    for (double delta : {0.02, 0.05, 0.1}) {
        const auto t = cluster_tail(run_ca_death(map, delta, init, 60, 11), opt);
        for (std::size_t i = 1; i < t.count.size(); ++i) CHECK(t.count[i] <= t.count[i - 1]);
        if (!prev.empty())
            for (std::size_t i = 0; i < t.count.size(); ++i) CHECK(t.count[i] >= prev[i]);
        prev = t.count;
        CHECK(t.count.front() > 0);
    }
}

TEST_CASE("BP tails") {
    BpTailOptions opt;
    opt.size = 64;
    opt.ells = integer_grid(5);
    opt.replicas = 2;
    const auto t = cluster_tail_bp(u0_family(2), opt);
    CHECK(t.samples == 2 * 54 * 54);
    for (std::size_t i = 1; i < t.count.size(); ++i) CHECK(t.count[i] <= t.count[i - 1]);
    for (auto c : t.censored) CHECK(c == 0);
    CHECK(tail_series(t).x.size() == t.ell.size());
    CHECK_THROWS_AS(cluster_tail_bp(fa_family(2, 2), opt), std::invalid_argument);
}
