#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>

#include <nlohmann/json.hpp>

#include "kcmlab/errors.hpp"
#include "kcmlab/renorm.hpp"

using namespace kcm;

namespace {

const UpdateRule kU0{{-1, 0}, {0, -1}, {-1, -1}};

Rational rdot(const std::vector<Rational>& a, const LatticeVec& b) {
    Rational s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

Trajectory u0_cp(const BoxGeometry& g, const Box& box, const Configuration& init, double q0, double horizon,
                 const ClockField& clocks) {
    return run_cp(single_rule_family(g.u0), Domain{box, AllOnes{}}, init, q0, horizon, clocks);
}

}  // namespace

TEST_CASE("geometry for the oriented rule along (1,1)") {
    const auto g = build_geometry(kU0, RationalDirection{1, 1}, 6, 2.0);
    REQUIRE(g.u_dirs.size() == 2);
    CHECK(g.u_dirs[0] == LatticeVec{2, 1});
    CHECK(g.u_dirs[1] == LatticeVec{1, 2});
    for (const auto& ui : g.u_dirs) CHECK(rule_in_halfspace(kU0, RationalDirection(ui)));
    CHECK(g.check_invariants().empty());
    for (std::size_t i = 0; i < 2; ++i) {
        for (std::size_t j = 0; j < 2; ++j)
            if (i != j) CHECK(rdot(g.v[i], g.u_dirs[j]) == 0);
        CHECK(rdot(g.v[i], g.u_dirs[i]) > 0);
        Rational vv = 0;
        for (const auto& c : g.v[i]) vv += c * c;
        CHECK(g.lambda[i] * vv * g.R == Rational(g.width[i]));
        CHECK(g.width[i] * g.width[i] > g.norm2);
        for (std::size_t k = 0; k < 2; ++k) CHECK(Rational(g.w[i][k]) == g.lambda[i] * g.v[i][k]);
    }
    const auto base = g.base_sites({0, 0});
    CHECK(static_cast<std::int64_t>(base.size()) == g.base_volume());
    for (const auto& z : base) CHECK(g.renormalised(z) == LatticeVec{0, 0});
    const LatticeVec x{3, -2};
    for (const auto& z : g.base_sites(x)) {
        CHECK(g.in_base(z, x));
        for (std::size_t i = 0; i < 2; ++i) {
            CHECK(x[i] * g.width[i] <= dot(z, g.u_dirs[i]));
            CHECK(dot(z, g.u_dirs[i]) < (x[i] + 1) * g.width[i]);
        }
    }
}

TEST_CASE("undersized R fails loudly") {
    const UpdateRule wide{{-3, 0}, {0, -3}};
    CHECK_THROWS_AS(build_geometry(wide, RationalDirection{1, 1}, 1, 1.0), GeometryError);
    CHECK_THROWS_AS(build_geometry(wide, RationalDirection{1, 1}, 2, 1.0), GeometryError);
    CHECK_NOTHROW(build_geometry(wide, RationalDirection{1, 1}, 3, 1.0));
    try {
        build_geometry(wide, RationalDirection{1, 1}, 1, 1.0);
    } catch (const GeometryError& e) {
        CHECK(std::string(e.what()).find("build_geometry") != std::string::npos);
    }
    CHECK_THROWS_AS(build_geometry(kU0, RationalDirection{1, 0}, 4, 1.0), std::invalid_argument);
}

TEST_CASE("orthogonal directions are their own Gram-Schmidt basis") {
    const auto g = build_geometry_from_directions(UpdateRule{LatticeVec{-1, 0}}, RationalDirection{1, 0},
                                                  {{1, 1}, {1, -1}}, 2, 1.0);
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(g.lambda[i] == 1);
        CHECK(g.w[i] == g.u_dirs[i]);
        for (std::size_t k = 0; k < 2; ++k) CHECK(g.v[i][k] == Rational(g.u_dirs[i][k]));
    }
}

TEST_CASE("geometry JSON round-trip and tamper detection") {
    const auto g = build_geometry(kU0, RationalDirection{1, 1}, 4, 3.0);
    const auto j = geometry_to_json(g);
    CHECK(geometry_to_json(geometry_from_json(j)) == j);
    CHECK(j["v"][0][0]["den"] == "5");
    CHECK(j["v"][0][0]["num"] == "6");
    auto bad = j;
    bad["width"][0] = bad["width"][0].get<std::int64_t>() + 1;
    CHECK_THROWS_AS(geometry_from_json(bad), GeometryError);
}

TEST_CASE("good boxes: q0=1 always passes the mark condition, tiny T never has a chain") {
    const auto g = build_geometry(kU0, RationalDirection{1, 1}, 2, 1.0);
    const auto tiny = build_geometry(kU0, RationalDirection{1, 1}, 2, 1e-6);
    for (std::uint64_t s = 0; s < 20; ++s) {
        const ClockField clocks(s, 2);
        const auto src = clock_source(clocks);
        for (int a = -2; a <= 2; ++a) {
            CHECK(good_box_detail(g, src, {a, 0}, 1, 1.0).marks_ok);
            CHECK_FALSE(good_box_detail(tiny, src, {a, 0}, 1, 0.5).chain_ok);
        }
    }
}

TEST_CASE("good boxes are pathwise monotone in q0") {
    const auto g = build_geometry(kU0, RationalDirection{1, 1}, 2, 2.0);
    const std::vector<double> qs{0.5, 0.8, 0.9, 0.97, 1.0};
    std::vector<int> count(qs.size(), 0);
    for (std::uint64_t s = 0; s < 100; ++s) {
        const ClockField clocks(s, 2);
        for (int a = 0; a < 10; ++a) {
            bool prev = false;
            for (std::size_t k = 0; k < qs.size(); ++k) {
                const bool b = good_box(g, clocks, {a, -a}, 2, qs[k]);
                CHECK((!prev || b));
                prev = b;
                count[k] += b;
            }
        }
    }
    CHECK(std::is_sorted(count.begin(), count.end()));
    CHECK(count.back() > count.front());
}

TEST_CASE("P(good) is non-decreasing in T") {
    const std::vector<double> ts{0.25, 0.5, 1.0, 2.0, 4.0};
    std::vector<double> p;
    const int m = 1000;
    for (double T : ts) {
        const auto g = build_geometry(kU0, RationalDirection{1, 1}, 2, T);
        int k = 0;
        for (int s = 0; s < m; ++s) k += good_box(g, ClockField(static_cast<std::uint64_t>(s), 2), {s % 7, -(s % 5)}, 1, 1.0);
        p.push_back(static_cast<double>(k) / m);
    }
    for (std::size_t i = 1; i < p.size(); ++i) {
        const double se = std::sqrt((p[i] * (1 - p[i]) + p[i - 1] * (1 - p[i - 1])) / m);
        CHECK(p[i] + 3 * se >= p[i - 1]);
    }
    CHECK(p.back() > p.front());
}

TEST_CASE("renormalised BP check: almost all boxes bad") {
    const auto g = build_geometry(kU0, RationalDirection{1, 1}, 2, 0.01);
    const Box box = Box::cube(10, 2);
    const ClockField clocks(3, 2);
    const auto cp = u0_cp(g, box, Configuration::bernoulli(box, 0.5, 3), 0.01, 1.0, clocks);
    const auto rep = renormalised_bp_check(g, clocks, cp, 0.01);
    CHECK(rep.passed());
    CHECK(rep.good_fraction < 0.01);
    CHECK(rep.boxes_checked > 0);
}

TEST_CASE("renormalised BP check: q0=1 and fully infected start") {
    const auto g = build_geometry(kU0, RationalDirection{1, 1}, 2, 5.0);
    const Box box = Box::cube(10, 2);
    const ClockField clocks(4, 2);
    const auto cp = u0_cp(g, box, Configuration::ones(box), 1.0, 30.0, clocks);
    CHECK(cp.events.empty());
    const auto rep = renormalised_bp_check(g, clocks, cp, 1.0);
    CHECK(rep.passed());
    CHECK(rep.omega_ones > 0);
}

TEST_CASE("renormalised BP check at q0=0.97") {
    const auto g = build_geometry(kU0, RationalDirection{1, 1}, 2, 2.0);
    const Box box = Box::cube(14, 2);
    for (std::uint64_t s = 1; s <= 3; ++s) {
        const ClockField clocks(s, 2);
        const auto cp = u0_cp(g, box, block_bernoulli(g, box, 0.9, s), 0.97, 20.0, clocks);
        const auto rep = renormalised_bp_check(g, clocks, cp, 0.97);
        CHECK(rep.passed());
        CHECK(rep.omega_ones > 0);
    }
    const ClockField clocks(1, 2);
    const auto cp = u0_cp(g, box, Configuration::ones(box), 0.97, 10.0, clocks);
    CHECK_THROWS_AS(renormalised_bp_check(g, ClockField(2, 2), cp, 0.97), ContractError);
    CHECK_THROWS_AS(renormalised_bp_check(g, clocks, cp, 0.9), ContractError);
}

TEST_CASE("block Bernoulli is constant on bases") {
    const auto g = build_geometry(kU0, RationalDirection{1, 1}, 2, 1.0);
    const Box box = Box::cube(12, 2);
    const auto c = block_bernoulli(g, box, 0.5, 7);
    std::map<LatticeVec, int> seen;
    for (std::size_t i = 0; i < box.size(); ++i) {
        const auto x = g.renormalised(box.site_at(i));
        auto [it, fresh] = seen.emplace(x, c[i]);
        CHECK(it->second == c[i]);
    }
}

TEST_CASE("renormalised passage times") {
    const auto g = build_geometry(kU0, RationalDirection{1, 1}, 2, 1.0);
    const Box lambda = Box::cube(12, 2);
    const ClockField clocks(5, 2);
    const auto f = renorm_passage_times(g, lambda, 0.0, clocks);
    CHECK(f.at({1000, 1000}) == 0.0);
    CHECK(f.max() > 0);
    for (std::size_t i = 0; i < f.xi.size(); ++i) {
        std::vector<LatticeVec> sites;
        for (const auto& z : g.base_sites(f.xi[i]))
            if (lambda.contains(z)) sites.push_back(z);
        CHECK(sites.size() == f.base_count[i]);
        std::stable_sort(sites.begin(), sites.end(), [&](const LatticeVec& a, const LatticeVec& b) {
            return dot(a, g.u.numerators()) < dot(b, g.u.numerators());
        });
        double prev = f.t_tilde[i];
        for (std::size_t a = 0; a < sites.size();) {
            std::size_t b = a;
            double gmax = prev;
            while (b < sites.size() && dot(sites[b], g.u.numerators()) == dot(sites[a], g.u.numerators())) {
                gmax = std::max(gmax, clocks.first_event_after(sites[b], prev).time);
                ++b;
            }
            prev = gmax;
            a = b;
        }
        CHECK(f.t[i] == prev);
        CHECK(f.t[i] >= f.t_tilde[i]);
    }
}

TEST_CASE("passage-time coupling holds at q0=0.9") {
    const auto g = build_geometry(kU0, RationalDirection{1, 1}, 2, 1.0);
    const Box lambda = Box::cube(12, 2);
    for (std::uint64_t s = 1; s <= 3; ++s) {
        const ClockField clocks(s, 2);
        const auto f = renorm_passage_times(g, lambda, 0.9, clocks);
        const auto rep = passage_coupling_check(g, lambda, 0.9, clocks, f);
        CHECK(rep.passed());
        CHECK(rep.sites_checked == lambda.size());
    }
}

TEST_CASE("warm-up densities") {
    WarmupOptions opt;
    opt.base_vectors = {{1, 0}, {0, 1}};
    opt.R = 2;
    opt.window = 12;
    opt.buffer = 4;
    opt.p = opt.q = 1;
    opt.T = 3;
    const auto full = measure_warmup(fa_family(2, 2), opt);
    CHECK(full.base_size == 4);
    CHECK(full.density == 1.0);

    opt.p = 0.9;
    opt.q = 0.5;
    opt.T = 0;
    opt.replicas = 40;
    const auto zero = measure_warmup(fa_family(2, 2), opt);
    const double expect = std::pow(0.9, 4);
    CHECK(zero.ci_lo <= expect);
    CHECK(zero.ci_hi >= expect);
    CHECK(zero.boxes > 1000);
}
