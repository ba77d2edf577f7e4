#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "kcmlab/coupling.hpp"
#include "kcmlab/errors.hpp"
#include "kcmlab/rng.hpp"
#include "kcmlab/stats.hpp"

using namespace kcm;

namespace {

std::vector<LatticeVec> sites_of(const Box& b) {
    std::vector<LatticeVec> s;
    for (std::size_t i = 0; i < b.size(); ++i) s.push_back(b.site_at(i));
    return s;
}

Trajectory u0_cp(const Domain& dom, const Configuration& init, double q0, double horizon, std::uint64_t seed) {
    return run_cp(u0_family(2), dom, init, q0, horizon, ClockField(seed, 2));
}

}  // namespace

TEST_CASE("orange set replays the definition event by event") {
    const Domain dom{Box::cube(7, 2), AllOnes{}};
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        const auto init = Configuration::bernoulli(dom.box, 0.7, seed);
        const auto cp = u0_cp(dom, init, 0.8, 8, seed);
        const auto orange = track_orange(cp, std::sqrt(2.0));

        std::vector<std::uint8_t> o(dom.box.size());
        for (std::size_t i = 0; i < o.size(); ++i) o[i] = init[i] ? 0 : 1;
        CHECK(orange.initial == o);
        CHECK(orange.members_at(0) == o);
        for (const auto& e : merged_event_stream(cp.clocks, sites_of(dom.box), 0, cp.horizon)) {
            const auto i = dom.box.index_of(e.site);
            const auto state = cp.state_at(e.time);
            if (state[i]) {
                o[i] = 0;
            } else if (!o[i]) {
                for (std::size_t j = 0; j < o.size(); ++j)
                    if (o[j] && dist2(dom.box.site_at(j), e.site) <= 2) {
                        o[i] = 1;
                        break;
                    }
            }
            const auto got = orange.members_at(e.time);
            CHECK(got == o);
            for (std::size_t j = 0; j < o.size(); ++j)
                if (got[j]) CHECK(state[j] == 0);
        }
    }
}

TEST_CASE("orange set: infection removes the site") {
    const Domain dom{Box::cube(6, 2), AllOnes{}};
    const auto cp = u0_cp(dom, Configuration::bernoulli(dom.box, 0.5, 2), 0.9, 10, 2);
    const auto orange = track_orange(cp, std::sqrt(2.0));
    for (const auto& e : cp.events)
        if (e.value == 1) CHECK(orange.members_at(e.time)[e.site] == 0);
}

TEST_CASE("orange set stays empty from a fully infected start") {
    const Domain dom{Box::cube(6, 2), AllOnes{}};
    const auto cp = u0_cp(dom, Configuration::ones(dom.box), 0.8, 20, 5);
    const auto orange = track_orange(cp, std::sqrt(2.0));
    CHECK(orange.changes.empty());
    REQUIRE(orange.empty_time);
    CHECK(*orange.empty_time == 0.0);
}

TEST_CASE("orange tracking rejects KCM trajectories") {
    const Domain dom{Box::cube(4, 2), AllOnes{}};
    const auto kcm = run_kcm(u0_family(2), dom, Configuration::zeros(dom.box), 0.9, 5, ClockField(1, 2));
    CHECK_THROWS_AS(track_orange(kcm, 1.0), ContractError);
}

TEST_CASE("grand coupling: all-ones at q=q0=1 has no discrepancies") {
    const Domain dom{Box::cube(8, 2), AllOnes{}};
    const auto ones = Configuration::ones(dom.box);
    const auto rep = grand_coupling_check(fa_family(2, 2), dom, 1, 1, 20, ClockField(1, 2), ones, {ones});
    CHECK(rep.passed());
    CHECK(rep.violations.empty());
    CHECK(rep.events_checked > 0);
}

TEST_CASE("grand coupling: FA-2f with dominating initial conditions") {
    const Domain dom{Box::cube(16, 2), AllOnes{}};
    const auto fam = fa_family(2, 2);
    const std::uint64_t seed = 3;
    const ClockField clocks(seed, 2);
    const auto xi = Configuration::bernoulli(dom.box, 0.8, seed);
    std::vector<Configuration> inits;
    for (std::uint64_t k = 0; k < 10; ++k) {
        auto c = Configuration::bernoulli(dom.box, 0.5, seed, 100 + k);
        for (std::size_t i = 0; i < c.size(); ++i) c[i] = c[i] | xi[i];
        inits.push_back(c);
    }
    const double horizon = 60;
    const auto rep = grand_coupling_check(fam, dom, 0.95, 0.9, horizon, clocks, xi, inits);
    CHECK(rep.violation_count == 0);

    if (rep.certificate.empty_time) {
        const double te = *rep.certificate.empty_time;
        const auto eta1 = run_kcm(fam, dom, Configuration::ones(dom.box), 0.95, horizon, clocks);
        for (std::size_t k = 0; k < 2; ++k) {
            const auto eta = run_kcm(fam, dom, inits[k], 0.95, horizon, clocks);
            std::vector<double> ts{te, horizon};
            for (const auto& e : eta1.events)
                if (e.time >= te) ts.push_back(e.time);
            for (const auto& e : eta.events)
                if (e.time >= te) ts.push_back(e.time);
            for (double t : ts) CHECK(eta1.state_at(t) == eta.state_at(t));
        }
    }

    auto bad = inits;
    bad[0] = Configuration::zeros(dom.box);
    CHECK_THROWS_AS(grand_coupling_check(fam, dom, 0.95, 0.9, horizon, clocks, xi, bad), std::invalid_argument);
}

TEST_CASE("grand coupling: the corrupted tracker is detected") {
    const Domain dom{Box::cube(12, 2), AllOnes{}};
    const auto xi = Configuration::bernoulli(dom.box, 0.8, 1);
    GrandCouplingOptions opt;
    opt.corrupt_tracker = true;
    auto other = Configuration::bernoulli(dom.box, 0.5, 1, 7);
    for (std::size_t i = 0; i < other.size(); ++i) other[i] = other[i] | xi[i];
    const auto rep = grand_coupling_check(fa_family(2, 2), dom, 0.95, 0.9, 40, ClockField(1, 2), xi,
                                          {other, xi}, opt);
    CHECK_FALSE(rep.passed());
    CHECK(rep.violation_count > 0);
    CHECK_FALSE(rep.violations.empty());
}

TEST_CASE("mixing: a single FA-1f site couples at its first ring") {
    MixingOptions opt;
    opt.replicas = 4000;
    opt.bootstrap = 200;
    opt.ell = 0;
    const auto est = estimate_mixing_time(fa_family(1, 2), 1, 1.0, opt);
    double mean = 0;
    for (std::size_t r = 0; r < est.replicas.size(); ++r) {
        const auto& rep = est.replicas[r];
        CHECK(rep.certificate_time == ClockField(opt.seed, 2, r).first_event_after({1, 1}, 0).time);
        CHECK(rep.kcm_agree);
        mean += rep.certificate_time;
    }
    mean /= static_cast<double>(est.replicas.size());
    CHECK(std::abs(mean - 1.0) < 3.0 / std::sqrt(4000.0));
    CHECK(est.ci_lo <= std::log(4.0));
    CHECK(est.ci_hi >= std::log(4.0));
    CHECK(est.censored == 0);
}

TEST_CASE("mixing: at q=1 the oriented family couples at the LPP maximum") {
    MixingOptions opt;
    opt.replicas = 20;
    opt.bootstrap = 50;
    const int n = 10;
    const auto est = estimate_mixing_time(u0_family(2), n, 1.0, opt);
    for (std::size_t r = 0; r < est.replicas.size(); ++r) {
        const auto s = lpp_times(u0_family(2).rules()[0], Box::cube(n, 2), ClockWeights{ClockField(opt.seed, 2, r)});
        CHECK(est.replicas[r].certificate_time == s.max());
    }
}

TEST_CASE("mixing refuses trivial subcritical families") {
    CHECK_THROWS_AS(estimate_mixing_time(fa_family(3, 2), 4, 0.9, MixingOptions{}), std::invalid_argument);
}

TEST_CASE("survival: q0=1 from all-ones is identically zero") {
    SurvivalOptions opt;
    opt.q = opt.q0 = 1;
    opt.p_init = 1;
    opt.buffer = 4;
    opt.horizon = 5;
    opt.replicas = 200;
    opt.validate_buffer = false;
    const auto c = survival_curve(fa_family(2, 2), opt);
    for (auto h : c.hits) CHECK(h == 0);
}

TEST_CASE("survival at t=0 equals the healthy probability") {
    SurvivalOptions opt;
    opt.p_init = 0.9;
    opt.buffer = 3;
    opt.horizon = 2;
    opt.replicas = 4000;
    opt.validate_buffer = false;
    const auto c = survival_curve(fa_family(2, 2), opt);
    REQUIRE(c.times.front() == 0.0);
    CHECK(c.ci_lo[0] <= 0.1);
    CHECK(c.ci_hi[0] >= 0.1);
    CHECK(std::abs(c.p_hat[0] - 0.1) < 3 * std::sqrt(0.09 / 4000));
}

TEST_CASE("fit of an exact exponential") {
    DecaySeries s;
    for (int i = 0; i <= 20; ++i) {
        s.x.push_back(i);
        s.trials.push_back(1e9);
        s.successes.push_back(1e9 * std::exp(-0.3 * i));
    }
    const auto f = fit_exponential(s);
    CHECK_FALSE(f.underpowered);
    CHECK(f.rate == doctest::Approx(0.3).epsilon(1e-6));
    CHECK(std::abs(f.rate - 0.3) < 1e-6);
    CHECK(f.r_squared == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(f.decaying);
}

TEST_CASE("fit of a constant curve is non-decaying") {
    DecaySeries s;
    for (int i = 0; i < 10; ++i) {
        s.x.push_back(i);
        s.trials.push_back(1000);
        s.successes.push_back(500);
    }
    const auto f = fit_exponential(s);
    CHECK(std::abs(f.rate) < 1e-9);
    CHECK_FALSE(f.decaying);
}

TEST_CASE("fit of too few points is underpowered") {
    DecaySeries s{{0, 1, 2}, {100, 50, 25}, {100, 100, 100}, {}};
    const auto f = fit_exponential(s);
    CHECK(f.underpowered);
    CHECK(f.note.find("underpowered") != std::string::npos);
}

TEST_CASE("fit recovers a geometric(0.2) tail within the bootstrap interval") {
    const std::size_t m = 20000, L = 15;
    KeyedRng rng(fold(2024, 5));
    DecaySeries s;
    std::vector<double> counts(L + 1, 0);
    for (std::size_t r = 0; r < m; ++r) {
        std::size_t g = 0;
        while (rng.uniform() > 0.2) ++g;
        std::vector<std::uint8_t> h(L + 1, 0);
        for (std::size_t l = 0; l <= L; ++l)
            if (g >= l) {
                h[l] = 1;
                counts[l] += 1;
            }
        s.replica_hits.push_back(std::move(h));
    }
    for (std::size_t l = 0; l <= L; ++l) {
        s.x.push_back(static_cast<double>(l));
        s.successes.push_back(counts[l]);
        s.trials.push_back(static_cast<double>(m));
    }
    FitOptions fo;
    fo.bootstrap = 400;
    const auto f = fit_exponential(s, fo);
    const double truth = -std::log(0.8);
    CHECK(f.rate_ci_lo <= truth);
    CHECK(f.rate_ci_hi >= truth);
    CHECK(f.r_squared > 0.99);
}

TEST_CASE("Wilson interval") {
    const auto [lo, hi] = wilson_interval(5, 10);
    CHECK(lo == doctest::Approx(0.2366).epsilon(1e-3));
    CHECK(hi == doctest::Approx(0.7634).epsilon(1e-3));
    const auto z = wilson_interval(0, 10);
    CHECK(z.first == 0.0);
    CHECK(z.second == doctest::Approx(0.2775).epsilon(1e-3));
}

TEST_CASE("quantile order statistic") {
    CHECK(quantile_order_stat({3, 1, 2, 4}, 0.75) == 3);
    CHECK(quantile_order_stat({3, 1, 2, 4}, 1.0) == 4);
    CHECK(quantile_order_stat({5}, 0.0) == 5);
}
