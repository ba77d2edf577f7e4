#include <doctest.h>

#include <cmath>
#include <set>

#include <nlohmann/json.hpp>

#include "kcmlab/lattice.hpp"
#include "kcmlab/rng.hpp"

using namespace kcm;

namespace {

Domain zeros_domain(int n, std::size_t d) { return {Box::cube(n, d), AllZeros{}}; }

bool unstable_at(const UpdateFamily& f, double ux, double uy) {
    for (const auto& r : f.rules()) {
        bool all = true;
        for (const auto& y : r.offsets()) all = all && (y[0] * ux + y[1] * uy) < -1e-12;
        if (all) return true;
    }
    return false;
}

/// Classification from the definitions on a fine angular sample plus the
/// exact critical directions (perpendiculars of all offsets). Hemisphere
/// centres also include the offsets themselves, whose hemispheres end exactly
/// at critical directions.
FamilyClass oracle_classify(const UpdateFamily& f) {
    struct Dir {
        double x, y;
        bool unstable;
        bool exact;
    };
    std::vector<Dir> pts;
    const int m = 14400;
    const double pi = std::acos(-1.0);
    for (int i = 0; i < m; ++i) {
        const double a = 2 * pi * (i + 0.5) / m;
        pts.push_back({std::cos(a), std::sin(a), unstable_at(f, std::cos(a), std::sin(a)), false});
    }
    for (const auto& r : f.rules())
        for (const auto& y : r.offsets())
            for (int s : {1, -1}) {
                const LatticeVec u{-y[1] * s, y[0] * s};
                bool un = is_unstable(f, u);
                const double n = std::sqrt(static_cast<double>(u.norm2()));
                pts.push_back({u[0] / n, u[1] / n, un, true});
            }
    std::vector<Dir> centres = pts;
    for (const auto& r : f.rules())
        for (const auto& y : r.offsets())
            for (int s : {1, -1}) {
                const double n = std::sqrt(static_cast<double>(y.norm2()));
                centres.push_back({s * y[0] / n, s * y[1] / n, false, true});
            }
    bool any = false;
    for (const auto& p : pts) any = any || p.unstable;
    if (!any) return FamilyClass::TrivialSubcritical;
    // Supercritical: some open hemisphere {v: <v,c> > 0} has no stable direction.
    for (const auto& c : centres) {
        bool clean = true;
        for (const auto& p : pts)
            if (!p.unstable && p.x * c.x + p.y * c.y > 1e-12) {
                clean = false;
                break;
            }
        if (clean) return FamilyClass::Supercritical;
    }
    // Subcritical: every open hemisphere contains a stable sample point that is
    // not an isolated critical direction (an open set of stable directions).
    for (const auto& c : centres) {
        bool found = false;
        for (const auto& p : pts)
            if (!p.exact && !p.unstable && p.x * c.x + p.y * c.y > 1e-9) {
                found = true;
                break;
            }
        if (!found) return FamilyClass::Critical;
    }
    return FamilyClass::SubcriticalNontrivial;
}

UpdateFamily random_family(std::uint64_t seed) {
    KeyedRng rng(fold(seed, 77));
    const auto nrules = rng.integer(1, 3);
    std::vector<UpdateRule> rules;
    for (std::int64_t r = 0; r < nrules; ++r) {
        std::vector<LatticeVec> offs;
        const auto size = rng.integer(1, 3);
        while (static_cast<std::int64_t>(offs.size()) < size) {
            LatticeVec v{static_cast<int>(rng.integer(-2, 2)), static_cast<int>(rng.integer(-2, 2))};
            if (!v.is_zero()) offs.push_back(v);
        }
        rules.emplace_back(offs);
    }
    return UpdateFamily(2, rules);
}

}  // namespace

TEST_CASE("constraint: FA-2f with north and east neighbours infected") {
    const auto fam = fa_family(2, 2);
    const auto dom = zeros_domain(3, 2);
    Configuration c(dom.box);
    c.set({2, 3}, true);
    c.set({3, 2}, true);
    CHECK(constraint_satisfied(fam, dom, c, {2, 2}));
}

TEST_CASE("constraint: fully healthy configuration with healthy boundary") {
    const auto dom = zeros_domain(4, 2);
    const Configuration c(dom.box);
    for (const auto& fam : {fa_family(1, 2), fa_family(2, 2), u0_family(2), fa_family(3, 2)})
        for (std::size_t i = 0; i < dom.box.size(); ++i) CHECK_FALSE(constraint_satisfied(fam, dom, c, dom.box.site_at(i)));
}

TEST_CASE("constraint: FA-2f with exactly one infected neighbour") {
    const auto fam = fa_family(2, 2);
    CHECK(fam.rules().size() == 6);
    std::set<std::set<LatticeVec>> expect;
    const std::vector<LatticeVec> nn{{1, 0}, {-1, 0}, {0, 1}, {0, -1}};
    for (std::size_t a = 0; a < 4; ++a)
        for (std::size_t b = a + 1; b < 4; ++b) expect.insert({nn[a], nn[b]});
    std::set<std::set<LatticeVec>> got;
    for (const auto& r : fam.rules()) got.insert(std::set<LatticeVec>(r.offsets().begin(), r.offsets().end()));
    CHECK(got == expect);
    const auto dom = zeros_domain(3, 2);
    for (const auto& e : nn) {
        Configuration c(dom.box);
        c.set(LatticeVec{2, 2} + e, true);
        CHECK_FALSE(constraint_satisfied(fam, dom, c, {2, 2}));
    }
}

TEST_CASE("constraint reads the boundary outside the box") {
    const auto fam = fa_family(2, 2);
    const Domain ones{Box::cube(3, 2), AllOnes{}};
    const Configuration c(ones.box);
    CHECK(constraint_satisfied(fam, ones, c, {1, 1}));
    CHECK_FALSE(constraint_satisfied(fam, ones, c, {2, 2}));
    ExplicitBoundary eb;
    CHECK_THROWS(Domain{Box::cube(2, 2), eb}.validate_boundary(1));
}

TEST_CASE("rule_in_halfspace examples") {
    CHECK(rule_in_halfspace(UpdateRule{{-1, 0}, {0, -1}}, RationalDirection{1, 1}));
    for (int a = -3; a <= 3; ++a)
        for (int b = -3; b <= 3; ++b)
            if (a || b) CHECK_FALSE(rule_in_halfspace(UpdateRule{{1, 0}, {-1, 0}}, RationalDirection{a, b}));
    CHECK_FALSE(rule_in_halfspace(UpdateRule{{-1, 0}, {0, -1}, {-1, -1}}, RationalDirection{1, 0}));
}

TEST_CASE("find_oriented_rule examples") {
    const auto u0 = u0_family(2);
    const auto o = find_oriented_rule(u0);
    REQUIRE(o);
    CHECK(o->rule == UpdateRule{{-1, 0}, {0, -1}, {-1, -1}});
    CHECK(o->direction == RationalDirection{1, 1});

    const auto fa2 = fa_family(2, 2);
    const auto o2 = find_oriented_rule(fa2);
    REQUIRE(o2);
    CHECK(rule_in_halfspace(o2->rule, o2->direction));
    bool scan = false;
    for (const auto& r : fa2.rules())
        for (int a = -3; a <= 3; ++a)
            for (int b = -3; b <= 3; ++b)
                if ((a || b) && rule_in_halfspace(r, RationalDirection{a, b})) scan = true;
    CHECK(scan);

    CHECK_FALSE(find_oriented_rule(UpdateFamily(2, {UpdateRule{{1, 0}, {-1, 0}}})));
    CHECK_FALSE(find_oriented_rule(fa_family(3, 2)));
}

TEST_CASE("classification of the FA families and the oriented family") {
    CHECK(classify(fa_family(1, 2)) == FamilyClass::Supercritical);
    CHECK(classify(fa_family(2, 2)) == FamilyClass::Critical);
    CHECK(classify(fa_family(3, 2)) == FamilyClass::TrivialSubcritical);
    CHECK(classify(u0_family(2)) == FamilyClass::SubcriticalNontrivial);
    CHECK(to_string(classify(u0_family(2))) == "SubcriticalNontrivial");
}

TEST_CASE("classification agrees with the angular-sampling oracle on random families") {
    for (std::uint64_t s = 0; s < 150; ++s) {
        const auto fam = random_family(s);
        CAPTURE(family_to_json(fam).dump());
        CHECK(classify(fam) == oracle_classify(fam));
    }
}

TEST_CASE("trivial subcriticality in d=3") {
    CHECK(classify(fa_family(4, 3)) == FamilyClass::TrivialSubcritical);
    CHECK(classify(fa_family(2, 3)) != FamilyClass::TrivialSubcritical);
}

TEST_CASE("family norm") {
    CHECK(family_norm(fa_family(2, 2)) == doctest::Approx(1.0));
    CHECK(family_norm(u0_family(2)) == doctest::Approx(std::sqrt(2.0)));
    CHECK(family_norm(UpdateFamily(2, {UpdateRule{{3, 4}}})) == doctest::Approx(5.0));
    CHECK(UpdateFamily(2, {UpdateRule{{3, 4}}}).norm2() == 25);
}

TEST_CASE("family specs and JSON") {
    CHECK(parse_family_spec("fa:2:2") == fa_family(2, 2));
    CHECK(parse_family_spec("u0:2") == u0_family(2));
    const auto j = family_to_json(u0_family(2));
    CHECK(j.dump() == R"({"dim":2,"rules":[[[-1,-1],[-1,0],[0,-1]]]})");
    CHECK(parse_family_spec(j.dump()) == u0_family(2));
    CHECK_THROWS(parse_family_spec("fa:0:2"));
    CHECK_THROWS(parse_family_spec(R"({"dim":2,"rules":[[[0,0]]]})"));
    CHECK_THROWS(parse_family_spec(R"({"dim":2,"rules":[[[1,0,0]]]})"));
}

TEST_CASE("box indexing is lexicographic") {
    const Box b = Box::cube(3, 2);
    CHECK(b.size() == 9);
    CHECK(b.site_at(0) == LatticeVec{1, 1});
    CHECK(b.site_at(1) == LatticeVec{1, 2});
    CHECK(b.site_at(3) == LatticeVec{2, 1});
    for (std::size_t i = 0; i < b.size(); ++i) {
        CHECK(b.index_of(b.site_at(i)) == i);
        if (i) CHECK(b.site_at(i - 1) < b.site_at(i));
    }
    CHECK(b.dist2_to({0, 0}) == 2);
    CHECK(Box::centred(2, 3).size() == 125);
}

TEST_CASE("bernoulli configurations are keyed by site") {
    const Box small(LatticeVec{2, 2}, LatticeVec{4, 4});
    const auto a = Configuration::bernoulli(Box::cube(6, 2), 0.5, 9, 3);
    const auto b = Configuration::bernoulli(small, 0.5, 9, 3);
    for (std::size_t i = 0; i < small.size(); ++i) CHECK(a.at(small.site_at(i)) == b.at(small.site_at(i)));
    const auto big = Configuration::bernoulli(Box::cube(200, 2), 0.3, 1, 0);
    const double rho = static_cast<double>(big.count_ones()) / 40000.0;
    CHECK(std::abs(rho - 0.3) < 3 * std::sqrt(0.21 / 40000.0));
}
