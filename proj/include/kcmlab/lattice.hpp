#pragma once

// Exact integer lattice geometry: update families, constraints, stable and
// unstable directions, universality classes, boxes and boundary conditions.

#include <compare>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace kcm {

/// A point of Z^d. Arithmetic is exact; the dimension is fixed at
/// construction and mixing dimensions is a logic error.
class LatticeVec {
public:
    LatticeVec() = default;
    explicit LatticeVec(std::size_t dim) : c_(dim, 0) {}
    LatticeVec(std::initializer_list<int> coords) : c_(coords) {}
    explicit LatticeVec(std::vector<int> coords) : c_(std::move(coords)) {}

    std::size_t dim() const noexcept { return c_.size(); }
    int operator[](std::size_t i) const { return c_[i]; }
    int& operator[](std::size_t i) { return c_[i]; }
    std::span<const int> coords() const noexcept { return c_; }

    bool is_zero() const noexcept;
    std::int64_t norm2() const noexcept;

    LatticeVec& operator+=(const LatticeVec& o);
    LatticeVec& operator-=(const LatticeVec& o);
    friend LatticeVec operator+(LatticeVec a, const LatticeVec& b) { return a += b; }
    friend LatticeVec operator-(LatticeVec a, const LatticeVec& b) { return a -= b; }
    LatticeVec operator-() const;
    LatticeVec scaled(int k) const;

    friend bool operator==(const LatticeVec&, const LatticeVec&) = default;
    friend auto operator<=>(const LatticeVec& a, const LatticeVec& b) { return a.c_ <=> b.c_; }

    std::string str() const;

private:
    std::vector<int> c_;
};

std::int64_t dot(const LatticeVec& a, const LatticeVec& b);
std::int64_t dist2(const LatticeVec& a, const LatticeVec& b);

struct LatticeVecHash {
    std::size_t operator()(const LatticeVec& v) const noexcept;
};

/// Direction u in S^{d-1}, stored as a gcd-reduced integer vector.
class RationalDirection {
public:
    explicit RationalDirection(LatticeVec numerators);
    RationalDirection(std::initializer_list<int> numerators)
        : RationalDirection(LatticeVec(numerators)) {}

    const LatticeVec& numerators() const noexcept { return v_; }
    std::size_t dim() const noexcept { return v_.dim(); }
    std::vector<double> unit() const;

    friend bool operator==(const RationalDirection&, const RationalDirection&) = default;

private:
    LatticeVec v_;
};

/// Finite non-empty set of non-zero offsets.
class UpdateRule {
public:
    explicit UpdateRule(std::vector<LatticeVec> offsets);
    UpdateRule(std::initializer_list<LatticeVec> offsets)
        : UpdateRule(std::vector<LatticeVec>(offsets)) {}

    std::size_t dim() const noexcept { return offsets_.front().dim(); }
    std::size_t size() const noexcept { return offsets_.size(); }
    const std::vector<LatticeVec>& offsets() const noexcept { return offsets_; }
    std::int64_t max_norm2() const noexcept;

    friend bool operator==(const UpdateRule&, const UpdateRule&) = default;

private:
    std::vector<LatticeVec> offsets_;  // sorted, unique
};

class UpdateFamily {
public:
    UpdateFamily(std::size_t dim, std::vector<UpdateRule> rules);

    std::size_t dim() const noexcept { return dim_; }
    const std::vector<UpdateRule>& rules() const noexcept { return rules_; }
    /// Square of the largest Euclidean norm of any offset (exact).
    std::int64_t norm2() const noexcept;
    /// Largest coordinate magnitude over all offsets.
    int reach() const noexcept;

    friend bool operator==(const UpdateFamily&, const UpdateFamily&) = default;

private:
    std::size_t dim_;
    std::vector<UpdateRule> rules_;
};

/// Fredrickson-Andersen j-spin facilitated family: all j-subsets of the 2d
/// nearest neighbours.
UpdateFamily fa_family(int j, int d);
/// The oriented single-rule family {{0,-1}^d \ {0}}.
UpdateFamily u0_family(int d);
UpdateFamily single_rule_family(const UpdateRule& rule);

/// Parses {"dim": d, "rules": [[[x1,...,xd],...],...]}.
UpdateFamily family_from_json(const nlohmann::json& j);
nlohmann::json family_to_json(const UpdateFamily& f);
/// Accepts "fa:j:d", "u0:d", a path to a JSON file, or inline JSON.
UpdateFamily parse_family_spec(std::string_view spec);

double family_norm(const UpdateFamily& family);

/// Axis-aligned integer box [lower, upper] (inclusive), row-major indexing
/// with the first coordinate most significant, which coincides with the
/// lexicographic order of sites.
class Box {
public:
    Box(LatticeVec lower, LatticeVec upper);
    /// {1,...,n}^d
    static Box cube(int n, std::size_t d);
    /// {-r,...,r}^d
    static Box centred(int r, std::size_t d);

    std::size_t dim() const noexcept { return lo_.dim(); }
    const LatticeVec& lower() const noexcept { return lo_; }
    const LatticeVec& upper() const noexcept { return hi_; }
    int extent(std::size_t i) const noexcept { return hi_[i] - lo_[i] + 1; }
    std::size_t size() const noexcept { return size_; }

    bool contains(const LatticeVec& x) const noexcept;
    std::size_t index_of(const LatticeVec& x) const;
    LatticeVec site_at(std::size_t index) const;
    /// Squared Euclidean distance from x to the box (0 inside).
    std::int64_t dist2_to(const LatticeVec& x) const noexcept;

    friend bool operator==(const Box&, const Box&) = default;

private:
    LatticeVec lo_, hi_;
    std::size_t size_ = 0;
};

struct AllOnes {
    friend bool operator==(const AllOnes&, const AllOnes&) = default;
};
struct AllZeros {
    friend bool operator==(const AllZeros&, const AllZeros&) = default;
};
struct ExplicitBoundary {
    std::map<LatticeVec, bool> values;
    friend bool operator==(const ExplicitBoundary&, const ExplicitBoundary&) = default;
};
using Boundary = std::variant<AllOnes, AllZeros, ExplicitBoundary>;

struct Domain {
    Box box;
    Boundary boundary = AllOnes{};

    /// Boundary value at an exterior site. Explicit boundaries throw for
    /// sites they do not cover.
    bool boundary_value(const LatticeVec& x) const;
    /// Checks that an explicit boundary covers every exterior site within
    /// Euclidean distance sqrt(range2) of the box.
    void validate_boundary(std::int64_t range2) const;
};

/// {0,1}-valued configuration indexed exactly by a box. 1 = infected.
class Configuration {
public:
    explicit Configuration(Box box, std::uint8_t fill = 0);
    Configuration(Box box, std::vector<std::uint8_t> bits);

    static Configuration ones(const Box& b) { return Configuration(b, 1); }
    static Configuration zeros(const Box& b) { return Configuration(b, 0); }
    /// Product Bernoulli(p) keyed by (seed, replica, site coordinates), so the
    /// value at a site does not depend on the surrounding box.
    static Configuration bernoulli(const Box& b, double p, std::uint64_t seed,
                                   std::uint64_t replica = 0);

    const Box& box() const noexcept { return box_; }
    std::size_t size() const noexcept { return bits_.size(); }
    bool at(const LatticeVec& x) const { return bits_[box_.index_of(x)] != 0; }
    void set(const LatticeVec& x, bool v) { bits_[box_.index_of(x)] = v ? 1 : 0; }
    std::uint8_t operator[](std::size_t i) const { return bits_[i]; }
    std::uint8_t& operator[](std::size_t i) { return bits_[i]; }
    const std::vector<std::uint8_t>& bits() const noexcept { return bits_; }
    std::size_t count_ones() const noexcept;

    /// Pointwise order.
    bool dominated_by(const Configuration& other) const;

    friend bool operator==(const Configuration&, const Configuration&) = default;

private:
    Box box_;
    std::vector<std::uint8_t> bits_;
};

/// c_x: 1 iff some rule is fully infected around x (boundary read outside
/// the box). Independent of the state at x.
bool constraint_satisfied(const UpdateFamily& family, const Domain& domain,
                          const Configuration& config, const LatticeVec& x);

/// True iff <y,u> < 0 for every offset y of the rule.
bool rule_in_halfspace(const UpdateRule& rule, const RationalDirection& u);

/// Exact test 0 in conv(rule) via Caratheodory subsets and rational
/// elimination.
bool origin_in_convex_hull(const UpdateRule& rule);

struct OrientedRule {
    UpdateRule rule;
    RationalDirection direction;
};

/// First rule (in family order) admitting a separating direction, with the
/// smallest integer witness (by max-norm, then Euclidean norm, then
/// lexicographically). Empty iff the family is trivial subcritical.
std::optional<OrientedRule> find_oriented_rule(const UpdateFamily& family);

/// Smallest integer witness for one rule, or empty if 0 is in its hull.
std::optional<RationalDirection> separating_direction(const UpdateRule& rule);

/// Direction u is unstable iff some rule lies in H_u.
bool is_unstable(const UpdateFamily& family, const LatticeVec& u);

enum class FamilyClass {
    Supercritical,
    Critical,
    SubcriticalNontrivial,
    TrivialSubcritical,
    UnknownNonTrivialSubcritical,
};

std::string_view to_string(FamilyClass c);

/// Exact four-way classification for d <= 2; for d >= 3 only trivial
/// subcriticality is decided.
FamilyClass classify(const UpdateFamily& family);

/// Exact description of the unstable set on S^1: the circle is cut at the
/// critical directions (perpendiculars of offsets); status is constant on
/// each open arc between consecutive critical directions.
class UnstableArcs2D {
public:
    explicit UnstableArcs2D(const UpdateFamily& family);

    /// Critical directions sorted counter-clockwise from angle 0.
    const std::vector<LatticeVec>& critical() const noexcept { return critical_; }
    /// critical_unstable()[i]: status of critical()[i].
    const std::vector<bool>& critical_unstable() const noexcept { return critical_status_; }
    /// arc_unstable()[i]: status of the open arc from critical()[i] to critical()[i+1].
    const std::vector<bool>& arc_unstable() const noexcept { return arc_status_; }

    /// Status of an arbitrary non-zero direction, read from the arc model.
    bool unstable(const LatticeVec& u) const;

    bool has_unstable_hemisphere() const;
    bool every_hemisphere_has_stable_open_set() const;
    bool any_unstable() const;

private:
    std::size_t antipode(std::size_t i) const;

    std::vector<LatticeVec> critical_;
    std::vector<bool> critical_status_;
    std::vector<bool> arc_status_;
};

/// Counter-clockwise angular order on non-zero integer 2-vectors, starting
/// at the positive x-axis.
bool angle_less(const LatticeVec& a, const LatticeVec& b);
bool same_direction(const LatticeVec& a, const LatticeVec& b);

}  // namespace kcm
