#include "kcmlab/lattice.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <boost/multiprecision/cpp_int.hpp>
#include <nlohmann/json.hpp>

#include "kcmlab/rng.hpp"

namespace kcm {

using json = nlohmann::json;

// ---------------------------------------------------------------- LatticeVec

bool LatticeVec::is_zero() const noexcept {
    return std::all_of(c_.begin(), c_.end(), [](int v) { return v == 0; });
}

std::int64_t LatticeVec::norm2() const noexcept {
    std::int64_t s = 0;
    for (int v : c_) s += static_cast<std::int64_t>(v) * v;
    return s;
}

LatticeVec& LatticeVec::operator+=(const LatticeVec& o) {
    if (o.dim() != dim()) throw std::invalid_argument("LatticeVec: dimension mismatch");
    for (std::size_t i = 0; i < c_.size(); ++i) c_[i] += o.c_[i];
    return *this;
}

LatticeVec& LatticeVec::operator-=(const LatticeVec& o) {
    if (o.dim() != dim()) throw std::invalid_argument("LatticeVec: dimension mismatch");
    for (std::size_t i = 0; i < c_.size(); ++i) c_[i] -= o.c_[i];
    return *this;
}

LatticeVec LatticeVec::operator-() const { return scaled(-1); }

LatticeVec LatticeVec::scaled(int k) const {
    LatticeVec r = *this;
    for (auto& v : r.c_) v *= k;
    return r;
}

std::string LatticeVec::str() const {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < c_.size(); ++i) os << (i ? "," : "") << c_[i];
    os << ')';
    return os.str();
}

std::int64_t dot(const LatticeVec& a, const LatticeVec& b) {
    if (a.dim() != b.dim()) throw std::invalid_argument("dot: dimension mismatch");
    std::int64_t s = 0;
    for (std::size_t i = 0; i < a.dim(); ++i) s += static_cast<std::int64_t>(a[i]) * b[i];
    return s;
}

std::int64_t dist2(const LatticeVec& a, const LatticeVec& b) { return (a - b).norm2(); }

std::size_t LatticeVecHash::operator()(const LatticeVec& v) const noexcept {
    return static_cast<std::size_t>(fold_coords(0x5eedULL, v.coords()));
}

// --------------------------------------------------------- RationalDirection

RationalDirection::RationalDirection(LatticeVec numerators) : v_(std::move(numerators)) {
    if (v_.dim() == 0 || v_.is_zero())
        throw std::invalid_argument("RationalDirection: numerators must not all be zero");
    int g = 0;
    for (int c : v_.coords()) g = std::gcd(g, std::abs(c));
    for (std::size_t i = 0; i < v_.dim(); ++i) v_[i] /= g;
}

std::vector<double> RationalDirection::unit() const {
    const double n = std::sqrt(static_cast<double>(v_.norm2()));
    std::vector<double> u(v_.dim());
    for (std::size_t i = 0; i < u.size(); ++i) u[i] = v_[i] / n;
    return u;
}

// ---------------------------------------------------------------- UpdateRule

UpdateRule::UpdateRule(std::vector<LatticeVec> offsets) : offsets_(std::move(offsets)) {
    if (offsets_.empty()) throw std::invalid_argument("UpdateRule: rule must be non-empty");
    const auto d = offsets_.front().dim();
    if (d == 0) throw std::invalid_argument("UpdateRule: dimension must be at least 1");
    for (const auto& y : offsets_) {
        if (y.dim() != d) throw std::invalid_argument("UpdateRule: mixed dimensions");
        if (y.is_zero()) throw std::invalid_argument("UpdateRule: 0 is not an allowed offset");
    }
    std::sort(offsets_.begin(), offsets_.end());
    offsets_.erase(std::unique(offsets_.begin(), offsets_.end()), offsets_.end());
}

std::int64_t UpdateRule::max_norm2() const noexcept {
    std::int64_t m = 0;
    for (const auto& y : offsets_) m = std::max(m, y.norm2());
    return m;
}

// -------------------------------------------------------------- UpdateFamily

UpdateFamily::UpdateFamily(std::size_t dim, std::vector<UpdateRule> rules) : dim_(dim) {
    if (dim == 0) throw std::invalid_argument("UpdateFamily: dimension must be at least 1");
    if (rules.empty()) throw std::invalid_argument("UpdateFamily: family must be non-empty");
    for (auto& r : rules) {
        if (r.dim() != dim) throw std::invalid_argument("UpdateFamily: rule dimension mismatch");
        if (std::find(rules_.begin(), rules_.end(), r) == rules_.end()) rules_.push_back(std::move(r));
    }
}

std::int64_t UpdateFamily::norm2() const noexcept {
    std::int64_t m = 0;
    for (const auto& r : rules_) m = std::max(m, r.max_norm2());
    return m;
}

int UpdateFamily::reach() const noexcept {
    int m = 0;
    for (const auto& r : rules_)
        for (const auto& y : r.offsets())
            for (int c : y.coords()) m = std::max(m, std::abs(c));
    return m;
}

double family_norm(const UpdateFamily& family) {
    return std::sqrt(static_cast<double>(family.norm2()));
}

UpdateFamily fa_family(int j, int d) {
    if (d < 1) throw std::invalid_argument("fa_family: d must be >= 1");
    if (j < 1) throw std::invalid_argument("fa_family: j must be >= 1");
    std::vector<LatticeVec> nbrs;
    for (int i = 0; i < d; ++i) {
        LatticeVec e(static_cast<std::size_t>(d));
        e[i] = 1;
        nbrs.push_back(e);
    }
    for (int i = 0; i < d; ++i) {
        LatticeVec e(static_cast<std::size_t>(d));
        e[i] = -1;
        nbrs.push_back(e);
    }
    const int m = 2 * d;
    if (j > m) throw std::invalid_argument("fa_family: j exceeds the number of neighbours");
    std::vector<UpdateRule> rules;
    // Enumerate j-subsets in lexicographic order of index tuples.
    std::vector<int> idx(j);
    std::iota(idx.begin(), idx.end(), 0);
    while (true) {
        std::vector<LatticeVec> offs;
        for (int i : idx) offs.push_back(nbrs[i]);
        rules.emplace_back(std::move(offs));
        int k = j - 1;
        while (k >= 0 && idx[k] == m - j + k) --k;
        if (k < 0) break;
        ++idx[k];
        for (int t = k + 1; t < j; ++t) idx[t] = idx[t - 1] + 1;
    }
    return UpdateFamily(static_cast<std::size_t>(d), std::move(rules));
}

UpdateFamily u0_family(int d) {
    if (d < 1) throw std::invalid_argument("u0_family: d must be >= 1");
    std::vector<LatticeVec> offs;
    const int total = 1 << d;
    for (int mask = 1; mask < total; ++mask) {
        LatticeVec y(static_cast<std::size_t>(d));
        for (int i = 0; i < d; ++i)
            if (mask & (1 << i)) y[i] = -1;
        offs.push_back(y);
    }
    return UpdateFamily(static_cast<std::size_t>(d), {UpdateRule(std::move(offs))});
}

UpdateFamily single_rule_family(const UpdateRule& rule) { return UpdateFamily(rule.dim(), {rule}); }

UpdateFamily family_from_json(const json& j) {
    if (!j.is_object() || !j.contains("dim") || !j.contains("rules"))
        throw std::invalid_argument("family JSON must be an object with \"dim\" and \"rules\"");
    const int d = j.at("dim").get<int>();
    if (d < 1) throw std::invalid_argument("family JSON: dim must be >= 1");
    std::vector<UpdateRule> rules;
    for (const auto& jr : j.at("rules")) {
        std::vector<LatticeVec> offs;
        for (const auto& jy : jr) {
            auto coords = jy.get<std::vector<int>>();
            if (coords.size() != static_cast<std::size_t>(d))
                throw std::invalid_argument("family JSON: offset dimension does not match dim");
            offs.emplace_back(std::move(coords));
        }
        rules.emplace_back(std::move(offs));
    }
    return UpdateFamily(static_cast<std::size_t>(d), std::move(rules));
}

json family_to_json(const UpdateFamily& f) {
    json rules = json::array();
    for (const auto& r : f.rules()) {
        json jr = json::array();
        for (const auto& y : r.offsets())
            jr.push_back(std::vector<int>(y.coords().begin(), y.coords().end()));
        rules.push_back(jr);
    }
    return json{{"dim", f.dim()}, {"rules", rules}};
}

UpdateFamily parse_family_spec(std::string_view spec) {
    auto split = [](std::string_view s) {
        std::vector<std::string> parts;
        std::string cur;
        for (char ch : s) {
            if (ch == ':') {
                parts.push_back(cur);
                cur.clear();
            } else {
                cur.push_back(ch);
            }
        }
        parts.push_back(cur);
        return parts;
    };
    if (spec.rfind("fa:", 0) == 0) {
        auto p = split(spec);
        if (p.size() != 3) throw std::invalid_argument("family spec must be fa:<j>:<d>");
        return fa_family(std::stoi(p[1]), std::stoi(p[2]));
    }
    if (spec.rfind("u0:", 0) == 0) {
        auto p = split(spec);
        if (p.size() != 2) throw std::invalid_argument("family spec must be u0:<d>");
        return u0_family(std::stoi(p[1]));
    }
    const auto first = spec.find_first_not_of(" \t\n");
    if (first != std::string_view::npos && spec[first] == '{')
        return family_from_json(json::parse(spec));
    std::ifstream in{std::string(spec)};
    if (!in) throw std::invalid_argument("cannot read family file: " + std::string(spec));
    return family_from_json(json::parse(in));
}

// ----------------------------------------------------------------------- Box

Box::Box(LatticeVec lower, LatticeVec upper) : lo_(std::move(lower)), hi_(std::move(upper)) {
    if (lo_.dim() != hi_.dim() || lo_.dim() == 0)
        throw std::invalid_argument("Box: corners must share a positive dimension");
    size_ = 1;
    for (std::size_t i = 0; i < lo_.dim(); ++i) {
        if (hi_[i] < lo_[i]) throw std::invalid_argument("Box: empty box");
        size_ *= static_cast<std::size_t>(hi_[i] - lo_[i] + 1);
    }
}

Box Box::cube(int n, std::size_t d) {
    LatticeVec lo(d), hi(d);
    for (std::size_t i = 0; i < d; ++i) {
        lo[i] = 1;
        hi[i] = n;
    }
    return Box(lo, hi);
}

Box Box::centred(int r, std::size_t d) {
    LatticeVec lo(d), hi(d);
    for (std::size_t i = 0; i < d; ++i) {
        lo[i] = -r;
        hi[i] = r;
    }
    return Box(lo, hi);
}

bool Box::contains(const LatticeVec& x) const noexcept {
    if (x.dim() != dim()) return false;
    for (std::size_t i = 0; i < dim(); ++i)
        if (x[i] < lo_[i] || x[i] > hi_[i]) return false;
    return true;
}

std::size_t Box::index_of(const LatticeVec& x) const {
    if (!contains(x)) throw std::domain_error("site " + x.str() + " is outside the box");
    std::size_t idx = 0;
    for (std::size_t i = 0; i < dim(); ++i)
        idx = idx * static_cast<std::size_t>(extent(i)) + static_cast<std::size_t>(x[i] - lo_[i]);
    return idx;
}

LatticeVec Box::site_at(std::size_t index) const {
    if (index >= size_) throw std::out_of_range("Box::site_at: index out of range");
    LatticeVec x(dim());
    for (std::size_t k = dim(); k-- > 0;) {
        const auto e = static_cast<std::size_t>(extent(k));
        x[k] = lo_[k] + static_cast<int>(index % e);
        index /= e;
    }
    return x;
}

std::int64_t Box::dist2_to(const LatticeVec& x) const noexcept {
    std::int64_t s = 0;
    for (std::size_t i = 0; i < dim(); ++i) {
        std::int64_t d = 0;
        if (x[i] < lo_[i]) d = lo_[i] - x[i];
        if (x[i] > hi_[i]) d = x[i] - hi_[i];
        s += d * d;
    }
    return s;
}

// -------------------------------------------------------------------- Domain

bool Domain::boundary_value(const LatticeVec& x) const {
    return std::visit(
        [&](const auto& b) -> bool {
            using B = std::decay_t<decltype(b)>;
            if constexpr (std::is_same_v<B, AllOnes>) {
                return true;
            } else if constexpr (std::is_same_v<B, AllZeros>) {
                return false;
            } else {
                auto it = b.values.find(x);
                if (it == b.values.end())
                    throw std::domain_error("explicit boundary does not cover site " + x.str());
                return it->second;
            }
        },
        boundary);
}

void Domain::validate_boundary(std::int64_t range2) const {
    const auto* ex = std::get_if<ExplicitBoundary>(&boundary);
    if (!ex) return;
    const int pad = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(range2)))) + 1;
    LatticeVec lo = box.lower(), hi = box.upper();
    for (std::size_t i = 0; i < box.dim(); ++i) {
        lo[i] -= pad;
        hi[i] += pad;
    }
    const Box shell(lo, hi);
    for (std::size_t k = 0; k < shell.size(); ++k) {
        const auto x = shell.site_at(k);
        if (box.contains(x)) continue;
        const auto d2 = box.dist2_to(x);
        if (d2 <= range2 && !ex->values.contains(x))
            throw std::invalid_argument("explicit boundary misses exterior site " + x.str());
    }
}

// ------------------------------------------------------------- Configuration

Configuration::Configuration(Box box, std::uint8_t fill)
    : box_(std::move(box)), bits_(box_.size(), fill ? 1 : 0) {}

Configuration::Configuration(Box box, std::vector<std::uint8_t> bits)
    : box_(std::move(box)), bits_(std::move(bits)) {
    if (bits_.size() != box_.size())
        throw std::invalid_argument("Configuration: bit count does not match the box");
    for (auto& b : bits_) b = b ? 1 : 0;
}

Configuration Configuration::bernoulli(const Box& b, double p, std::uint64_t seed,
                                       std::uint64_t replica) {
    Configuration c(b);
    const auto key = stream_key(seed, replica, Stream::Init);
    for (std::size_t i = 0; i < b.size(); ++i) {
        const auto x = b.site_at(i);
        c.bits_[i] = to_open_unit(fold_coords(key, x.coords())) <= p ? 1 : 0;
    }
    return c;
}

std::size_t Configuration::count_ones() const noexcept {
    return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), 1));
}

bool Configuration::dominated_by(const Configuration& other) const {
    if (!(other.box_ == box_)) throw std::invalid_argument("dominated_by: boxes differ");
    for (std::size_t i = 0; i < bits_.size(); ++i)
        if (bits_[i] > other.bits_[i]) return false;
    return true;
}

// ---------------------------------------------------------------- constraint

bool constraint_satisfied(const UpdateFamily& family, const Domain& domain,
                          const Configuration& config, const LatticeVec& x) {
    if (!(config.box() == domain.box)) throw std::invalid_argument("configuration/domain box mismatch");
    if (!domain.box.contains(x)) throw std::domain_error("site " + x.str() + " is outside the domain");
    for (const auto& rule : family.rules()) {
        bool all = true;
        for (const auto& y : rule.offsets()) {
            const auto z = x + y;
            const bool v = domain.box.contains(z) ? config.at(z) : domain.boundary_value(z);
            if (!v) {
                all = false;
                break;
            }
        }
        if (all) return true;
    }
    return false;
}

bool rule_in_halfspace(const UpdateRule& rule, const RationalDirection& u) {
    if (rule.dim() != u.dim()) throw std::invalid_argument("rule_in_halfspace: dimension mismatch");
    return std::all_of(rule.offsets().begin(), rule.offsets().end(),
                       [&](const LatticeVec& y) { return dot(y, u.numerators()) < 0; });
}

bool is_unstable(const UpdateFamily& family, const LatticeVec& u) {
    for (const auto& rule : family.rules()) {
        bool all = true;
        for (const auto& y : rule.offsets())
            if (dot(y, u) >= 0) {
                all = false;
                break;
            }
        if (all) return true;
    }
    return false;
}

// ------------------------------------------------------------- convex hulls

namespace {

using Rational = boost::multiprecision::cpp_rational;

// Solves sum_i lambda_i y_i = 0, sum_i lambda_i = 1 exactly. Returns the
// unique solution, or nothing if the system is inconsistent or
// underdetermined.
std::optional<std::vector<Rational>> barycentric_of_origin(const std::vector<LatticeVec>& pts) {
    const std::size_t k = pts.size();
    const std::size_t d = pts.front().dim();
    const std::size_t rows = d + 1;
    std::vector<std::vector<Rational>> a(rows, std::vector<Rational>(k + 1));
    for (std::size_t j = 0; j < k; ++j) {
        for (std::size_t i = 0; i < d; ++i) a[i][j] = pts[j][i];
        a[d][j] = 1;
    }
    a[d][k] = 1;
    std::size_t r = 0;
    std::vector<std::size_t> pivot_col;
    for (std::size_t c = 0; c < k && r < rows; ++c) {
        std::size_t p = r;
        while (p < rows && a[p][c] == 0) ++p;
        if (p == rows) return std::nullopt;  // rank deficient in the unknowns
        std::swap(a[p], a[r]);
        for (std::size_t i = 0; i < rows; ++i) {
            if (i == r || a[i][c] == 0) continue;
            const Rational f = a[i][c] / a[r][c];
            for (std::size_t j = c; j <= k; ++j) a[i][j] -= f * a[r][j];
        }
        pivot_col.push_back(c);
        ++r;
    }
    for (std::size_t i = r; i < rows; ++i)
        if (a[i][k] != 0) return std::nullopt;  // inconsistent
    std::vector<Rational> lambda(k);
    for (std::size_t i = 0; i < r; ++i) lambda[pivot_col[i]] = a[i][k] / a[i][pivot_col[i]];
    return lambda;
}

}  // namespace

bool origin_in_convex_hull(const UpdateRule& rule) {
    const auto& pts = rule.offsets();
    const std::size_t n = pts.size();
    const std::size_t d = rule.dim();
    const std::size_t max_k = std::min(n, d + 1);
    for (std::size_t k = 1; k <= max_k; ++k) {
        std::vector<std::size_t> idx(k);
        std::iota(idx.begin(), idx.end(), 0);
        while (true) {
            std::vector<LatticeVec> sub;
            for (auto i : idx) sub.push_back(pts[i]);
            if (auto lam = barycentric_of_origin(sub)) {
                if (std::all_of(lam->begin(), lam->end(), [](const Rational& v) { return v >= 0; }))
                    return true;
            }
            std::size_t t = k;
            while (t-- > 0) {
                if (idx[t] != t + n - k) break;
            }
            if (t == static_cast<std::size_t>(-1)) break;
            ++idx[t];
            for (std::size_t s = t + 1; s < k; ++s) idx[s] = idx[s - 1] + 1;
        }
    }
    return false;
}

std::optional<RationalDirection> separating_direction(const UpdateRule& rule) {
    if (origin_in_convex_hull(rule)) return std::nullopt;
    const std::size_t d = rule.dim();
    // A strictly separating direction exists, and the set of them is an open
    // cone, so it contains integer points; search shells of growing max-norm.
    for (int bound = 1;; ++bound) {
        std::vector<LatticeVec> shell;
        LatticeVec v(d);
        for (std::size_t i = 0; i < d; ++i) v[i] = -bound;
        while (true) {
            int m = 0;
            for (int c : v.coords()) m = std::max(m, std::abs(c));
            if (m == bound) {
                bool ok = true;
                for (const auto& y : rule.offsets())
                    if (dot(y, v) >= 0) {
                        ok = false;
                        break;
                    }
                if (ok) shell.push_back(v);
            }
            std::size_t i = d;
            while (i-- > 0) {
                if (v[i] < bound) {
                    ++v[i];
                    break;
                }
                v[i] = -bound;
            }
            if (i == static_cast<std::size_t>(-1)) break;
        }
        if (!shell.empty()) {
            std::stable_sort(shell.begin(), shell.end(), [](const LatticeVec& a, const LatticeVec& b) {
                if (a.norm2() != b.norm2()) return a.norm2() < b.norm2();
                return b < a;  // prefer positive coordinates first
            });
            return RationalDirection(shell.front());
        }
    }
}

std::optional<OrientedRule> find_oriented_rule(const UpdateFamily& family) {
    for (const auto& rule : family.rules())
        if (auto u = separating_direction(rule)) return OrientedRule{rule, *u};
    return std::nullopt;
}

// ------------------------------------------------------------ classification

namespace {

int half_plane(const LatticeVec& v) { return (v[1] < 0 || (v[1] == 0 && v[0] < 0)) ? 1 : 0; }

std::int64_t cross(const LatticeVec& a, const LatticeVec& b) {
    return static_cast<std::int64_t>(a[0]) * b[1] - static_cast<std::int64_t>(a[1]) * b[0];
}

LatticeVec rot90(const LatticeVec& v) { return LatticeVec{-v[1], v[0]}; }

LatticeVec reduced(const LatticeVec& v) { return RationalDirection(v).numerators(); }

}  // namespace

bool angle_less(const LatticeVec& a, const LatticeVec& b) {
    const int ha = half_plane(a), hb = half_plane(b);
    if (ha != hb) return ha < hb;
    return cross(a, b) > 0;
}

bool same_direction(const LatticeVec& a, const LatticeVec& b) {
    return half_plane(a) == half_plane(b) && cross(a, b) == 0;
}

UnstableArcs2D::UnstableArcs2D(const UpdateFamily& family) {
    if (family.dim() != 2) throw std::invalid_argument("UnstableArcs2D: family must be 2-dimensional");
    for (const auto& r : family.rules())
        for (const auto& y : r.offsets()) {
            critical_.push_back(reduced(rot90(y)));
            critical_.push_back(reduced(-rot90(y)));
        }
    std::sort(critical_.begin(), critical_.end(), angle_less);
    critical_.erase(std::unique(critical_.begin(), critical_.end(), same_direction), critical_.end());
    const std::size_t m = critical_.size();
    for (std::size_t i = 0; i < m; ++i) {
        critical_status_.push_back(is_unstable(family, critical_[i]));
        const auto& a = critical_[i];
        const auto& b = critical_[(i + 1) % m];
        // Gaps never exceed pi because the critical set is closed under negation.
        const LatticeVec rep = cross(a, b) > 0 ? a + b : rot90(a);
        arc_status_.push_back(is_unstable(family, rep));
    }
}

std::size_t UnstableArcs2D::antipode(std::size_t i) const {
    const auto neg = -critical_[i];
    for (std::size_t j = 0; j < critical_.size(); ++j)
        if (same_direction(critical_[j], neg)) return j;
    throw std::logic_error("critical direction set is not symmetric");
}

bool UnstableArcs2D::unstable(const LatticeVec& u) const {
    const std::size_t m = critical_.size();
    for (std::size_t i = 0; i < m; ++i) {
        if (same_direction(u, critical_[i])) return critical_status_[i];
        const auto& a = critical_[i];
        const auto& b = critical_[(i + 1) % m];
        // u strictly inside the ccw arc (a, b).
        const bool inside = cross(a, b) > 0 ? (cross(a, u) > 0 && cross(u, b) > 0)
                                            : (cross(a, u) > 0);  // gap of exactly pi
        if (inside) return arc_status_[i];
    }
    throw std::logic_error("direction not located on the circle");
}

bool UnstableArcs2D::has_unstable_hemisphere() const {
    const std::size_t m = critical_.size();
    for (std::size_t i = 0; i < m; ++i) {
        const std::size_t a = antipode(i);
        bool all = true;
        for (std::size_t j = i; j != a; j = (j + 1) % m) {
            if (!arc_status_[j]) all = false;
            if (j != i && !critical_status_[j]) all = false;
            if (!all) break;
        }
        if (all) return true;
    }
    return false;
}

bool UnstableArcs2D::every_hemisphere_has_stable_open_set() const {
    const std::size_t m = critical_.size();
    for (std::size_t i = 0; i < m; ++i) {
        const std::size_t a = antipode(i);
        bool some_stable = false;
        for (std::size_t j = i; j != a; j = (j + 1) % m)
            if (!arc_status_[j]) {
                some_stable = true;
                break;
            }
        if (!some_stable) return false;
    }
    return true;
}

bool UnstableArcs2D::any_unstable() const {
    return std::any_of(arc_status_.begin(), arc_status_.end(), [](bool b) { return b; });
}

std::string_view to_string(FamilyClass c) {
    switch (c) {
        case FamilyClass::Supercritical: return "Supercritical";
        case FamilyClass::Critical: return "Critical";
        case FamilyClass::SubcriticalNontrivial: return "SubcriticalNontrivial";
        case FamilyClass::TrivialSubcritical: return "TrivialSubcritical";
        case FamilyClass::UnknownNonTrivialSubcritical: return "UnknownNonTrivialSubcritical";
    }
    return "?";
}

FamilyClass classify(const UpdateFamily& family) {
    if (family.dim() == 1) {
        const bool plus = is_unstable(family, LatticeVec{1});
        const bool minus = is_unstable(family, LatticeVec{-1});
        // On S^0 each open hemisphere is a single point.
        return (plus || minus) ? FamilyClass::Supercritical : FamilyClass::TrivialSubcritical;
    }
    if (family.dim() == 2) {
        const UnstableArcs2D arcs(family);
        if (!arcs.any_unstable()) return FamilyClass::TrivialSubcritical;
        if (arcs.has_unstable_hemisphere()) return FamilyClass::Supercritical;
        if (arcs.every_hemisphere_has_stable_open_set()) return FamilyClass::SubcriticalNontrivial;
        return FamilyClass::Critical;
    }
    return find_oriented_rule(family) ? FamilyClass::UnknownNonTrivialSubcritical
                                      : FamilyClass::TrivialSubcritical;
}

}  // namespace kcm
