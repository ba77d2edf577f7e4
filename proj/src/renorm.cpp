#include "kcmlab/renorm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "kcmlab/errors.hpp"
#include "kcmlab/parallel.hpp"
#include "kcmlab/rng.hpp"
#include "kcmlab/stats.hpp"

namespace kcm {

namespace {

using boost::multiprecision::cpp_int;
using RMatrix = std::vector<std::vector<Rational>>;

constexpr double kInf = std::numeric_limits<double>::infinity();

std::int64_t floordiv(std::int64_t a, std::int64_t b) {
    std::int64_t q = a / b;
    if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
    return q;
}

std::int64_t to_i64(const cpp_int& v) { return v.convert_to<std::int64_t>(); }

/// Inverse by Gauss-Jordan; empty if singular.
std::optional<RMatrix> inverse(RMatrix a) {
    const std::size_t n = a.size();
    RMatrix inv(n, std::vector<Rational>(n, 0));
    for (std::size_t i = 0; i < n; ++i) inv[i][i] = 1;
    for (std::size_t c = 0; c < n; ++c) {
        std::size_t p = c;
        while (p < n && a[p][c] == 0) ++p;
        if (p == n) return std::nullopt;
        std::swap(a[p], a[c]);
        std::swap(inv[p], inv[c]);
        const Rational piv = a[c][c];
        for (std::size_t j = 0; j < n; ++j) {
            a[c][j] /= piv;
            inv[c][j] /= piv;
        }
        for (std::size_t r = 0; r < n; ++r) {
            if (r == c || a[r][c] == 0) continue;
            const Rational f = a[r][c];
            for (std::size_t j = 0; j < n; ++j) {
                a[r][j] -= f * a[c][j];
                inv[r][j] -= f * inv[c][j];
            }
        }
    }
    return inv;
}

Rational determinant(RMatrix a) {
    const std::size_t n = a.size();
    Rational det = 1;
    for (std::size_t c = 0; c < n; ++c) {
        std::size_t p = c;
        while (p < n && a[p][c] == 0) ++p;
        if (p == n) return 0;
        if (p != c) {
            std::swap(a[p], a[c]);
            det = -det;
        }
        det *= a[c][c];
        for (std::size_t r = c + 1; r < n; ++r) {
            const Rational f = a[r][c] / a[c][c];
            for (std::size_t j = c; j < n; ++j) a[r][j] -= f * a[c][j];
        }
    }
    return det;
}

RMatrix rows_of(const std::vector<LatticeVec>& vs) {
    RMatrix m;
    for (const auto& v : vs) {
        std::vector<Rational> row;
        for (std::size_t i = 0; i < v.dim(); ++i) row.emplace_back(v[i]);
        m.push_back(std::move(row));
    }
    return m;
}

Rational rdot(const std::vector<Rational>& a, const LatticeVec& b) {
    Rational s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

std::string rstr(const Rational& r) {
    std::ostringstream os;
    os << r;
    return os.str();
}

nlohmann::json rjson(const Rational& r) {
    return {{"num", boost::multiprecision::numerator(r).str()},
            {"den", boost::multiprecision::denominator(r).str()}};
}

std::vector<LatticeVec> neighbour_offsets(std::size_t d) {
    std::vector<LatticeVec> out;
    for (std::size_t mask = 1; mask < (std::size_t{1} << d); ++mask) {
        LatticeVec y(d);
        for (std::size_t i = 0; i < d; ++i)
            if (mask >> i & 1) y[i] = -1;
        out.push_back(y);
    }
    return out;
}

}  // namespace

// ---------------------------------------------------------------- geometry

LatticeVec BoxGeometry::renormalised(const LatticeVec& z) const {
    LatticeVec x(dim());
    for (std::size_t i = 0; i < dim(); ++i) x[i] = static_cast<int>(floordiv(dot(z, u_dirs[i]), width[i]));
    return x;
}

std::vector<LatticeVec> BoxGeometry::base_sites(const LatticeVec& x) const {
    const std::size_t d = dim();
    LatticeVec lo(d), hi(d);
    for (std::size_t i = 0; i < d; ++i) {
        lo[i] = std::numeric_limits<int>::max();
        hi[i] = std::numeric_limits<int>::min();
    }
    for (std::size_t s = 0; s < (std::size_t{1} << d); ++s) {
        LatticeVec c(d);
        for (std::size_t j = 0; j < d; ++j) c += w[j].scaled(R * (x[j] + static_cast<int>(s >> j & 1)));
        for (std::size_t i = 0; i < d; ++i) {
            lo[i] = std::min(lo[i], c[i]);
            hi[i] = std::max(hi[i], c[i]);
        }
    }
    const Box bb(lo, hi);
    std::vector<LatticeVec> out;
    for (std::size_t k = 0; k < bb.size(); ++k) {
        auto z = bb.site_at(k);
        if (renormalised(z) == x) out.push_back(std::move(z));
    }
    return out;
}

std::int64_t BoxGeometry::base_volume() const {
    const Rational det = determinant(rows_of(w));
    std::int64_t vol = to_i64(boost::multiprecision::numerator(Rational(abs(det))));
    for (std::size_t i = 0; i < dim(); ++i) vol *= R;
    return vol;
}

std::vector<std::string> BoxGeometry::check_invariants() const {
    std::vector<std::string> bad;
    const std::size_t d = dim();
    if (d == 0 || u0.dim() != d || u.dim() != d) {
        bad.push_back("dimension mismatch");
        return bad;
    }
    if (v.size() != d || lambda.size() != d || w.size() != d || width.size() != d) {
        bad.push_back("field sizes differ from the dimension");
        return bad;
    }
    if (R < 1) bad.push_back("R must be a positive integer");
    if (!(T > 0)) bad.push_back("T must be positive");
    if (!rule_in_halfspace(u0, u)) bad.push_back("U0 is not inside H_u for the witness u");
    if (determinant(rows_of(u_dirs)) == 0) bad.push_back("directions u_i are linearly dependent");
    for (std::size_t i = 0; i < d; ++i) {
        const std::string tag = "u_" + std::to_string(i + 1);
        for (const auto& y : u0.offsets())
            if (dot(y, u_dirs[i]) >= 0)
                bad.push_back("U0 not inside H_" + tag + ": <" + y.str() + "," + u_dirs[i].str() + "> = " +
                              std::to_string(dot(y, u_dirs[i])) + " >= 0");
        for (std::size_t j = 0; j < d; ++j)
            if (j != i && rdot(v[i], u_dirs[j]) != 0)
                bad.push_back("<v_" + std::to_string(i + 1) + ",u_" + std::to_string(j + 1) + "> = " +
                              rstr(rdot(v[i], u_dirs[j])) + " != 0");
        Rational vv = 0;
        for (const auto& c : v[i]) vv += c * c;
        if (rdot(v[i], u_dirs[i]) != vv) bad.push_back("u_" + std::to_string(i + 1) + " - v_" +
                                                       std::to_string(i + 1) + " is not orthogonal to v_" +
                                                       std::to_string(i + 1));
        if (lambda[i] <= 0) bad.push_back("lambda_" + std::to_string(i + 1) + " is not positive");
        for (std::size_t k = 0; k < d; ++k)
            if (lambda[i] * v[i][k] != Rational(w[i][k]))
                bad.push_back("lambda_" + std::to_string(i + 1) + " v_" + std::to_string(i + 1) +
                              " differs from the stored integer vector");
        const Rational wi = lambda[i] * vv * R;
        if (wi != Rational(width[i]))
            bad.push_back("W_" + std::to_string(i + 1) + " = " + std::to_string(width[i]) +
                          " differs from lambda |v|^2 R = " + rstr(wi));
        // lambda_i |v_i|^2 R > ||U|| for unit u_i, compared through squares.
        const Rational lhs = wi * wi;
        const Rational rhs = Rational(norm2) * Rational(u_dirs[i].norm2());
        if (!(lhs > rhs))
            bad.push_back("covering inclusion fails for i=" + std::to_string(i + 1) + ": (lambda |v|^2 R)^2 = " +
                          rstr(lhs) + " <= |U|^2 |u_i|^2 = " + rstr(rhs) + " (R too small)");
        for (const auto& y : u0.offsets())
            if (dot(y, u_dirs[i]) < -width[i])
                bad.push_back("offset " + y.str() + " leaves the neighbouring slab along u_" + std::to_string(i + 1));
    }
    return bad;
}

BoxGeometry build_geometry_from_directions(const UpdateRule& u0, const RationalDirection& u,
                                           const std::vector<LatticeVec>& u_dirs, int R, double T) {
    const std::size_t d = u0.dim();
    if (u.dim() != d) throw std::invalid_argument("build_geometry: u has the wrong dimension");
    if (u_dirs.size() != d) throw std::invalid_argument("build_geometry: need d directions");
    for (const auto& x : u_dirs)
        if (x.dim() != d) throw std::invalid_argument("build_geometry: direction of the wrong dimension");
    if (R < 1) throw std::invalid_argument("build_geometry: R must be >= 1");
    if (!(T > 0)) throw std::invalid_argument("build_geometry: T must be > 0");
    if (!rule_in_halfspace(u0, u)) throw std::invalid_argument("build_geometry: U0 is not inside H_u");
    const auto inv = inverse(rows_of(u_dirs));
    if (!inv) throw GeometryError("build_geometry: directions u_i are linearly dependent");

    BoxGeometry g{u0, u, u_dirs, {}, {}, {}, {}, R, T, u0.max_norm2()};
    for (std::size_t i = 0; i < d; ++i) {
        // Dual vector: column i of the inverse, so <dual, u_j> = delta_ij.
        std::vector<Rational> dual(d);
        for (std::size_t k = 0; k < d; ++k) dual[k] = (*inv)[k][i];
        Rational n2 = 0;
        for (const auto& c : dual) n2 += c * c;
        std::vector<Rational> vi(d);
        for (std::size_t k = 0; k < d; ++k) vi[k] = dual[k] / n2;
        cpp_int den_lcm = 1, num_gcd = 0;
        for (const auto& c : vi) den_lcm = boost::multiprecision::lcm(den_lcm, boost::multiprecision::denominator(c));
        for (const auto& c : vi) num_gcd = boost::multiprecision::gcd(num_gcd, boost::multiprecision::numerator(Rational(c * den_lcm)));
        const Rational lam = Rational(den_lcm) / Rational(num_gcd);
        LatticeVec wi(d);
        for (std::size_t k = 0; k < d; ++k) wi[k] = static_cast<int>(to_i64(boost::multiprecision::numerator(Rational(vi[k] * lam))));
        Rational vv = 0;
        for (const auto& c : vi) vv += c * c;
        const Rational wid = lam * vv * R;
        if (boost::multiprecision::denominator(wid) != 1)
            throw GeometryError("build_geometry: non-integral slab width");
        g.v.push_back(std::move(vi));
        g.lambda.push_back(lam);
        g.w.push_back(wi);
        g.width.push_back(to_i64(boost::multiprecision::numerator(wid)));
    }
    const auto bad = g.check_invariants();
    if (!bad.empty()) {
        std::string msg = "build_geometry: invalid geometry";
        for (const auto& b : bad) msg += "; " + b;
        throw GeometryError(msg);
    }
    return g;
}

BoxGeometry build_geometry(const UpdateRule& u0, const RationalDirection& u, int R, double T,
                           int perturbation_budget) {
    const std::size_t d = u0.dim();
    if (u.dim() != d) throw std::invalid_argument("build_geometry: u has the wrong dimension");
    if (!rule_in_halfspace(u0, u)) throw std::invalid_argument("build_geometry: U0 is not inside H_u");
    if (perturbation_budget < 1) throw std::invalid_argument("build_geometry: budget must be >= 1");
    std::string last;
    for (int m = 1; m <= perturbation_budget; ++m) {
        std::vector<LatticeVec> dirs;
        for (std::size_t i = 0; i < d; ++i) {
            LatticeVec e(d);
            e[i] = 1;
            dirs.push_back(u.numerators().scaled(m) + e);
        }
        bool ok = true;
        for (std::size_t i = 0; i < d && ok; ++i)
            for (const auto& y : u0.offsets())
                if (dot(y, dirs[i]) >= 0) {
                    last = "U0 not inside H_u_" + std::to_string(i + 1) + " for u_" + std::to_string(i + 1) +
                           " = " + dirs[i].str() + ": <" + y.str() + ",u_" + std::to_string(i + 1) + "> = " +
                           std::to_string(dot(y, dirs[i])) + " >= 0";
                    ok = false;
                    break;
                }
        if (ok && determinant(rows_of(dirs)) == 0) {
            last = "directions " + dirs.front().str() + ",... are linearly dependent";
            ok = false;
        }
        if (ok) return build_geometry_from_directions(u0, u, dirs, R, T);
    }
    throw GeometryError("build_geometry: no admissible directions within budget " +
                        std::to_string(perturbation_budget) + "; " + last);
}

nlohmann::json geometry_to_json(const BoxGeometry& g) {
    nlohmann::json j;
    nlohmann::json u0 = nlohmann::json::array();
    for (const auto& y : g.u0.offsets()) u0.push_back(std::vector<int>(y.coords().begin(), y.coords().end()));
    j["u0"] = u0;
    const auto& un = g.u.numerators();
    j["u"] = std::vector<int>(un.coords().begin(), un.coords().end());
    auto vecs = [](const std::vector<LatticeVec>& vs) {
        nlohmann::json a = nlohmann::json::array();
        for (const auto& v : vs) a.push_back(std::vector<int>(v.coords().begin(), v.coords().end()));
        return a;
    };
    j["u_dirs"] = vecs(g.u_dirs);
    nlohmann::json v = nlohmann::json::array();
    for (const auto& row : g.v) {
        nlohmann::json r = nlohmann::json::array();
        for (const auto& c : row) r.push_back(rjson(c));
        v.push_back(r);
    }
    j["v"] = v;
    nlohmann::json lam = nlohmann::json::array();
    for (const auto& l : g.lambda) lam.push_back(rjson(l));
    j["lambda"] = lam;
    j["w"] = vecs(g.w);
    j["width"] = g.width;
    j["R"] = g.R;
    j["T"] = g.T;
    j["norm2"] = g.norm2;
    return j;
}

BoxGeometry geometry_from_json(const nlohmann::json& j) {
    std::vector<LatticeVec> u0;
    for (const auto& y : j.at("u0")) u0.emplace_back(y.get<std::vector<int>>());
    std::vector<LatticeVec> dirs;
    for (const auto& y : j.at("u_dirs")) dirs.emplace_back(y.get<std::vector<int>>());
    auto g = build_geometry_from_directions(UpdateRule(u0), RationalDirection(LatticeVec(j.at("u").get<std::vector<int>>())),
                                            dirs, j.at("R").get<int>(), j.at("T").get<double>());
    if (geometry_to_json(g) != j) throw GeometryError("geometry_from_json: stored fields disagree with the rebuilt geometry");
    return g;
}

// -------------------------------------------------------------- good boxes

EventSource clock_source(const ClockField& clocks) {
    return [clocks](const LatticeVec& z, double t0, double t1) { return clocks.events_in(z, t0, t1); };
}

DependencyRegion good_box_dependency(const BoxGeometry& g, const LatticeVec& x, std::int64_t tau) {
    DependencyRegion r;
    r.sites = g.base_sites(x);
    for (const auto& y : neighbour_offsets(g.dim())) {
        auto b = g.base_sites(x + y);
        r.sites.insert(r.sites.end(), b.begin(), b.end());
    }
    std::sort(r.sites.begin(), r.sites.end());
    r.t0 = static_cast<double>(tau - 1) * g.T;
    r.t1 = static_cast<double>(tau + 1) * g.T;
    return r;
}

namespace {

/// Sites grouped by <z,u>, groups in increasing order.
std::vector<std::vector<LatticeVec>> projection_groups(const std::vector<LatticeVec>& sites,
                                                       const RationalDirection& u) {
    std::map<std::int64_t, std::vector<LatticeVec>> by;
    for (const auto& z : sites) by[dot(z, u.numerators())].push_back(z);
    std::vector<std::vector<LatticeVec>> out;
    for (auto& [k, v] : by) out.push_back(std::move(v));
    return out;
}

}  // namespace

GoodBoxDetail good_box_detail(const BoxGeometry& g, const EventSource& events, const LatticeVec& x,
                              std::int64_t tau, double q0, const Box* within) {
    if (tau < 1) throw std::invalid_argument("good_box: tau must be >= 1");
    const double lo = static_cast<double>(tau - 1) * g.T;
    const double mid = static_cast<double>(tau) * g.T;
    const double hi = static_cast<double>(tau + 1) * g.T;
    auto keep = [within](const std::vector<LatticeVec>& s) {
        if (!within) return s;
        std::vector<LatticeVec> out;
        for (const auto& z : s)
            if (within->contains(z)) out.push_back(z);
        return out;
    };
    GoodBoxDetail det;
    det.marks_ok = true;
    if (q0 < 1) {
        auto dep = good_box_dependency(g, x, tau);
        for (const auto& z : keep(dep.sites)) {
            for (const auto& e : events(z, lo, hi))
                if (e.time < hi && e.mark > q0) {
                    det.marks_ok = false;
                    break;
                }
            if (!det.marks_ok) break;
        }
    }
    det.chain_ok = true;
    double prev = lo;
    for (const auto& group : projection_groups(keep(g.base_sites(x)), g.u)) {
        double gmax = prev;
        for (const auto& z : group) {
            double pick = kInf;
            if (prev < mid)
                for (const auto& e : events(z, prev, mid))
                    if (e.time > prev && e.time < mid) {
                        pick = e.time;
                        break;
                    }
            if (pick == kInf) {
                det.chain_ok = false;
                return det;
            }
            gmax = std::max(gmax, pick);
        }
        prev = gmax;
    }
    return det;
}

bool good_box(const BoxGeometry& g, const ClockField& clocks, const LatticeVec& x, std::int64_t tau,
              double q0, const Box* within) {
    return good_box_detail(g, clock_source(clocks), x, tau, q0, within).good();
}

std::vector<LatticeVec> renormalised_sites(const BoxGeometry& g, const Box& box) {
    std::vector<LatticeVec> out;
    for (std::size_t i = 0; i < box.size(); ++i) out.push_back(g.renormalised(box.site_at(i)));
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

double GoodBoxField::good_fraction() const {
    if (bits.empty()) return 0;
    return static_cast<double>(std::count(bits.begin(), bits.end(), 1)) / static_cast<double>(bits.size());
}

namespace {

/// Event source over a fixed window, precomputed per site of a box.
EventSource cached_source(const ClockField& clocks, const Box& box, double t1) {
    auto cache = std::make_shared<std::vector<std::vector<ClockEvent>>>(box.size());
    for (std::size_t i = 0; i < box.size(); ++i) (*cache)[i] = clocks.events_in(box.site_at(i), 0, t1);
    return [cache, box, clocks, t1](const LatticeVec& z, double a, double b) {
        if (!box.contains(z) || b > t1) return clocks.events_in(z, a, b);
        const auto& ev = (*cache)[box.index_of(z)];
        std::vector<ClockEvent> out;
        auto it = std::upper_bound(ev.begin(), ev.end(), a,
                                   [](double t, const ClockEvent& e) { return t < e.time; });
        for (; it != ev.end() && it->time <= b; ++it) out.push_back(*it);
        return out;
    };
}

}  // namespace

GoodBoxField good_box_field(const BoxGeometry& g, const ClockField& clocks, const Box& box,
                            std::int64_t taus, double q0) {
    GoodBoxField f;
    f.sites = renormalised_sites(g, box);
    f.taus = taus;
    const auto src = cached_source(clocks, box, static_cast<double>(taus + 1) * g.T);
    for (std::int64_t tau = 1; tau <= taus; ++tau)
        for (const auto& x : f.sites) f.bits.push_back(good_box_detail(g, src, x, tau, q0, &box).good());
    return f;
}

Configuration block_bernoulli(const BoxGeometry& g, const Box& box, double p, std::uint64_t seed,
                              std::uint64_t replica) {
    Configuration c(box);
    const auto key = stream_key(seed, replica, Stream::Init);
    for (std::size_t i = 0; i < box.size(); ++i) {
        const auto x = g.renormalised(box.site_at(i));
        c[i] = to_open_unit(fold_coords(key, x.coords())) <= p ? 1 : 0;
    }
    return c;
}

// ------------------------------------------------ renormalised BP with death

RenormCheckReport renormalised_bp_check(const BoxGeometry& g, const ClockField& clocks,
                                        const Trajectory& cp, double q0, std::size_t max_recorded) {
    if (cp.kind != ProcessKind::CP) throw ContractError("renormalised_bp_check: trajectory is not a CP");
    if (!(cp.clocks == clocks)) throw ContractError("renormalised_bp_check: trajectory was driven by other clocks");
    if (!(cp.family == single_rule_family(g.u0)))
        throw ContractError("renormalised_bp_check: trajectory family is not {U0}");
    if (cp.q != q0) throw ContractError("renormalised_bp_check: trajectory parameter differs from q0");
    if (!std::holds_alternative<AllOnes>(cp.domain.boundary))
        throw ContractError("renormalised_bp_check: trajectory boundary is not all ones");
    const Box& box = cp.domain.box;
    if (box.dim() != g.dim()) throw ContractError("renormalised_bp_check: dimension mismatch");

    RenormCheckReport rep;
    const auto taus_total = static_cast<std::int64_t>(std::ceil(cp.horizon / g.T - 1e-12));
    rep.taus = std::max<std::int64_t>(taus_total, 1);
    const std::int64_t tau_max = rep.taus - 1;

    const auto xs = renormalised_sites(g, box);
    std::unordered_map<LatticeVec, std::size_t, LatticeVecHash> index;
    for (std::size_t i = 0; i < xs.size(); ++i) index[xs[i]] = i;
    std::vector<std::vector<std::uint32_t>> base(xs.size());
    for (std::uint32_t s = 0; s < box.size(); ++s) base[index.at(g.renormalised(box.site_at(s)))].push_back(s);

    std::vector<std::vector<std::pair<double, std::uint8_t>>> changes(box.size());
    for (const auto& e : cp.events) changes[e.site].emplace_back(e.time, e.value);

    const auto src = cached_source(clocks, box, static_cast<double>(tau_max + 2) * g.T);
    const auto nbr = neighbour_offsets(g.dim());

    // tau = 0
    std::vector<std::uint8_t> omega(xs.size()), next(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
        bool ok = true;
        for (auto s : base[i]) {
            if (!cp.initial[s]) ok = false;
            for (const auto& e : src(box.site_at(s), 0, g.T))
                if (e.time < g.T && e.mark > q0) ok = false;
            if (!ok) break;
        }
        omega[i] = ok;
    }
    std::size_t good = 0, judged = 0;

    auto check = [&](std::int64_t tau) {
        const double a = static_cast<double>(tau) * g.T, b = static_cast<double>(tau + 1) * g.T;
        for (std::size_t i = 0; i < xs.size(); ++i) {
            ++rep.boxes_checked;
            if (!omega[i]) continue;
            ++rep.omega_ones;
            for (auto s : base[i]) {
                const auto& ch = changes[s];
                auto it = std::upper_bound(ch.begin(), ch.end(), a,
                                           [](double t, const auto& c) { return t < c.first; });
                const std::uint8_t at_a = it == ch.begin() ? cp.initial[s] : std::prev(it)->second;
                double bad_t = -1;
                if (!at_a) bad_t = a;
                else
                    for (; it != ch.end() && it->first < b; ++it)
                        if (!it->second) {
                            bad_t = it->first;
                            break;
                        }
                if (bad_t >= 0) {
                    ++rep.violation_count;
                    if (rep.violations.size() < max_recorded)
                        rep.violations.push_back({xs[i], tau, box.site_at(s), bad_t});
                }
            }
        }
    };
    check(0);
    for (std::int64_t tau = 1; tau <= tau_max; ++tau) {
        for (std::size_t i = 0; i < xs.size(); ++i) {
            const bool is_good = good_box_detail(g, src, xs[i], tau, q0, &box).good();
            ++judged;
            good += is_good;
            if (!is_good) {
                next[i] = 0;
                continue;
            }
            bool all = true;
            for (const auto& y : nbr) {
                auto it = index.find(xs[i] + y);
                if (it != index.end() && !omega[it->second]) {
                    all = false;
                    break;
                }
            }
            next[i] = omega[i] || all;
        }
        omega.swap(next);
        check(tau);
    }
    rep.good_fraction = judged ? static_cast<double>(good) / static_cast<double>(judged) : 0.0;
    return rep;
}

// ------------------------------------------------------------ passage times

double RenormPassageField::at(const LatticeVec& x) const {
    for (std::size_t i = 0; i < xi.size(); ++i)
        if (xi[i] == x) return t[i];
    return 0;
}

double RenormPassageField::max() const {
    double m = 0;
    for (double v : t) m = std::max(m, v);
    return m;
}

namespace {

struct PassageLayout {
    std::vector<LatticeVec> xi;
    std::vector<std::vector<std::uint32_t>> base;  // box indices
};

PassageLayout passage_layout(const BoxGeometry& g, const Box& lambda) {
    PassageLayout L;
    L.xi = renormalised_sites(g, lambda);
    std::stable_sort(L.xi.begin(), L.xi.end(), [](const LatticeVec& a, const LatticeVec& b) {
        std::int64_t sa = 0, sb = 0;
        for (std::size_t i = 0; i < a.dim(); ++i) {
            sa += a[i];
            sb += b[i];
        }
        return sa < sb;
    });
    std::unordered_map<LatticeVec, std::size_t, LatticeVecHash> index;
    for (std::size_t i = 0; i < L.xi.size(); ++i) index[L.xi[i]] = i;
    L.base.resize(L.xi.size());
    for (std::uint32_t s = 0; s < lambda.size(); ++s)
        L.base[index.at(g.renormalised(lambda.site_at(s)))].push_back(s);
    return L;
}

}  // namespace

RenormPassageField renorm_passage_times(const BoxGeometry& g, const Box& lambda, double q0,
                                        const ClockField& clocks) {
    if (!(q0 >= 0 && q0 < 1)) throw std::invalid_argument("renorm_passage_times: q0 must lie in [0,1)");
    if (lambda.dim() != g.dim()) throw std::invalid_argument("renorm_passage_times: dimension mismatch");
    const auto L = passage_layout(g, lambda);
    std::unordered_map<LatticeVec, std::size_t, LatticeVecHash> index;
    for (std::size_t i = 0; i < L.xi.size(); ++i) index[L.xi[i]] = i;
    const auto nbr = neighbour_offsets(g.dim());
    RenormPassageField f;
    f.xi = L.xi;
    f.t.assign(L.xi.size(), 0);
    f.t_tilde.assign(L.xi.size(), 0);
    for (std::size_t i = 0; i < L.xi.size(); ++i) {
        double tt = 0;
        for (const auto& y : nbr) {
            auto it = index.find(L.xi[i] + y);
            if (it != index.end()) tt = std::max(tt, f.t[it->second]);
        }
        f.t_tilde[i] = tt;
        std::vector<LatticeVec> sites;
        for (auto s : L.base[i]) sites.push_back(lambda.site_at(s));
        f.base_count.push_back(sites.size());
        double prev = tt;
        for (const auto& group : projection_groups(sites, g.u)) {
            double gmax = prev;
            for (const auto& z : group) {
                ClockEvent e = clocks.first_event_after(z, prev);
                while (e.mark <= q0) e = clocks.first_event_after(z, e.time);
                gmax = std::max(gmax, e.time);
            }
            prev = gmax;
        }
        f.t[i] = prev;
    }
    return f;
}

PassageCouplingReport passage_coupling_check(const BoxGeometry& g, const Box& lambda, double q0,
                                             const ClockField& clocks, const RenormPassageField& f,
                                             std::size_t max_recorded) {
    PassageCouplingReport rep;
    rep.horizon = f.max() + 1;
    const UpdateFamily fam = single_rule_family(g.u0);
    const Domain dom{lambda, AllOnes{}};
    Simulator one(ProcessKind::CP, fam, dom, Configuration::ones(lambda), q0);
    Simulator zero(ProcessKind::CP, fam, dom, Configuration::zeros(lambda), q0);
    std::vector<double> coupled(lambda.size(), kInf);
    BlockStream stream(clocks, lambda);
    stream.for_each(0.0, rep.horizon, [&](const BlockStream::Event& e) {
        one.apply(e.site, e.mark);
        zero.apply(e.site, e.mark);
        if (one.at(e.site) != zero.at(e.site)) coupled[e.site] = kInf;
        else if (coupled[e.site] == kInf) coupled[e.site] = e.time;
        return true;
    });
    std::unordered_map<LatticeVec, std::size_t, LatticeVecHash> index;
    for (std::size_t i = 0; i < f.xi.size(); ++i) index[f.xi[i]] = i;
    for (std::uint32_t s = 0; s < lambda.size(); ++s) {
        const auto z = lambda.site_at(s);
        const auto x = g.renormalised(z);
        auto it = index.find(x);
        if (it == index.end()) throw ContractError("passage_coupling_check: passage field does not cover the box");
        const double tx = f.t[it->second];
        ++rep.sites_checked;
        if (coupled[s] > tx) {
            ++rep.violation_count;
            if (rep.violations.size() < max_recorded) rep.violations.push_back({x, z, tx, coupled[s]});
        }
    }
    return rep;
}

// ------------------------------------------------------------------ warm-up

WarmupEstimate measure_warmup(const UpdateFamily& family, const WarmupOptions& opt) {
    const std::size_t d = family.dim();
    if (!(opt.p >= 0 && opt.p <= 1 && opt.q >= 0 && opt.q <= 1))
        throw std::invalid_argument("measure_warmup: p and q must lie in [0,1]");
    if (opt.base_vectors.size() != d) throw std::invalid_argument("measure_warmup: need d base vectors");
    if (opt.R < 1 || opt.T < 0 || opt.window < 0 || opt.buffer < 0)
        throw std::invalid_argument("measure_warmup: bad R, T, window or buffer");
    // Column matrix of the v'_i; coordinates c = M^{-1} a, x_i = floor(c_i / R).
    RMatrix m(d, std::vector<Rational>(d));
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t k = 0; k < d; ++k) m[k][i] = opt.base_vectors[i][k];
    const auto inv = inverse(m);
    if (!inv) throw std::invalid_argument("measure_warmup: base vectors are linearly dependent");
    cpp_int den = 1;
    for (const auto& row : *inv)
        for (const auto& c : row) den = boost::multiprecision::lcm(den, boost::multiprecision::denominator(c));
    std::vector<std::vector<std::int64_t>> adj(d, std::vector<std::int64_t>(d));
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t k = 0; k < d; ++k)
            adj[i][k] = to_i64(boost::multiprecision::numerator(Rational((*inv)[i][k] * Rational(den))));
    const std::int64_t scale = to_i64(den) * opt.R;
    auto renorm = [&](const LatticeVec& a) {
        LatticeVec x(d);
        for (std::size_t i = 0; i < d; ++i) {
            std::int64_t s = 0;
            for (std::size_t k = 0; k < d; ++k) s += adj[i][k] * a[k];
            x[i] = static_cast<int>(floordiv(s, scale));
        }
        return x;
    };

    const Box window = Box::centred(opt.window, d);
    const Box box = Box::centred(opt.window + opt.buffer, d);
    std::map<LatticeVec, std::vector<std::uint32_t>> bases;
    std::map<LatticeVec, bool> inside;
    for (std::uint32_t s = 0; s < box.size(); ++s) {
        const auto a = box.site_at(s);
        const auto x = renorm(a);
        bases[x].push_back(s);
        auto [it, fresh] = inside.emplace(x, true);
        if (!window.contains(a)) it->second = false;
    }
    const Rational vol = abs(determinant(m));
    std::int64_t base_size = to_i64(boost::multiprecision::numerator(vol));
    for (std::size_t i = 0; i < d; ++i) base_size *= opt.R;
    std::vector<std::vector<std::uint32_t>> full_bases;
    for (const auto& [x, sites] : bases)
        if (inside[x] && static_cast<std::int64_t>(sites.size()) == base_size) full_bases.push_back(sites);

    WarmupEstimate est;
    est.base_size = static_cast<std::size_t>(base_size);
    std::vector<std::size_t> full(opt.replicas, 0);
    parallel_for(opt.replicas, opt.jobs, [&](std::size_t r) {
        const Domain dom{box, AllOnes{}};
        Simulator sim(ProcessKind::KCM, family, dom, Configuration::bernoulli(box, opt.p, opt.seed, r), opt.q);
        const ClockField clocks(opt.seed, d, r);
        BlockStream stream(clocks, box);
        stream.for_each(0.0, opt.T, [&](const BlockStream::Event& e) {
            sim.apply(e.site, e.mark);
            return true;
        });
        std::size_t k = 0;
        for (const auto& b : full_bases)
            k += std::all_of(b.begin(), b.end(), [&](std::uint32_t s) { return sim.at(s) != 0; });
        full[r] = k;
    });
    est.boxes = full_bases.size() * opt.replicas;
    est.full = std::accumulate(full.begin(), full.end(), std::size_t{0});
    est.density = est.boxes ? static_cast<double>(est.full) / static_cast<double>(est.boxes) : 0.0;
    std::tie(est.ci_lo, est.ci_hi) = wilson_interval(static_cast<double>(est.full), static_cast<double>(est.boxes));
    return est;
}

}  // namespace kcm
