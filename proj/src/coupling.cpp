#include "kcmlab/coupling.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "kcmlab/errors.hpp"
#include "kcmlab/parallel.hpp"
#include "kcmlab/rng.hpp"
#include "kcmlab/stats.hpp"

namespace kcm {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

int isqrt_ceil(std::int64_t v) {
    auto r = static_cast<std::int64_t>(std::sqrt(static_cast<double>(v)));
    while (r * r < v) ++r;
    while (r > 0 && (r - 1) * (r - 1) >= v) --r;
    return static_cast<int>(r);
}

/// Integer offsets with squared norm <= r2.
std::vector<LatticeVec> ball(std::size_t d, std::int64_t r2) {
    const int r = isqrt_ceil(r2);
    std::vector<LatticeVec> out;
    const Box b = Box::centred(r, d);
    for (std::size_t i = 0; i < b.size(); ++i) {
        auto v = b.site_at(i);
        if (v.norm2() <= r2) out.push_back(v);
    }
    return out;
}

bool key_less(double t1, std::uint32_t s1, double t2, std::uint32_t s2) {
    return t1 < t2 || (t1 == t2 && s1 < s2);
}

}  // namespace

// ------------------------------------------------------------ OrangeTracker

OrangeTracker::OrangeTracker(const Box& box, std::int64_t norm2) {
    const int pad = std::max(1, isqrt_ceil(norm2));
    LatticeVec lo = box.lower(), hi = box.upper();
    for (std::size_t i = 0; i < box.dim(); ++i) {
        lo[i] -= pad;
        hi[i] += pad;
    }
    const Box padded(lo, hi);
    cell_of_.resize(box.size());
    for (std::size_t i = 0; i < box.size(); ++i)
        cell_of_[i] = static_cast<std::uint32_t>(padded.index_of(box.site_at(i)));
    for (const auto& v : ball(box.dim(), norm2)) {
        std::ptrdiff_t d = 0;
        for (std::size_t i = 0; i < v.dim(); ++i) d = d * padded.extent(i) + v[i];
        ball_.push_back(d);
    }
    orange_.assign(padded.size(), 0);
}

void OrangeTracker::reset(const Configuration& cp_state) {
    std::fill(orange_.begin(), orange_.end(), 0);
    size_ = 0;
    for (std::size_t i = 0; i < cp_state.size(); ++i)
        if (!cp_state[i]) {
            orange_[cell_of_[i]] = 1;
            ++size_;
        }
}

std::vector<std::uint8_t> OrangeTracker::members() const {
    std::vector<std::uint8_t> m(cell_of_.size());
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = orange_[cell_of_[i]];
    return m;
}

std::vector<std::uint8_t> OrangeProcess::members_at(double t) const {
    auto m = initial;
    for (const auto& c : changes) {
        if (c.time > t) break;
        m[c.site] = c.member;
    }
    return m;
}

OrangeProcess track_orange(const Trajectory& cp, double family_norm, const OrangeOptions& opt) {
    if (!(family_norm >= 0)) throw std::invalid_argument("track_orange: norm must be non-negative");
    return track_orange_norm2(cp, std::llround(family_norm * family_norm), opt);
}

OrangeProcess track_orange_norm2(const Trajectory& cp, std::int64_t norm2, const OrangeOptions& opt) {
    if (cp.kind != ProcessKind::CP) throw ContractError("track_orange: trajectory is not a CP trajectory");
    const Box& box = cp.domain.box;
    const double t0 = opt.start_time;
    if (t0 < 0 || t0 > cp.horizon) throw std::invalid_argument("track_orange: start time outside the horizon");
    Configuration state = cp.initial;
    std::size_t ptr = 0;
    while (ptr < cp.events.size() && cp.events[ptr].time <= t0) {
        state[cp.events[ptr].site] = cp.events[ptr].value;
        ++ptr;
    }
    OrangeTracker tracker(box, norm2);
    tracker.drop_additions = opt.drop_additions;
    tracker.reset(opt.empty_start ? Configuration::ones(box) : state);
    OrangeProcess out{box, t0, cp.horizon, tracker.members(), {}, std::nullopt};
    if (tracker.size() == 0) out.empty_time = t0;
    BlockStream stream(cp.clocks, box);
    stream.for_each(t0, cp.horizon, [&](const BlockStream::Event& e) {
        if (ptr < cp.events.size()) {
            const auto& ch = cp.events[ptr];
            if (key_less(ch.time, ch.site, e.time, e.site))
                throw ContractError("track_orange: trajectory change does not match any clock event");
            if (ch.time == e.time && ch.site == e.site) {
                state[e.site] = ch.value;
                ++ptr;
            }
        }
        const int r = tracker.update(e.site, state[e.site] != 0);
        if (r != 0) {
            out.changes.push_back({e.time, e.site, static_cast<std::uint8_t>(r > 0)});
            if (tracker.size() == 0 && !out.empty_time) out.empty_time = e.time;
        }
        return true;
    });
    if (ptr != cp.events.size())
        throw ContractError("track_orange: trajectory changes beyond the clock stream");
    return out;
}

// ---------------------------------------------------------- grand coupling

namespace {

/// Walks a change list in step with the clock stream.
template <class Change>
struct Cursor {
    const std::vector<Change>* changes;
    std::size_t ptr = 0;

    template <class Apply>
    void advance(double t, std::uint32_t site, Apply&& apply) {
        if (ptr >= changes->size()) return;
        const auto& c = (*changes)[ptr];
        if (key_less(c.time, c.site, t, site))
            throw ContractError("trajectory change does not match any clock event");
        if (c.time == t && c.site == site) {
            apply(c);
            ++ptr;
        }
    }
};

}  // namespace

GrandCouplingReport grand_coupling_check(const UpdateFamily& family, const Domain& domain, double q,
                                         double q0, double horizon, const ClockField& clocks,
                                         const Configuration& cp_init,
                                         const std::vector<Configuration>& kcm_inits,
                                         const GrandCouplingOptions& opt) {
    if (!(q0 >= 0 && q0 <= q && q <= 1)) throw std::invalid_argument("grand_coupling_check: need 0 <= q0 <= q <= 1");
    for (std::size_t k = 0; k < kcm_inits.size(); ++k)
        if (!cp_init.dominated_by(kcm_inits[k]))
            throw std::invalid_argument("grand_coupling_check: KCM initial condition " + std::to_string(k) +
                                        " does not dominate the CP initial condition");
    const auto oriented = find_oriented_rule(family);
    if (!oriented) throw std::invalid_argument("grand_coupling_check: family is trivial subcritical");
    const UpdateFamily u0fam = single_rule_family(oriented->rule);
    const Box& box = domain.box;

    const Trajectory cp = run_cp(u0fam, domain, cp_init, q0, horizon, clocks);
    const Trajectory eta1 = run_kcm(family, domain, Configuration::ones(box), q, horizon, clocks);
    std::vector<Trajectory> etas;
    for (const auto& xi : kcm_inits) etas.push_back(run_kcm(family, domain, xi, q, horizon, clocks));
    return check_coupling(cp, eta1, etas, family.norm2(), opt);
}

GrandCouplingReport check_coupling(const Trajectory& cp, const Trajectory& eta1,
                                   const std::vector<Trajectory>& etas, std::int64_t norm2,
                                   const GrandCouplingOptions& opt) {
    if (cp.kind != ProcessKind::CP) throw ContractError("check_coupling: reference trajectory is not a CP");
    auto same_setup = [&](const Trajectory& e) {
        if (e.kind != ProcessKind::KCM) throw ContractError("check_coupling: coupled trajectory is not a KCM");
        if (!(e.clocks == cp.clocks)) throw ContractError("check_coupling: trajectories use different clocks");
        if (!(e.domain.box == cp.domain.box)) throw ContractError("check_coupling: trajectories use different boxes");
        if (e.horizon != cp.horizon) throw ContractError("check_coupling: trajectories use different horizons");
    };
    same_setup(eta1);
    for (const auto& e : etas) same_setup(e);
    if (cp.family.rules().size() != 1) throw ContractError("check_coupling: CP family must have one rule");
    const auto dir = separating_direction(cp.family.rules()[0]);
    if (!dir) throw ContractError("check_coupling: CP rule is not oriented");
    const Box& box = cp.domain.box;
    const double horizon = cp.horizon;
    const ClockField& clocks = cp.clocks;
    OrangeOptions oo;
    oo.drop_additions = opt.corrupt_tracker;
    oo.empty_start = opt.corrupt_tracker;
    const OrangeProcess orange = track_orange_norm2(cp, norm2, oo);

    GrandCouplingReport rep{{}, 0, {orange.empty_time, horizon}, 0, cp.family.rules()[0], *dir};
    auto record = [&](double t, std::uint32_t site, const char* kind, std::size_t k) {
        ++rep.violation_count;
        if (rep.violations.size() < opt.max_recorded) rep.violations.push_back({t, box.site_at(site), kind, k});
    };

    std::vector<std::uint8_t> zeta = cp.initial.bits();
    std::vector<std::uint8_t> e1 = eta1.initial.bits();
    std::vector<std::vector<std::uint8_t>> es;
    for (const auto& e : etas) es.push_back(e.initial.bits());
    std::vector<std::uint8_t> org = orange.initial;
    std::vector<std::size_t> diff(etas.size(), 0);

    auto check_site = [&](double t, std::uint32_t x) {
        if (zeta[x] > e1[x]) record(t, x, "domination", 0);
        for (std::size_t k = 0; k < es.size(); ++k) {
            if (zeta[x] > es[k][x]) record(t, x, "domination", k + 1);
            if (e1[x] != es[k][x] && !org[x]) record(t, x, "inclusion", k + 1);
        }
    };
    for (std::uint32_t x = 0; x < box.size(); ++x) {
        check_site(0.0, x);
        for (std::size_t k = 0; k < es.size(); ++k) diff[k] += e1[x] != es[k][x];
    }

    Cursor<StateChange> ccp{&cp.events};
    Cursor<StateChange> c1{&eta1.events};
    std::vector<Cursor<StateChange>> cs;
    for (const auto& e : etas) cs.push_back({&e.events});
    Cursor<OrangeChange> corg{&orange.changes};

    BlockStream stream(clocks, box);
    stream.for_each(0.0, horizon, [&](const BlockStream::Event& ev) {
        const auto x = ev.site;
        std::vector<std::uint8_t> before(es.size());
        for (std::size_t k = 0; k < es.size(); ++k) before[k] = e1[x] != es[k][x];
        ccp.advance(ev.time, x, [&](const StateChange& c) { zeta[x] = c.value; });
        c1.advance(ev.time, x, [&](const StateChange& c) { e1[x] = c.value; });
        for (std::size_t k = 0; k < es.size(); ++k)
            cs[k].advance(ev.time, x, [&](const StateChange& c) { es[k][x] = c.value; });
        corg.advance(ev.time, x, [&](const OrangeChange& c) { org[x] = c.member; });
        for (std::size_t k = 0; k < es.size(); ++k) {
            const std::uint8_t after = e1[x] != es[k][x];
            diff[k] = diff[k] - before[k] + after;
        }
        check_site(ev.time, x);
        if (orange.empty_time && ev.time >= *orange.empty_time)
            for (std::size_t k = 0; k < es.size(); ++k)
                if (diff[k] > 0) record(ev.time, x, "after-certificate", k + 1);
        ++rep.events_checked;
        return true;
    });
    return rep;
}

// ------------------------------------------------------------------ mixing

namespace {

MixingReplica mixing_replica(const UpdateFamily& family, const UpdateFamily& u0fam, int n, double q,
                             double q0, double max_time, double burn_in, int ell,
                             std::uint64_t seed, std::uint64_t r) {
    const std::size_t d = family.dim();
    const Box box = Box::cube(n, d);
    const Domain domain{box, AllOnes{}};
    const ClockField clocks(seed, d, r);
    Simulator cp(ProcessKind::CP, u0fam, domain, Configuration::zeros(box), q0);
    Simulator k1(ProcessKind::KCM, family, domain, Configuration::ones(box), q);
    Simulator k0(ProcessKind::KCM, family, domain, Configuration::zeros(box), q);
    OrangeTracker orange(box, family.norm2());
    bool started = false;
    if (burn_in <= 0) {
        orange.reset(Configuration::zeros(box));
        started = true;
    }
    std::vector<std::uint8_t> centre(box.size(), 0);
    const int c = n / 2;
    for (std::size_t i = 0; i < box.size(); ++i) {
        const auto x = box.site_at(i);
        bool in = true;
        for (std::size_t a = 0; a < d; ++a) in = in && std::abs(x[a] - c) <= ell;
        centre[i] = in;
    }
    std::size_t diff = box.size();
    MixingReplica rep{kInf, kInf, kInf, false};
    bool coupled = false;
    BlockStream stream(clocks, box);
    stream.for_each(0.0, max_time, [&](const BlockStream::Event& e) {
        const auto x = e.site;
        if (!coupled) {
            if (!started && e.time > burn_in) {
                orange.reset(cp.configuration());
                started = true;
            }
            const bool before = k1.at(x) != k0.at(x);
            cp.apply(x, e.mark);
            k1.apply(x, e.mark);
            const bool ch0 = k0.apply(x, e.mark);
            if (ch0 && centre[x] && rep.lower_proxy == kInf) rep.lower_proxy = e.time;
            const bool after = k1.at(x) != k0.at(x);
            if (before != after) {
                diff = after ? diff + 1 : diff - 1;
                if (diff == 0) rep.kcm_meet_time = e.time;
            }
            if (started) {
                orange.update(x, cp.at(x) != 0);
                if (orange.size() == 0) {
                    coupled = true;
                    rep.certificate_time = e.time;
                    rep.kcm_agree = diff == 0;
                }
            }
        } else {
            if (k0.apply(x, e.mark) && centre[x]) rep.lower_proxy = e.time;
        }
        return !(coupled && rep.lower_proxy != kInf);
    });
    if (!coupled) rep.kcm_meet_time = kInf;
    return rep;
}

}  // namespace

MixingEstimate estimate_mixing_time(const UpdateFamily& family, int n, double q,
                                    const MixingOptions& opt) {
    if (n < 1) throw std::invalid_argument("estimate_mixing_time: n must be >= 1");
    if (!(q >= 0 && q <= 1)) throw std::invalid_argument("estimate_mixing_time: q must lie in [0,1]");
    if (!(opt.delta > 0 && opt.delta < 1)) throw std::invalid_argument("estimate_mixing_time: delta must lie in (0,1)");
    if (opt.replicas == 0) throw std::invalid_argument("estimate_mixing_time: need at least one replica");
    const auto oriented = find_oriented_rule(family);
    if (!oriented)
        throw std::invalid_argument("estimate_mixing_time: trivial subcritical families are not ergodic");
    const double q0 = opt.q0.value_or(q);
    if (!(q0 >= 0 && q0 <= q)) throw std::invalid_argument("estimate_mixing_time: need 0 <= q0 <= q");
    const double max_time = opt.max_time.value_or(200.0 * n + 100.0);
    const UpdateFamily u0fam = single_rule_family(oriented->rule);

    MixingEstimate est;
    est.n = n;
    est.replicas.resize(opt.replicas);
    parallel_for(opt.replicas, opt.jobs, [&](std::size_t r) {
        est.replicas[r] = mixing_replica(family, u0fam, n, q, q0, max_time, opt.burn_in, opt.ell,
                                         opt.seed, r);
    });
    std::vector<double> cert, lower;
    for (const auto& r : est.replicas) {
        cert.push_back(r.certificate_time);
        lower.push_back(r.lower_proxy);
        if (r.certificate_time == kInf) ++est.censored;
        else if (!r.kcm_agree) est.kcm_agreement = false;
    }
    est.t_hat = quantile_order_stat(cert, 1 - opt.delta);
    std::tie(est.ci_lo, est.ci_hi) =
        bootstrap_quantile_ci(cert, 1 - opt.delta, opt.bootstrap, fold(opt.seed, static_cast<std::uint64_t>(n)));
    est.lower_hat = quantile_order_stat(lower, opt.delta);
    std::tie(est.lower_ci_lo, est.lower_ci_hi) =
        bootstrap_quantile_ci(lower, opt.delta, opt.bootstrap, fold(opt.seed, 7919 + static_cast<std::uint64_t>(n)));
    return est;
}

// ---------------------------------------------------------------- survival

std::vector<double> geometric_grid(double t_min, double ratio, double horizon) {
    if (!(t_min > 0 && ratio > 1)) throw std::invalid_argument("geometric_grid: need t_min > 0 and ratio > 1");
    std::vector<double> g{0.0};
    for (double t = t_min; t <= horizon * (1 + 1e-12); t *= ratio) g.push_back(t);
    return g;
}

namespace {

struct WindowRecord {
    std::vector<std::uint8_t> origin_hits;
    std::vector<std::vector<std::uint8_t>> window_orange;  // [grid][window site]
    std::vector<std::tuple<double, LatticeVec, std::uint8_t>> window_cp;
    double stop_time = 0;
};

WindowRecord survival_replica(const UpdateFamily& u0fam, std::int64_t norm2, const SurvivalOptions& opt,
                              const std::vector<double>& grid, int buffer, std::uint64_t r,
                              bool record_window) {
    const std::size_t d = u0fam.dim();
    const Box box = Box::centred(opt.window + buffer, d);
    const Box window = Box::centred(opt.window, d);
    const Domain domain{box, AllOnes{}};
    const ClockField clocks(opt.seed, d, r);
    const auto init = Configuration::bernoulli(box, opt.p_init, opt.seed, r);
    Simulator cp(ProcessKind::CP, u0fam, domain, init, opt.q0);
    OrangeTracker orange(box, norm2);
    orange.reset(init);
    const auto origin = static_cast<std::uint32_t>(box.index_of(LatticeVec(d)));
    std::vector<std::uint32_t> wsites;
    std::vector<std::uint8_t> in_window(box.size(), 0);
    for (std::size_t i = 0; i < window.size(); ++i) {
        const auto idx = static_cast<std::uint32_t>(box.index_of(window.site_at(i)));
        wsites.push_back(idx);
        in_window[idx] = 1;
    }
    WindowRecord rec;
    rec.origin_hits.assign(grid.size(), 0);
    if (record_window) rec.window_orange.assign(grid.size(), std::vector<std::uint8_t>(wsites.size(), 0));
    std::size_t g = 0;
    auto snapshot = [&](std::size_t k) {
        rec.origin_hits[k] = orange.contains(origin);
        if (record_window)
            for (std::size_t j = 0; j < wsites.size(); ++j) rec.window_orange[k][j] = orange.contains(wsites[j]);
    };
    const double horizon = grid.empty() ? 0 : grid.back();
    BlockStream stream(clocks, box);
    rec.stop_time = horizon;
    stream.for_each(0.0, horizon, [&](const BlockStream::Event& e) {
        while (g < grid.size() && grid[g] < e.time) snapshot(g++);
        if (orange.size() == 0) {
            rec.stop_time = e.time;
            return false;
        }
        if (cp.apply(e.site, e.mark) && record_window && in_window[e.site])
            rec.window_cp.emplace_back(e.time, box.site_at(e.site), cp.at(e.site));
        orange.update(e.site, cp.at(e.site) != 0);
        return true;
    });
    // After O is empty it stays empty, so the remaining grid entries are 0.
    if (orange.size() != 0)
        while (g < grid.size()) snapshot(g++);
    return rec;
}

bool same_window(const WindowRecord& a, const WindowRecord& b) {
    if (a.origin_hits != b.origin_hits || a.window_orange != b.window_orange) return false;
    const double tmax = std::min(a.stop_time, b.stop_time);
    auto cut = [tmax](const WindowRecord& w) {
        std::vector<std::tuple<double, LatticeVec, std::uint8_t>> v;
        for (const auto& e : w.window_cp)
            if (std::get<0>(e) <= tmax) v.push_back(e);
        return v;
    };
    return cut(a) == cut(b);
}

}  // namespace

SurvivalCurve survival_curve(const UpdateFamily& family, const SurvivalOptions& opt) {
    if (!(opt.q0 >= 0 && opt.q0 <= opt.q && opt.q <= 1))
        throw std::invalid_argument("survival_curve: need 0 <= q0 <= q <= 1");
    if (!(opt.p_init >= 0 && opt.p_init <= 1)) throw std::invalid_argument("survival_curve: p_init must lie in [0,1]");
    if (opt.window < 0 || opt.buffer < 1) throw std::invalid_argument("survival_curve: bad window or buffer");
    const auto oriented = find_oriented_rule(family);
    if (!oriented) throw std::invalid_argument("survival_curve: family is trivial subcritical");
    const UpdateFamily u0fam = single_rule_family(oriented->rule);
    const std::int64_t norm2 = family.norm2();
    SurvivalCurve curve;
    curve.times = opt.times.empty() ? geometric_grid(opt.t_min, opt.ratio, opt.horizon) : opt.times;
    if (!std::is_sorted(curve.times.begin(), curve.times.end()))
        throw std::invalid_argument("survival_curve: times must be sorted");

    int buffer = opt.buffer;
    curve.buffer_validated = !opt.validate_buffer;
    if (opt.validate_buffer) {
        const std::size_t v = std::min(opt.validation_replicas, opt.replicas);
        for (;;) {
            std::vector<std::uint8_t> ok(v, 0);
            parallel_for(v, opt.jobs, [&](std::size_t r) {
                const auto a = survival_replica(u0fam, norm2, opt, curve.times, buffer, r, true);
                const auto b = survival_replica(u0fam, norm2, opt, curve.times, 2 * buffer, r, true);
                ok[r] = same_window(a, b);
            });
            if (std::all_of(ok.begin(), ok.end(), [](auto x) { return x != 0; })) {
                curve.buffer_validated = true;
                break;
            }
            if (2 * buffer > opt.max_buffer) break;
            buffer *= 2;
        }
    }
    curve.buffer_used = buffer;
    curve.replicas = opt.replicas;
    curve.hits_by_replica.resize(opt.replicas);
    parallel_for(opt.replicas, opt.jobs, [&](std::size_t r) {
        curve.hits_by_replica[r] = survival_replica(u0fam, norm2, opt, curve.times, buffer, r, false).origin_hits;
    });
    curve.hits.assign(curve.times.size(), 0);
    for (const auto& h : curve.hits_by_replica)
        for (std::size_t k = 0; k < h.size(); ++k) curve.hits[k] += h[k];
    for (std::size_t k = 0; k < curve.times.size(); ++k) {
        const double n = static_cast<double>(opt.replicas);
        curve.p_hat.push_back(static_cast<double>(curve.hits[k]) / n);
        const auto [lo, hi] = wilson_interval(static_cast<double>(curve.hits[k]), n);
        curve.ci_lo.push_back(lo);
        curve.ci_hi.push_back(hi);
    }
    return curve;
}

// --------------------------------------------------------------------- fit

namespace {

struct Wls {
    double slope = 0, intercept = 0, r2 = 0;
    bool ok = false;
};

Wls weighted_line(const std::vector<double>& x, const std::vector<double>& y, const std::vector<double>& w) {
    Wls out;
    double sw = 0, sx = 0, sy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sw += w[i];
        sx += w[i] * x[i];
        sy += w[i] * y[i];
    }
    if (sw <= 0) return out;
    const double mx = sx / sw, my = sy / sw;
    double sxx = 0, sxy = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += w[i] * (x[i] - mx) * (x[i] - mx);
        sxy += w[i] * (x[i] - mx) * (y[i] - my);
        syy += w[i] * (y[i] - my) * (y[i] - my);
    }
    if (sxx <= 0) return out;
    out.slope = sxy / sxx;
    out.intercept = my - out.slope * mx;
    double ssr = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double r = y[i] - (out.intercept + out.slope * x[i]);
        ssr += w[i] * r * r;
    }
    out.r2 = syy > 0 ? 1 - ssr / syy : (ssr <= 1e-300 ? 1.0 : 0.0);
    out.ok = true;
    return out;
}

Wls fit_points(const std::vector<std::size_t>& idx, const std::vector<double>& x,
               const std::vector<double>& succ, const std::vector<double>& trials) {
    std::vector<double> xs, ys, ws;
    for (auto i : idx) {
        if (succ[i] <= 0 || trials[i] <= 0) continue;
        const double p = succ[i] / trials[i];
        xs.push_back(x[i]);
        ys.push_back(std::log(p));
        ws.push_back(trials[i] * p / std::max(1 - p, 1 / trials[i]));
    }
    if (xs.size() < 2) return {};
    return weighted_line(xs, ys, ws);
}

}  // namespace

ExpFit fit_exponential(const DecaySeries& s, const FitOptions& opt) {
    if (s.x.size() != s.successes.size() || s.x.size() != s.trials.size())
        throw std::invalid_argument("fit_exponential: series lengths differ");
    ExpFit fit;
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < s.x.size(); ++i)
        if (s.successes[i] >= opt.min_successes && s.trials[i] > 0) idx.push_back(i);
    fit.points_used = idx.size();
    if (idx.size() < opt.min_points) {
        fit.underpowered = true;
        fit.note = "underpowered: " + std::to_string(idx.size()) + " points with at least " +
                   std::to_string(static_cast<long long>(opt.min_successes)) + " successes";
        return fit;
    }
    const auto w = fit_points(idx, s.x, s.successes, s.trials);
    if (!w.ok) {
        fit.underpowered = true;
        fit.note = "degenerate abscissae";
        return fit;
    }
    fit.rate = -w.slope;
    fit.intercept = w.intercept;
    fit.r_squared = w.r2;
    double pmax = 0, pmin = 1;
    for (auto i : idx) {
        const double p = s.successes[i] / s.trials[i];
        pmax = std::max(pmax, p);
        pmin = std::min(pmin, p);
    }
    fit.decades = std::log10(pmax / pmin);

    std::vector<double> rates;
    KeyedRng rng(stream_key(opt.seed, 1, Stream::Bootstrap));
    std::vector<double> succ(s.x.size());
    for (std::size_t b = 0; b < opt.bootstrap; ++b) {
        if (!s.replica_hits.empty()) {
            std::fill(succ.begin(), succ.end(), 0.0);
            const auto m = static_cast<std::int64_t>(s.replica_hits.size());
            for (std::int64_t j = 0; j < m; ++j) {
                const auto& h = s.replica_hits[static_cast<std::size_t>(rng.integer(0, m - 1))];
                for (std::size_t i = 0; i < h.size() && i < succ.size(); ++i) succ[i] += h[i];
            }
        } else {
            for (auto i : idx) succ[i] = binomial_draw(rng, s.trials[i], s.successes[i] / s.trials[i]);
        }
        const auto wb = fit_points(idx, s.x, succ, s.trials);
        if (wb.ok) rates.push_back(-wb.slope);
    }
    if (!rates.empty()) {
        fit.rate_ci_lo = quantile_order_stat(rates, 0.025);
        fit.rate_ci_hi = quantile_order_stat(rates, 0.975);
    } else {
        fit.rate_ci_lo = fit.rate_ci_hi = fit.rate;
    }
    fit.decaying = fit.rate > 1e-9 && fit.rate_ci_lo > 0;
    if (!fit.decaying) fit.note = "non-decaying";
    return fit;
}

ExpFit fit_exponential(const SurvivalCurve& c, const FitOptions& opt) {
    DecaySeries s;
    s.x = c.times;
    for (auto h : c.hits) {
        s.successes.push_back(static_cast<double>(h));
        s.trials.push_back(static_cast<double>(c.replicas));
    }
    s.replica_hits = c.hits_by_replica;
    return fit_exponential(s, opt);
}

}  // namespace kcm
