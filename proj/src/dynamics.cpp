#include "kcmlab/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "kcmlab/rng.hpp"

namespace kcm {

std::string_view to_string(ProcessKind k) {
    switch (k) {
        case ProcessKind::KCM: return "KCM";
        case ProcessKind::CP: return "CP";
    }
    return "?";
}

Configuration Trajectory::state_at(double t) const {
    Configuration c = initial;
    for (const auto& e : events) {
        if (e.time > t) break;
        c[e.site] = e.value;
    }
    return c;
}

// ------------------------------------------------------------ PaddedLattice

namespace {

Box grow(const Box& b, int pad) {
    LatticeVec lo = b.lower(), hi = b.upper();
    for (std::size_t i = 0; i < b.dim(); ++i) {
        lo[i] -= pad;
        hi[i] += pad;
    }
    return Box(lo, hi);
}

}  // namespace

PaddedLattice::PaddedLattice(const Domain& domain, int pad, std::int64_t boundary_range2)
    : box_(domain.box), padded_(grow(domain.box, std::max(pad, 1))), pad_(std::max(pad, 1)) {
    cell_of_.resize(box_.size());
    for (std::size_t i = 0; i < box_.size(); ++i) cell_of_[i] = static_cast<std::uint32_t>(padded_.index_of(box_.site_at(i)));
    boundary_.assign(padded_.size(), 0);
    const bool ones = std::holds_alternative<AllOnes>(domain.boundary);
    const bool explicit_b = std::holds_alternative<ExplicitBoundary>(domain.boundary);
    for (std::size_t c = 0; c < padded_.size(); ++c) {
        const auto x = padded_.site_at(c);
        if (box_.contains(x)) continue;
        if (ones) {
            boundary_[c] = 1;
        } else if (explicit_b) {
            const auto& m = std::get<ExplicitBoundary>(domain.boundary).values;
            auto it = m.find(x);
            if (it != m.end())
                boundary_[c] = it->second ? 1 : 0;
            else if (box_.dist2_to(x) <= boundary_range2)
                throw std::invalid_argument("explicit boundary misses exterior site " + x.str());
        }
    }
}

std::ptrdiff_t PaddedLattice::delta(const LatticeVec& y) const {
    std::ptrdiff_t d = 0;
    for (std::size_t i = 0; i < y.dim(); ++i) {
        if (std::abs(y[i]) > pad_) throw std::invalid_argument("offset exceeds lattice padding");
        d = d * padded_.extent(i) + y[i];
    }
    return d;
}

std::vector<std::uint8_t> PaddedLattice::state(const Configuration& c) const {
    if (!(c.box() == box_)) throw std::invalid_argument("configuration box does not match the domain");
    std::vector<std::uint8_t> s = boundary_;
    for (std::size_t i = 0; i < box_.size(); ++i) s[cell_of_[i]] = c[i];
    return s;
}

std::vector<std::uint8_t> PaddedLattice::inside_mask() const {
    std::vector<std::uint8_t> m(padded_.size(), 0);
    for (auto c : cell_of_) m[c] = 1;
    return m;
}

CompiledFamily::CompiledFamily(const UpdateFamily& family, const PaddedLattice& lat) {
    for (const auto& r : family.rules()) {
        std::vector<std::ptrdiff_t> ds;
        for (const auto& y : r.offsets()) ds.push_back(lat.delta(y));
        rules_.push_back(std::move(ds));
    }
}

// ---------------------------------------------------------------- Simulator

Simulator::Simulator(ProcessKind kind, const UpdateFamily& family, const Domain& domain,
                     const Configuration& init, double q)
    : kind_(kind), q_(q), lat_(domain, family.reach(), family.norm2()), rules_(family, lat_),
      state_(lat_.state(init)) {
    if (!(q >= 0 && q <= 1)) throw std::invalid_argument("q must lie in [0,1]");
    if (family.dim() != domain.box.dim()) throw std::invalid_argument("family/domain dimension mismatch");
    ones_ = static_cast<std::int64_t>(init.count_ones());
}

Configuration Simulator::configuration() const {
    std::vector<std::uint8_t> bits(lat_.box().size());
    for (std::size_t i = 0; i < bits.size(); ++i) bits[i] = state_[lat_.cell(i)];
    return Configuration(lat_.box(), std::move(bits));
}

Trajectory run_process(ProcessKind kind, const UpdateFamily& family, const Domain& domain,
                       const Configuration& init, double q, double horizon,
                       const ClockField& clocks, const std::vector<double>& frame_times) {
    if (!(horizon >= 0)) throw std::invalid_argument("horizon must be non-negative");
    if (clocks.dim() != domain.box.dim()) throw std::invalid_argument("clock field dimension mismatch");
    domain.validate_boundary(family.norm2());
    Simulator sim(kind, family, domain, init, q);
    Trajectory tr{kind, family, domain, q, horizon, clocks, init, {}, {}};
    std::vector<double> ft = frame_times;
    std::sort(ft.begin(), ft.end());
    std::size_t next_frame = 0;
    BlockStream stream(clocks, domain.box);
    stream.for_each(0.0, horizon, [&](const BlockStream::Event& e) {
        while (next_frame < ft.size() && ft[next_frame] < e.time)
            tr.frames.push_back({ft[next_frame++], sim.configuration()});
        if (sim.apply(e.site, e.mark)) tr.events.push_back({e.time, e.site, sim.at(e.site)});
        return true;
    });
    while (next_frame < ft.size()) tr.frames.push_back({ft[next_frame++], sim.configuration()});
    return tr;
}

Trajectory run_kcm(const UpdateFamily& family, const Domain& domain, const Configuration& init,
                   double q, double horizon, const ClockField& clocks,
                   const std::vector<double>& frame_times) {
    return run_process(ProcessKind::KCM, family, domain, init, q, horizon, clocks, frame_times);
}

Trajectory run_cp(const UpdateFamily& family, const Domain& domain, const Configuration& init,
                  double q, double horizon, const ClockField& clocks,
                  const std::vector<double>& frame_times) {
    return run_process(ProcessKind::CP, family, domain, init, q, horizon, clocks, frame_times);
}

// ----------------------------------------------------------------------- BP

bool consistent_with_clocks(const Trajectory& t) {
    const Trajectory r = run_process(t.kind, t.family, t.domain, t.initial, t.q, t.horizon, t.clocks);
    return r.events == t.events;
}

DiscreteTrajectory run_bp(const UpdateFamily& family, const Configuration& init, std::size_t steps,
                          const Domain& domain) {
    if (!(init.box() == domain.box)) throw std::invalid_argument("run_bp: init box does not match the domain");
    domain.validate_boundary(family.norm2());
    PaddedLattice lat(domain, family.reach(), family.norm2());
    CompiledFamily rules(family, lat);
    auto cur = lat.state(init);
    DiscreteTrajectory out;
    out.frames.push_back(init);
    std::vector<std::uint8_t> next;
    for (std::size_t t = 0; t < steps; ++t) {
        next = cur;
        bool changed = false;
        for (std::size_t i = 0; i < init.size(); ++i) {
            const auto c = lat.cell(i);
            if (!cur[c] && rules.satisfied(cur.data(), c)) {
                next[c] = 1;
                changed = true;
            }
        }
        cur.swap(next);
        if (changed) {
            std::vector<std::uint8_t> bits(init.size());
            for (std::size_t i = 0; i < bits.size(); ++i) bits[i] = cur[lat.cell(i)];
            out.frames.emplace_back(domain.box, std::move(bits));
        } else {
            out.frames.push_back(out.frames.back());
        }
    }
    return out;
}

Configuration bp_closure(const UpdateFamily& family, const Configuration& init, const Domain& domain) {
    if (!(init.box() == domain.box)) throw std::invalid_argument("bp_closure: init box does not match the domain");
    domain.validate_boundary(family.norm2());
    PaddedLattice lat(domain, family.reach(), family.norm2());
    CompiledFamily rules(family, lat);
    auto st = lat.state(init);
    const auto inside = lat.inside_mask();
    // Reverse dependencies: a newly infected cell can only enable cells at -y.
    std::vector<std::ptrdiff_t> back;
    for (const auto& r : family.rules())
        for (const auto& y : r.offsets()) back.push_back(-lat.delta(y));
    std::sort(back.begin(), back.end());
    back.erase(std::unique(back.begin(), back.end()), back.end());
    std::vector<std::uint32_t> work;
    for (std::size_t i = 0; i < init.size(); ++i) {
        const auto c = lat.cell(i);
        if (!st[c] && rules.satisfied(st.data(), c)) {
            st[c] = 1;
            work.push_back(c);
        }
    }
    while (!work.empty()) {
        const auto c = work.back();
        work.pop_back();
        for (auto d : back) {
            const auto n = static_cast<std::uint32_t>(static_cast<std::ptrdiff_t>(c) + d);
            if (inside[n] && !st[n] && rules.satisfied(st.data(), n)) {
                st[n] = 1;
                work.push_back(n);
            }
        }
    }
    std::vector<std::uint8_t> bits(init.size());
    for (std::size_t i = 0; i < bits.size(); ++i) bits[i] = st[lat.cell(i)];
    return Configuration(domain.box, std::move(bits));
}

// ------------------------------------------------------------ CA with death

LocalMap LocalMap::from_function(std::vector<LatticeVec> support,
                                 const std::function<bool(std::span<const std::uint8_t>)>& f) {
    if (support.size() > 20) throw std::invalid_argument("LocalMap: support too large");
    LocalMap m{std::move(support), {}};
    const std::size_t k = m.support.size();
    m.table.resize(std::size_t{1} << k);
    std::vector<std::uint8_t> v(k);
    for (std::size_t idx = 0; idx < m.table.size(); ++idx) {
        for (std::size_t j = 0; j < k; ++j) v[j] = (idx >> j) & 1U;
        m.table[idx] = f(v) ? 1 : 0;
    }
    return m;
}

LocalMap LocalMap::from_bp(const UpdateFamily& family) {
    std::vector<LatticeVec> support{LatticeVec(family.dim())};
    for (const auto& r : family.rules())
        for (const auto& y : r.offsets())
            if (std::find(support.begin(), support.end(), y) == support.end()) support.push_back(y);
    std::vector<std::vector<std::size_t>> rule_idx;
    for (const auto& r : family.rules()) {
        std::vector<std::size_t> ids;
        for (const auto& y : r.offsets())
            ids.push_back(static_cast<std::size_t>(std::find(support.begin(), support.end(), y) - support.begin()));
        rule_idx.push_back(std::move(ids));
    }
    return from_function(support, [&](std::span<const std::uint8_t> v) {
        if (v[0]) return true;
        for (const auto& ids : rule_idx) {
            bool all = true;
            for (auto j : ids) all = all && v[j];
            if (all) return true;
        }
        return false;
    });
}

bool LocalMap::attractive() const {
    for (std::size_t idx = 0; idx < table.size(); ++idx)
        for (std::size_t j = 0; j < support.size(); ++j)
            if (!(idx >> j & 1U) && table[idx] > table[idx | (std::size_t{1} << j)]) return false;
    return true;
}

DiscreteTrajectory run_ca_death(const LocalMap& map, double delta, const Configuration& init,
                                std::size_t steps, std::uint64_t seed, Topology topology,
                                const Boundary& boundary, std::uint64_t replica) {
    if (!(delta >= 0 && delta <= 1)) throw std::invalid_argument("delta must lie in [0,1]");
    if (map.table.size() != (std::size_t{1} << map.support.size()))
        throw std::invalid_argument("LocalMap: table size does not match the support");
    const Box& box = init.box();
    const std::size_t n = box.size();
    const std::size_t k = map.support.size();
    const std::size_t d = box.dim();
    // Neighbour index per site and support element; n means boundary.
    std::vector<std::uint32_t> nb(n * k);
    std::vector<std::uint8_t> bvals(k * n, 0);
    const Domain dom{box, boundary};
    for (std::size_t i = 0; i < n; ++i) {
        const auto x = box.site_at(i);
        for (std::size_t j = 0; j < k; ++j) {
            LatticeVec z = x + map.support[j];
            if (topology == Topology::Torus) {
                for (std::size_t a = 0; a < d; ++a) {
                    const int e = box.extent(a);
                    z[a] = box.lower()[a] + ((z[a] - box.lower()[a]) % e + e) % e;
                }
                nb[i * k + j] = static_cast<std::uint32_t>(box.index_of(z));
            } else if (box.contains(z)) {
                nb[i * k + j] = static_cast<std::uint32_t>(box.index_of(z));
            } else {
                nb[i * k + j] = static_cast<std::uint32_t>(n);
                bvals[i * k + j] = dom.boundary_value(z) ? 1 : 0;
            }
        }
    }
    std::vector<std::uint64_t> site_keys(n);
    const auto key = stream_key(seed, replica, Stream::Death);
    for (std::size_t i = 0; i < n; ++i) site_keys[i] = fold_coords(key, box.site_at(i).coords());

    DiscreteTrajectory out;
    out.frames.reserve(steps + 1);
    out.frames.push_back(init);
    std::vector<std::uint8_t> cur = init.bits(), next(n);
    for (std::size_t t = 1; t <= steps; ++t) {
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t idx = 0;
            for (std::size_t j = 0; j < k; ++j) {
                const auto m = nb[i * k + j];
                const std::uint8_t v = m == n ? bvals[i * k + j] : cur[m];
                idx |= static_cast<std::size_t>(v) << j;
            }
            std::uint8_t val = map.table[idx];
            if (val && delta > 0 && to_open_unit(fold(site_keys[i], t)) < delta) val = 0;
            next[i] = val;
        }
        cur.swap(next);
        out.frames.emplace_back(box, cur);
    }
    return out;
}

// ---------------------------------------------------------------------- LPP

double PassageField::max() const {
    double m = 0;
    for (double t : times) m = std::max(m, t);
    return m;
}

UpdateRule standard_lpp_rule(std::size_t d) {
    std::vector<LatticeVec> offs;
    for (std::size_t i = 0; i < d; ++i) {
        LatticeVec e(d);
        e[i] = -1;
        offs.push_back(e);
    }
    return UpdateRule(std::move(offs));
}

PassageField lpp_times(const UpdateRule& rule, const Box& box, const WeightSource& weights) {
    if (rule.dim() != box.dim()) throw std::invalid_argument("lpp_times: dimension mismatch");
    const auto u = separating_direction(rule);
    if (!u) throw std::invalid_argument("lpp_times: rule is not contained in an open half-space");
    const std::size_t n = box.size();
    std::vector<LatticeVec> sites(n);
    std::vector<std::int64_t> proj(n);
    for (std::size_t i = 0; i < n; ++i) {
        sites[i] = box.site_at(i);
        proj[i] = dot(sites[i], u->numerators());
    }
    std::vector<std::uint32_t> order(n);
    std::iota(order.begin(), order.end(), 0U);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return proj[a] < proj[b]; });
    PassageField f{box, std::vector<double>(n, 0.0)};
    for (auto i : order) {
        double pred = 0;
        for (const auto& y : rule.offsets()) {
            const auto z = sites[i] + y;
            if (box.contains(z)) pred = std::max(pred, f.times[box.index_of(z)]);
        }
        if (const auto* ew = std::get_if<ExponentialWeights>(&weights)) {
            const auto key = stream_key(ew->seed, ew->replica, Stream::Weights);
            f.times[i] = pred - std::log(to_open_unit(fold_coords(key, sites[i].coords())));
        } else {
            const auto& cw = std::get<ClockWeights>(weights);
            f.times[i] = cw.clocks.first_event_after(sites[i], pred).time;
        }
    }
    return f;
}

// --------------------------------------------------------- monotone sets

bool is_monotone_set(const Box& cube, const std::vector<std::uint8_t>& member) {
    for (std::size_t i = 0; i < cube.size(); ++i) {
        if (!member[i]) continue;
        auto x = cube.site_at(i);
        for (std::size_t a = 0; a < cube.dim(); ++a) {
            if (x[a] == cube.lower()[a]) continue;
            x[a] -= 1;
            const bool ok = member[cube.index_of(x)] != 0;
            x[a] += 1;
            if (!ok) return false;
        }
    }
    return true;
}

MonotoneSetRun run_monotone_set_chain(int ell, int d, const ClockField& clocks) {
    if (ell < 1) throw std::invalid_argument("run_monotone_set_chain: ell must be >= 1");
    if (d < 1) throw std::invalid_argument("run_monotone_set_chain: d must be >= 1");
    const Box cube = Box::cube(ell, static_cast<std::size_t>(d));
    MonotoneSetRun run{cube, {}, 0};
    const std::size_t n = cube.size();
    std::vector<std::uint8_t> member(n, 0);
    std::vector<std::ptrdiff_t> stride(static_cast<std::size_t>(d));
    {
        std::ptrdiff_t s = 1;
        for (int a = d - 1; a >= 0; --a) {
            stride[static_cast<std::size_t>(a)] = s;
            s *= ell;
        }
    }
    std::size_t count = 0;
    BlockStream stream(clocks, cube);
    for (std::int64_t m = 0; count < n; ++m) {
        for (const auto& e : stream.block(m)) {
            if (member[e.site]) continue;
            bool ok = true;
            std::size_t rem = e.site;
            for (int a = 0; a < d && ok; ++a) {
                const auto st = static_cast<std::size_t>(stride[static_cast<std::size_t>(a)]);
                const std::size_t coord = (rem / st) % static_cast<std::size_t>(ell);
                if (coord > 0 && !member[e.site - st]) ok = false;
            }
            if (!ok) continue;
            member[e.site] = 1;
            run.additions.emplace_back(e.time, e.site);
            if (++count == n) {
                run.absorbed_time = e.time;
                break;
            }
        }
    }
    return run;
}

}  // namespace kcm
