#include "kcmlab/cluster.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>
#include <optional>
#include <set>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "kcmlab/parallel.hpp"
#include "kcmlab/rng.hpp"
#include "kcmlab/stats.hpp"

namespace kcm {

namespace {

std::int64_t isqrt_floor(std::int64_t v) {
    if (v <= 0) return 0;
    auto r = static_cast<std::int64_t>(std::sqrt(static_cast<double>(v)));
    while (r * r > v) --r;
    while ((r + 1) * (r + 1) <= v) ++r;
    return r;
}

bool contains(const PointSet& s, const LatticeVec& x) { return std::binary_search(s.begin(), s.end(), x); }

/// Squared diameter of points stored flat (n points of dimension dd). Only
/// points extreme along every axis-parallel line can be vertices of the
/// convex hull, so the pairwise scan runs over those.
template <class T>
double flat_diameter2(const std::vector<T>& c, std::size_t dd) {
    const std::size_t n = dd ? c.size() / dd : 0;
    if (n <= 1) return 0;
    std::vector<std::uint8_t> keep(n, 1);
    if (n > 64) {
        std::vector<std::size_t> idx(n);
        for (std::size_t a = 0; a < dd; ++a) {
            std::iota(idx.begin(), idx.end(), 0);
            auto less = [&](std::size_t i, std::size_t j) {
                for (std::size_t b = 0; b < dd; ++b) {
                    if (b == a) continue;
                    if (c[i * dd + b] != c[j * dd + b]) return c[i * dd + b] < c[j * dd + b];
                }
                return c[i * dd + a] < c[j * dd + a];
            };
            auto same_line = [&](std::size_t i, std::size_t j) {
                for (std::size_t b = 0; b < dd; ++b)
                    if (b != a && c[i * dd + b] != c[j * dd + b]) return false;
                return true;
            };
            std::sort(idx.begin(), idx.end(), less);
            std::size_t s = 0;
            while (s < n) {
                std::size_t e = s + 1;
                while (e < n && same_line(idx[s], idx[e])) ++e;
                for (std::size_t m = s + 1; m + 1 < e; ++m) keep[idx[m]] = 0;
                s = e;
            }
        }
    }
    std::vector<std::size_t> cand;
    for (std::size_t i = 0; i < n; ++i)
        if (keep[i]) cand.push_back(i);
    double best = 0;
    for (std::size_t x = 0; x < cand.size(); ++x)
        for (std::size_t y = x + 1; y < cand.size(); ++y) {
            double s = 0;
            for (std::size_t b = 0; b < dd; ++b) {
                const double dlt = static_cast<double>(c[cand[x] * dd + b]) - static_cast<double>(c[cand[y] * dd + b]);
                s += dlt * dlt;
            }
            best = std::max(best, s);
        }
    return best;
}

std::vector<int> flatten(const PointSet& s) {
    std::vector<int> c;
    for (const auto& p : s)
        for (std::size_t i = 0; i < p.dim(); ++i) c.push_back(p[i]);
    return c;
}

/// Whether some point of a lies within sqrt(k2) of some point of b.
bool within_k(const PointSet& a, const PointSet& b, const std::vector<LatticeVec>& ball) {
    const PointSet& small = a.size() <= b.size() ? a : b;
    const PointSet& big = a.size() <= b.size() ? b : a;
    for (const auto& x : small) {
        if (contains(big, x)) return true;
        for (const auto& o : ball)
            if (contains(big, x + o)) return true;
    }
    return false;
}

bool intersects(const PointSet& a, const PointSet& b) {
    auto i = a.begin();
    auto j = b.begin();
    while (i != a.end() && j != b.end()) {
        if (*i < *j) ++i;
        else if (*j < *i) ++j;
        else return true;
    }
    return false;
}

}  // namespace

// --------------------------------------------------------------- components

std::int64_t k_squared(double k) {
    if (!(k > 0)) throw std::invalid_argument("k must be positive");
    return static_cast<std::int64_t>(std::floor(k * k + 1e-9));
}

std::vector<LatticeVec> ball_offsets(std::size_t dim, std::int64_t k2) {
    const int r = static_cast<int>(isqrt_floor(k2));
    std::vector<LatticeVec> out;
    const Box b = Box::centred(r, dim);
    for (std::size_t i = 0; i < b.size(); ++i) {
        auto v = b.site_at(i);
        if (!v.is_zero() && v.norm2() <= k2) out.push_back(std::move(v));
    }
    return out;
}

PointSet make_point_set(std::vector<LatticeVec> points) {
    std::sort(points.begin(), points.end());
    points.erase(std::unique(points.begin(), points.end()), points.end());
    return points;
}

PointSet k_component(const PointSet& cloud, const LatticeVec& seed, double k) {
    auto it = std::lower_bound(cloud.begin(), cloud.end(), seed);
    if (it == cloud.end() || !(*it == seed)) throw std::invalid_argument("k_component: seed is not in the cloud");
    const auto ball = ball_offsets(seed.dim(), k_squared(k));
    std::vector<std::uint8_t> seen(cloud.size(), 0);
    std::deque<std::size_t> q{static_cast<std::size_t>(it - cloud.begin())};
    seen[q.front()] = 1;
    PointSet out;
    while (!q.empty()) {
        const auto i = q.front();
        q.pop_front();
        out.push_back(cloud[i]);
        for (const auto& o : ball) {
            const auto y = cloud[i] + o;
            auto jt = std::lower_bound(cloud.begin(), cloud.end(), y);
            if (jt != cloud.end() && *jt == y) {
                const auto j = static_cast<std::size_t>(jt - cloud.begin());
                if (!seen[j]) {
                    seen[j] = 1;
                    q.push_back(j);
                }
            }
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<PointSet> k_components(const PointSet& cloud, double k) {
    std::vector<PointSet> out;
    std::vector<std::uint8_t> done(cloud.size(), 0);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        if (done[i]) continue;
        auto c = k_component(cloud, cloud[i], k);
        for (const auto& p : c) done[static_cast<std::size_t>(std::lower_bound(cloud.begin(), cloud.end(), p) - cloud.begin())] = 1;
        out.push_back(std::move(c));
    }
    return out;
}

bool is_k_connected(const PointSet& set, double k) {
    if (set.size() <= 1) return true;
    return k_component(set, set.front(), k).size() == set.size();
}

std::int64_t diameter2(const PointSet& set) {
    if (set.empty()) throw std::invalid_argument("diameter of an empty set");
    return std::llround(flat_diameter2(flatten(set), set.front().dim()));
}

double diameter(const PointSet& set) { return std::sqrt(static_cast<double>(diameter2(set))); }

std::int64_t set_distance2(const PointSet& a, const PointSet& b) {
    if (a.empty() || b.empty()) throw std::invalid_argument("distance to an empty set");
    std::int64_t best = std::numeric_limits<std::int64_t>::max();
    for (const auto& x : a)
        for (const auto& y : b) best = std::min(best, dist2(x, y));
    return best;
}

bool in_regularized(const LatticeVec& x, const PointSet& z, std::int64_t diam2) {
    std::int64_t m = std::numeric_limits<std::int64_t>::max();
    for (const auto& y : z) m = std::min(m, dist2(x, y));
    // sqrt(m) <= 3 (1 + sqrt(D))  <=>  m - 9 - 9D <= 18 sqrt(D)
    const __int128 c = static_cast<__int128>(m) - 9 - 9 * static_cast<__int128>(diam2);
    return c <= 0 || c * c <= 324 * static_cast<__int128>(diam2);
}

PointSet regularize(const PointSet& z) {
    if (z.empty()) throw std::invalid_argument("regularize: empty set");
    const std::int64_t d2 = diameter2(z);
    const int r = static_cast<int>(std::floor(3.0 * (1.0 + std::sqrt(static_cast<double>(d2))))) + 1;
    const std::size_t dim = z.front().dim();
    LatticeVec lo = z.front(), hi = z.front();
    for (const auto& p : z)
        for (std::size_t i = 0; i < dim; ++i) {
            lo[i] = std::min(lo[i], p[i]);
            hi[i] = std::max(hi[i], p[i]);
        }
    for (std::size_t i = 0; i < dim; ++i) {
        lo[i] -= r;
        hi[i] += r;
    }
    const Box bb(lo, hi);
    PointSet out;
    for (std::size_t i = 0; i < bb.size(); ++i) {
        auto x = bb.site_at(i);
        if (in_regularized(x, z, d2)) out.push_back(std::move(x));
    }
    return out;
}

// -------------------------------------------------------- chain extraction

namespace {

struct RegCache {
    const std::vector<DecoratedSet>* sets;
    std::vector<std::optional<PointSet>> bars;
    const PointSet& bar(std::size_t j) {
        if (!bars[j]) bars[j] = regularize((*sets)[j].z);
        return *bars[j];
    }
};

}  // namespace

ChainClaims check_chain_claims(const std::vector<LatticeVec>& path, const std::vector<DecoratedSet>& sets,
                               double k, const std::vector<ChainStep>& steps, bool every_step) {
    ChainClaims c;
    const std::size_t n = path.size();
    RegCache cache{&sets, std::vector<std::optional<PointSet>>(n)};
    const auto ball = ball_offsets(path.front().dim(), k_squared(k));
    auto fail = [&c](bool& flag, const std::string& msg) {
        flag = false;
        c.failures.push_back(msg);
    };
    auto covered = [&](const std::vector<std::size_t>& members) {
        std::vector<std::uint8_t> cov(n, 0);
        for (std::size_t j = 0; j < n; ++j)
            for (auto a : members)
                if (contains(cache.bar(a), path[j])) {
                    cov[j] = 1;
                    break;
                }
        return cov;
    };
    std::vector<std::vector<std::uint8_t>> edge(n, std::vector<std::uint8_t>(n, 2));
    auto near = [&](std::size_t a, std::size_t b) {
        if (edge[a][b] == 2) edge[a][b] = edge[b][a] = within_k(cache.bar(a), cache.bar(b), ball);
        return edge[a][b] != 0;
    };
    std::vector<std::uint8_t> bar_connected(n, 2);
    auto connected = [&](const std::vector<std::size_t>& members) {
        for (auto a : members) {
            if (bar_connected[a] == 2) bar_connected[a] = is_k_connected(cache.bar(a), k);
            if (!bar_connected[a]) return false;
        }
        std::vector<std::uint8_t> seen(members.size(), 0);
        std::deque<std::size_t> q{0};
        seen[0] = 1;
        std::size_t count = 1;
        while (!q.empty()) {
            const auto i = q.front();
            q.pop_front();
            for (std::size_t j = 0; j < members.size(); ++j)
                if (!seen[j] && near(members[i], members[j])) {
                    seen[j] = 1;
                    ++count;
                    q.push_back(j);
                }
        }
        return count == members.size();
    };

    if (steps.empty()) {
        fail(c.terminates, "no steps recorded");
        return c;
    }
    if (steps.size() - 1 > n) fail(c.terminates, "more iterations than path points");
    std::vector<std::uint8_t> prev;
    for (std::size_t t = 0; t < steps.size(); ++t) {
        const auto& st = steps[t];
        const auto cov = covered(st.members);
        if (cov != st.covered) c.failures.push_back("step " + std::to_string(t) + ": recorded coverage differs");
        for (std::size_t a = 0; a < st.members.size(); ++a)
            for (std::size_t b = a + 1; b < st.members.size(); ++b)
                if (intersects(sets[st.members[a]].z, sets[st.members[b]].z))
                    fail(c.disjoint, "step " + std::to_string(t) + ": Z_" + std::to_string(st.members[a]) +
                                         " meets Z_" + std::to_string(st.members[b]));
        if ((every_step || t + 1 == steps.size()) && !connected(st.members))
            fail(c.connected, "step " + std::to_string(t) + ": X_t is not k-connected");
        if (t > 0) {
            for (std::size_t j = 0; j < n; ++j)
                if (prev[j] && !cov[j]) {
                    fail(c.monotone, "step " + std::to_string(t) + ": p_" + std::to_string(j) + " left X_t");
                    break;
                }
            if (!cov[st.i] || prev[st.i])
                fail(c.strict_progress, "step " + std::to_string(t) + ": p_{i_t} not newly covered");
            for (auto j : st.j_removed) {
                const auto& big = cache.bar(st.i);
                for (const auto& x : cache.bar(j))
                    if (!contains(big, x)) {
                        fail(c.nesting, "step " + std::to_string(t) + ": bar Z_" + std::to_string(j) +
                                            " not inside bar Z_" + std::to_string(st.i));
                        break;
                    }
            }
        }
        prev = cov;
    }
    if (std::find(prev.begin(), prev.end(), 0) != prev.end()) fail(c.covers, "P is not covered at termination");
    return c;
}

ChainExtraction extract_chain(const std::vector<LatticeVec>& path, const std::vector<DecoratedSet>& sets,
                              double k, const ExtractOptions& opt) {
    if (path.empty()) throw std::invalid_argument("extract_chain: empty path");
    if (sets.size() != path.size()) throw std::invalid_argument("extract_chain: need one decorated set per path point");
    if (k < 1) throw std::invalid_argument("extract_chain: k must be >= 1");
    const std::size_t n = path.size();
    const std::size_t dim = path.front().dim();
    const std::int64_t k2 = k_squared(k);
    for (std::size_t j = 0; j < n; ++j) {
        if (path[j].dim() != dim) throw std::invalid_argument("extract_chain: mixed dimensions");
        if (sets[j].z.empty()) throw std::invalid_argument("extract_chain: empty decorated set at " + std::to_string(j));
        if (!std::is_sorted(sets[j].z.begin(), sets[j].z.end()))
            throw std::invalid_argument("extract_chain: decorated set " + std::to_string(j) + " is not sorted");
        if (!contains(sets[j].z, path[j]))
            throw std::invalid_argument("extract_chain: Z_p does not contain p at " + std::to_string(j));
        if (j > 0 && dist2(path[j - 1], path[j]) > k2)
            throw std::invalid_argument("extract_chain: path is not k-connected at " + std::to_string(j));
    }
    std::vector<std::int64_t> d2(n);
    for (std::size_t j = 0; j < n; ++j) d2[j] = diameter2(sets[j].z);
    std::vector<std::vector<std::int8_t>> cov_memo(n, std::vector<std::int8_t>(n, -1));
    auto cov = [&](std::size_t a, std::size_t j) {
        auto& m = cov_memo[a][j];
        if (m < 0) m = in_regularized(path[j], sets[a].z, d2[a]) ? 1 : 0;
        return m == 1;
    };
    auto covered = [&](const std::vector<std::size_t>& members) {
        std::vector<std::uint8_t> c(n, 0);
        for (std::size_t j = 0; j < n; ++j)
            for (auto a : members)
                if (cov(a, j)) {
                    c[j] = 1;
                    break;
                }
        return c;
    };

    ChainExtraction ex;
    std::vector<std::size_t> members{0};
    ex.steps.push_back({0, {}, members, covered(members)});
    while (std::find(ex.steps.back().covered.begin(), ex.steps.back().covered.end(), 0) !=
           ex.steps.back().covered.end()) {
        if (ex.steps.size() > n + 1) break;
        const auto& c = ex.steps.back().covered;
        const std::size_t i = static_cast<std::size_t>(std::find(c.begin(), c.end(), 0) - c.begin());
        std::vector<std::size_t> removed, next{i};
        for (auto a : members) {
            if (intersects(sets[a].z, sets[i].z)) removed.push_back(a);
            else next.push_back(a);
        }
        std::sort(next.begin(), next.end());
        members = next;
        ex.steps.push_back({i, removed, members, covered(members)});
    }
    ex.claims = check_chain_claims(path, sets, k, ex.steps, opt.check_every_step);
    ex.final_members = members;
    if (!ex.claims.covers || !ex.claims.connected)
        throw std::logic_error("extract_chain: algorithm claims failed: " +
                               (ex.claims.failures.empty() ? std::string("?") : ex.claims.failures.front()));

    // Shortest sequence of members with consecutive bars within k, from a
    // bar containing x to a bar containing y.
    RegCache cache{&sets, std::vector<std::optional<PointSet>>(n)};
    const auto ball = ball_offsets(dim, k2);
    const std::size_t m = members.size();
    std::vector<std::ptrdiff_t> parent(m, -2);
    std::deque<std::size_t> q;
    for (std::size_t a = 0; a < m; ++a)
        if (cov(members[a], 0)) {
            parent[a] = -1;
            q.push_back(a);
        }
    std::ptrdiff_t end = -1;
    while (!q.empty()) {
        const auto a = q.front();
        q.pop_front();
        if (cov(members[a], n - 1)) {
            end = static_cast<std::ptrdiff_t>(a);
            break;
        }
        for (std::size_t b = 0; b < m; ++b)
            if (parent[b] == -2 && within_k(cache.bar(members[a]), cache.bar(members[b]), ball)) {
                parent[b] = static_cast<std::ptrdiff_t>(a);
                q.push_back(b);
            }
    }
    if (end < 0) throw std::logic_error("extract_chain: no chain through the final sets");
    for (auto a = end; a >= 0; a = parent[static_cast<std::size_t>(a)]) ex.order.push_back(members[static_cast<std::size_t>(a)]);
    std::reverse(ex.order.begin(), ex.order.end());
    ex.chain.anchor = path.front();
    ex.chain.target = path.back();
    for (auto j : ex.order) ex.chain.sets.push_back(sets[j]);
    return ex;
}

bool verify_chain(const Chain& chain, const LatticeVec& x, double n, double k) {
    if (chain.sets.empty()) return false;
    for (const auto& s : chain.sets)
        if (s.z.empty() || !std::is_sorted(s.z.begin(), s.z.end())) return false;
    for (std::size_t a = 0; a < chain.sets.size(); ++a)
        for (std::size_t b = a + 1; b < chain.sets.size(); ++b)
            if (intersects(chain.sets[a].z, chain.sets[b].z)) return false;
    std::vector<PointSet> bars;
    for (const auto& s : chain.sets) bars.push_back(regularize(s.z));
    const auto ball = ball_offsets(x.dim(), k_squared(k));
    for (std::size_t j = 0; j + 1 < bars.size(); ++j)
        if (!within_k(bars[j], bars[j + 1], ball)) return false;
    if (!contains(bars.front(), x)) return false;
    std::int64_t far = 0;
    for (const auto& y : bars.back()) far = std::max(far, dist2(x, y));
    return n <= 0 || static_cast<double>(far) >= n * n - 1e-9;
}

nlohmann::json chain_to_json(const Chain& c) {
    auto vec = [](const LatticeVec& v) { return std::vector<int>(v.coords().begin(), v.coords().end()); };
    nlohmann::json j;
    j["anchor"] = vec(c.anchor);
    j["target"] = vec(c.target);
    j["sets"] = nlohmann::json::array();
    for (const auto& s : c.sets) {
        nlohmann::json z = nlohmann::json::array();
        for (const auto& p : s.z) z.push_back(vec(p));
        j["sets"].push_back({{"z", z}, {"gamma", s.gamma}});
    }
    return j;
}

Chain chain_from_json(const nlohmann::json& j) {
    Chain c;
    c.anchor = LatticeVec(j.at("anchor").get<std::vector<int>>());
    c.target = LatticeVec(j.at("target").get<std::vector<int>>());
    for (const auto& s : j.at("sets")) {
        std::vector<LatticeVec> pts;
        for (const auto& p : s.at("z")) pts.emplace_back(p.get<std::vector<int>>());
        c.sets.push_back({make_point_set(std::move(pts)), s.at("gamma").get<std::string>()});
    }
    return c;
}

ChainInstance random_chain_instance(std::uint64_t seed, std::size_t dim, double k, std::size_t max_path,
                                    std::size_t max_set) {
    if (dim == 0 || max_path == 0 || max_set == 0 || k < 1)
        throw std::invalid_argument("random_chain_instance: need dim, max_path, max_set >= 1 and k >= 1");
    KeyedRng rng(fold(stream_key(seed, 0, Stream::Instance), 0x636861696eULL));
    const auto steps = ball_offsets(dim, k_squared(k));
    ChainInstance inst;
    inst.k = k;
    const auto len = static_cast<std::size_t>(rng.integer(1, static_cast<std::int64_t>(max_path)));
    LatticeVec cur(dim);
    for (std::size_t j = 0; j < len; ++j) {
        if (j > 0) cur = cur + steps[static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(steps.size()) - 1))];
        inst.path.push_back(cur);
        std::optional<std::size_t> reuse;
        if (rng.uniform() < 0.3)
            for (std::size_t i = 0; i < j; ++i)
                if (contains(inst.sets[i].z, cur)) {
                    reuse = i;
                    break;
                }
        if (reuse) {
            inst.sets.push_back(inst.sets[*reuse]);
            continue;
        }
        std::vector<LatticeVec> pts{cur};
        const auto extra = rng.integer(0, static_cast<std::int64_t>(max_set) - 1);
        for (std::int64_t m = 0; m < extra; ++m) {
            LatticeVec y = cur;
            for (std::size_t i = 0; i < dim; ++i) y[i] += static_cast<int>(rng.integer(-3, 3));
            pts.push_back(y);
        }
        inst.sets.push_back({make_point_set(std::move(pts)), "g" + std::to_string(j)});
    }
    return inst;
}

// ------------------------------------------------------ decorated systems

bool satisfies_diameter_condition(const DecoratedSetSystem& sys, const DecoratedSet& s) {
    return diameter(s.z) <= sys.constant_c() * static_cast<double>(s.z.size()) + 1e-12;
}

std::vector<std::size_t> count_by_size(const DecoratedSetSystem& sys, const LatticeVec& p, std::size_t max_n) {
    std::vector<std::size_t> counts(max_n + 1, 0);
    for (const auto& s : sys.enumerate(p, max_n))
        if (s.z.size() <= max_n) ++counts[s.z.size()];
    return counts;
}

BernoulliPathSystem::BernoulliPathSystem(std::size_t dim, double rho) : dim_(dim), rho_(rho) {
    if (dim == 0) throw std::invalid_argument("BernoulliPathSystem: dimension must be >= 1");
    if (!(rho >= 0 && rho <= 1)) throw std::invalid_argument("BernoulliPathSystem: rho must lie in [0,1]");
}

std::vector<DecoratedSet> BernoulliPathSystem::enumerate(const LatticeVec& p, std::size_t max_size) const {
    std::set<PointSet> found;
    std::vector<LatticeVec> steps;
    for (std::size_t i = 0; i < dim_; ++i) {
        LatticeVec e(dim_);
        e[i] = 1;
        steps.push_back(e);
        steps.push_back(-e);
    }
    std::vector<LatticeVec> walk{LatticeVec(dim_)};
    auto record = [&] {
        for (const auto& v : walk) {
            std::vector<LatticeVec> pts;
            for (const auto& w : walk) pts.push_back(w - v + p);
            found.insert(make_point_set(std::move(pts)));
        }
    };
    auto rec = [&](auto&& self) -> void {
        record();
        if (walk.size() >= max_size) return;
        for (const auto& s : steps) {
            const auto nx = walk.back() + s;
            if (std::find(walk.begin(), walk.end(), nx) != walk.end()) continue;
            walk.push_back(nx);
            self(self);
            walk.pop_back();
        }
    };
    if (max_size >= 1) rec(rec);
    std::vector<DecoratedSet> out;
    for (const auto& z : found) out.push_back({z, "path"});
    return out;
}

bool BernoulliPathSystem::open(const LatticeVec& x, std::uint64_t seed) const {
    return to_open_unit(fold_coords(stream_key(seed, 0, Stream::Instance), x.coords())) <= rho_;
}

bool BernoulliPathSystem::occurs(const DecoratedSet& s, std::uint64_t seed) const {
    return std::all_of(s.z.begin(), s.z.end(), [&](const LatticeVec& x) { return open(x, seed); });
}

// ------------------------------------------------------------- tail tables

namespace {

struct CompStat {
    std::size_t weight;  // sample points in the component
    double diam;
    bool censored;
};

/// Components of marked cells of a grid (row-major, first extent most
/// significant). Marked cells have value 1 in `mark`; visited cells are set
/// to 2. Periodic dimensions wrap and a component that closes around one is
/// censored; leaving a non-periodic dimension censors the component. The
/// weight of a component counts its cells at distance >= margin[a] from both
/// ends of every dimension a.
std::vector<CompStat> grid_components(const std::vector<int>& ext, std::vector<std::uint8_t>& mark,
                                      std::int64_t k2, const std::vector<bool>& periodic,
                                      const std::vector<int>& margin) {
    const std::size_t dd = ext.size();
    std::vector<std::size_t> stride(dd, 1);
    for (std::size_t a = dd; a-- > 1;) stride[a - 1] = stride[a] * static_cast<std::size_t>(ext[a]);
    const auto ball = ball_offsets(dd, k2);
    const bool any_periodic = std::find(periodic.begin(), periodic.end(), true) != periodic.end();
    std::vector<std::uint8_t> wrap(any_periodic ? mark.size() : 0, 0);
    auto wrap_code = [&](const std::vector<int>& u) {
        std::uint8_t code = 0;
        int shift = 0;
        for (std::size_t a = 0; a < dd; ++a) {
            if (!periodic[a]) continue;
            const int w = (u[a] >= 0 ? u[a] / ext[a] : -((-u[a] + ext[a] - 1) / ext[a]));
            code |= static_cast<std::uint8_t>((w & 3) << shift);
            shift += 2;
        }
        return code;
    };
    std::vector<CompStat> out;
    std::vector<int> coords, u(dd), v(dd);
    std::vector<std::size_t> queue;
    for (std::size_t start = 0; start < mark.size(); ++start) {
        if (mark[start] != 1) continue;
        coords.clear();
        queue.clear();
        bool censored = false;
        mark[start] = 2;
        std::size_t rem = start;
        for (std::size_t a = 0; a < dd; ++a) {
            coords.push_back(static_cast<int>(rem / stride[a]));
            rem %= stride[a];
        }
        if (any_periodic) wrap[start] = 0;
        queue.push_back(start);
        for (std::size_t head = 0; head < queue.size(); ++head) {
            for (std::size_t a = 0; a < dd; ++a) u[a] = coords[head * dd + a];
            for (const auto& o : ball) {
                std::size_t idx = 0;
                bool outside = false;
                for (std::size_t a = 0; a < dd; ++a) {
                    v[a] = u[a] + o[a];
                    int w = v[a];
                    if (periodic[a]) {
                        w %= ext[a];
                        if (w < 0) w += ext[a];
                    } else if (w < 0 || w >= ext[a]) {
                        outside = true;
                        break;
                    }
                    idx += static_cast<std::size_t>(w) * stride[a];
                }
                if (outside) {
                    censored = true;
                    continue;
                }
                if (mark[idx] == 0) continue;
                if (mark[idx] == 1) {
                    mark[idx] = 2;
                    if (any_periodic) wrap[idx] = wrap_code(v);
                    queue.push_back(idx);
                    coords.insert(coords.end(), v.begin(), v.end());
                } else if (any_periodic && wrap[idx] != wrap_code(v)) {
                    censored = true;
                }
            }
        }
        std::size_t weight = 0;
        for (std::size_t q = 0; q < queue.size(); ++q) {
            const std::size_t cell = queue[q];
            std::size_t r2 = cell;
            bool inside = true;
            for (std::size_t a = 0; a < dd; ++a) {
                const int c = static_cast<int>(r2 / stride[a]);
                r2 %= stride[a];
                inside = inside && c >= margin[a] && c < ext[a] - margin[a];
            }
            weight += inside;
        }
        out.push_back({weight, std::sqrt(flat_diameter2(coords, dd)), censored});
    }
    return out;
}

void accumulate(TailTable& t, const std::vector<CompStat>& comps) {
    for (const auto& c : comps) {
        ++t.components;
        if (c.censored) ++t.censored_components;
        for (std::size_t i = 0; i < t.ell.size(); ++i) {
            if (c.diam >= t.ell[i] - 1e-9) t.count[i] += c.weight;
            else if (c.censored) t.censored[i] += c.weight;
        }
    }
}

void init_table(TailTable& t, const std::vector<double>& ells) {
    if (ells.empty()) throw std::invalid_argument("cluster_tail: empty ell grid");
    if (!std::is_sorted(ells.begin(), ells.end())) throw std::invalid_argument("cluster_tail: ell grid must be sorted");
    t.ell = ells;
    t.count.assign(ells.size(), 0);
    t.censored.assign(ells.size(), 0);
}

/// Margins for the sample region: ceil(max ell) on non-periodic dimensions
/// unless given explicitly.
std::vector<int> sample_margins(const std::vector<int>& ext, const std::vector<bool>& periodic,
                                const std::vector<double>& ells, int requested) {
    const int m = requested >= 0 ? requested : static_cast<int>(std::ceil(ells.back() - 1e-9));
    std::vector<int> out(ext.size(), 0);
    for (std::size_t a = 0; a < ext.size(); ++a) {
        if (periodic[a]) continue;
        if (2 * m >= ext[a])
            throw std::invalid_argument("cluster_tail: window too small for the ell grid (extent " +
                                        std::to_string(ext[a]) + ", sample margin " + std::to_string(m) + ")");
        out[a] = m;
    }
    return out;
}

std::size_t sample_count(const std::vector<int>& ext, const std::vector<int>& margin) {
    std::size_t n = 1;
    for (std::size_t a = 0; a < ext.size(); ++a) n *= static_cast<std::size_t>(ext[a] - 2 * margin[a]);
    return n;
}

void finish_table(TailTable& t) {
    for (std::size_t i = 0; i < t.ell.size(); ++i) {
        const double n = static_cast<double>(t.samples);
        t.p_hat.push_back(n > 0 ? static_cast<double>(t.count[i]) / n : 0.0);
        const auto [lo, hi] = wilson_interval(static_cast<double>(t.count[i]), n);
        t.ci_lo.push_back(lo);
        t.ci_hi.push_back(hi);
    }
}

}  // namespace

TailTable cluster_tail(const DiscreteTrajectory& traj, const CaTailOptions& opt) {
    if (traj.frames.size() <= opt.burn_in) throw std::invalid_argument("cluster_tail: no frames after burn-in");
    TailTable t;
    init_table(t, opt.ells);
    const Box& box = traj.frames.front().box();
    for (const auto& f : traj.frames)
        if (!(f.box() == box)) throw std::invalid_argument("cluster_tail: frames on different boxes");
    const std::size_t frames = traj.frames.size() - opt.burn_in;
    std::vector<int> ext{static_cast<int>(frames)};
    std::vector<bool> periodic{false};
    for (std::size_t a = 0; a < box.dim(); ++a) {
        ext.push_back(box.extent(a));
        periodic.push_back(opt.topology == Topology::Torus);
    }
    std::vector<std::uint8_t> mark;
    mark.reserve(frames * box.size());
    for (std::size_t f = opt.burn_in; f < traj.frames.size(); ++f)
        for (auto b : traj.frames[f].bits()) mark.push_back(b == opt.material ? 1 : 0);
    const auto margin = sample_margins(ext, periodic, t.ell, opt.sample_margin);
    t.samples = sample_count(ext, margin);
    accumulate(t, grid_components(ext, mark, k_squared(opt.k), periodic, margin));
    finish_table(t);
    return t;
}

TailTable cluster_tail_bp(const UpdateFamily& family, const BpTailOptions& opt) {
    const auto cls = classify(family);
    if (cls != FamilyClass::SubcriticalNontrivial && cls != FamilyClass::TrivialSubcritical &&
        cls != FamilyClass::UnknownNonTrivialSubcritical)
        throw std::invalid_argument(std::string("cluster_tail_bp: family is ") + std::string(to_string(cls)) +
                                    ", not subcritical");
    if (opt.size < 1) throw std::invalid_argument("cluster_tail_bp: window size must be >= 1");
    if (!(opt.p >= 0 && opt.p <= 1)) throw std::invalid_argument("cluster_tail_bp: p must lie in [0,1]");
    TailTable t;
    init_table(t, opt.ells);
    const std::size_t d = family.dim();
    const Box box(LatticeVec(d), LatticeVec(std::vector<int>(d, opt.size - 1)));
    std::vector<int> ext(d, opt.size);
    std::vector<bool> periodic(d, false);
    const std::int64_t k2 = k_squared(opt.k);
    const auto margin = sample_margins(ext, periodic, t.ell, opt.sample_margin);
    std::vector<std::vector<CompStat>> per(opt.replicas);
    parallel_for(opt.replicas, opt.jobs, [&](std::size_t r) {
        const auto init = Configuration::bernoulli(box, opt.p, opt.seed, r);
        auto closed = bp_closure(family, init, Domain{box, AllZeros{}});
        std::vector<std::uint8_t> mark = closed.bits();
        per[r] = grid_components(ext, mark, k2, periodic, margin);
    });
    for (const auto& c : per) accumulate(t, c);
    t.samples = sample_count(ext, margin) * opt.replicas;
    finish_table(t);
    return t;
}

TailTable cluster_tail(const Trajectory& traj, const ContinuousTailOptions& opt) {
    if (!(opt.t_start >= 0 && opt.t_start <= traj.horizon))
        throw std::invalid_argument("cluster_tail: t_start outside the trajectory");
    TailTable t;
    init_table(t, opt.ells);
    const Box& box = traj.domain.box;
    const std::size_t d = box.dim();
    const std::int64_t k2 = k_squared(opt.k);
    const int r = static_cast<int>(isqrt_floor(k2));
    const double t0 = opt.t_start, t1 = traj.horizon;

    struct Atom {
        std::uint32_t site;
        double a, b;
    };
    std::vector<std::vector<std::pair<double, std::uint8_t>>> ch(box.size());
    for (const auto& e : traj.events) ch[e.site].emplace_back(e.time, e.value);
    std::vector<Atom> atoms;
    std::vector<std::vector<std::size_t>> by_site(box.size());
    for (std::uint32_t s = 0; s < box.size(); ++s) {
        std::uint8_t v = traj.initial[s];
        double since = t0;
        auto it = ch[s].begin();
        for (; it != ch[s].end() && it->first <= t0; ++it) v = it->second;
        for (; it != ch[s].end(); ++it) {
            if (v == opt.material) {
                by_site[s].push_back(atoms.size());
                atoms.push_back({s, since, it->first});
            }
            v = it->second;
            since = it->first;
        }
        if (v == opt.material) {
            by_site[s].push_back(atoms.size());
            atoms.push_back({s, since, t1});
        }
    }
    std::vector<std::size_t> parent(atoms.size());
    std::iota(parent.begin(), parent.end(), 0);
    auto find = [&](std::size_t x) {
        while (parent[x] != x) x = parent[x] = parent[parent[x]];
        return x;
    };
    auto offs = ball_offsets(d, k2);
    offs.push_back(LatticeVec(d));
    for (std::uint32_t s = 0; s < box.size(); ++s) {
        if (by_site[s].empty()) continue;
        const auto x = box.site_at(s);
        for (const auto& o : offs) {
            const auto y = x + o;
            if (!box.contains(y)) continue;
            const auto sy = static_cast<std::uint32_t>(box.index_of(y));
            if (sy < s) continue;
            const auto& A = by_site[s];
            const auto& B = by_site[sy];
            std::size_t j0 = 0;
            for (auto i : A) {
                while (j0 < B.size() && atoms[B[j0]].b < atoms[i].a - opt.k) ++j0;
                for (std::size_t j = j0; j < B.size() && atoms[B[j]].a <= atoms[i].b + opt.k; ++j)
                    if (B[j] != i) parent[find(B[j])] = find(i);
            }
        }
    }
    // Per component: per-site time span, weight on the unit grid, censoring.
    std::vector<std::size_t> root(atoms.size());
    for (std::size_t i = 0; i < atoms.size(); ++i) root[i] = find(i);
    std::vector<std::size_t> order(atoms.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
        return root[x] != root[y] ? root[x] < root[y] : atoms[x].site < atoms[y].site;
    });
    auto near_edge = [&](std::uint32_t s) {
        const auto x = box.site_at(s);
        for (std::size_t a = 0; a < d; ++a)
            if (x[a] - box.lower()[a] < r || box.upper()[a] - x[a] < r) return true;
        return false;
    };
    auto grid_points = [&](double a, double b, bool closed_end) {
        // grid times t0 + j in [a, b) (or [a, b] at the horizon)
        const double lo = std::ceil(a - t0 - 1e-12);
        double hi = std::floor(b - t0);
        if (!closed_end && t0 + hi >= b) hi -= 1;
        return hi >= lo ? static_cast<std::size_t>(hi - lo + 1) : std::size_t{0};
    };
    std::vector<CompStat> comps;
    for (std::size_t s = 0; s < order.size();) {
        std::size_t e = s;
        while (e < order.size() && root[order[e]] == root[order[s]]) ++e;
        CompStat c{0, 0, false};
        std::vector<double> pts;  // per-site: coords..., min a, max b
        for (std::size_t m = s; m < e;) {
            const auto site = atoms[order[m]].site;
            double lo = atoms[order[m]].a, hi = atoms[order[m]].b;
            std::size_t m2 = m;
            while (m2 < e && atoms[order[m2]].site == site) {
                const auto& at = atoms[order[m2]];
                lo = std::min(lo, at.a);
                hi = std::max(hi, at.b);
                c.weight += grid_points(at.a, at.b, at.b >= t1);
                if (at.a - opt.k < t0 || at.b + opt.k > t1) c.censored = true;
                ++m2;
            }
            if (opt.censor_spatial_edges && near_edge(site)) c.censored = true;
            const auto x = box.site_at(site);
            for (std::size_t a = 0; a < d; ++a) pts.push_back(x[a]);
            pts.push_back(lo);
            pts.push_back(hi);
            m = m2;
        }
        const std::size_t stride = d + 2;
        const std::size_t n = pts.size() / stride;
        double best = 0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i; j < n; ++j) {
                double s2 = 0;
                for (std::size_t a = 0; a < d; ++a) {
                    const double dl = pts[i * stride + a] - pts[j * stride + a];
                    s2 += dl * dl;
                }
                const double dt = std::max(std::abs(pts[i * stride + d + 1] - pts[j * stride + d]),
                                           std::abs(pts[j * stride + d + 1] - pts[i * stride + d]));
                best = std::max(best, s2 + dt * dt);
            }
        c.diam = std::sqrt(best);
        comps.push_back(c);
        s = e;
    }
    accumulate(t, comps);
    t.samples = box.size() * grid_points(t0, t1, true);
    finish_table(t);
    return t;
}

DecaySeries tail_series(const TailTable& t) {
    DecaySeries s;
    for (std::size_t i = 0; i < t.ell.size(); ++i) {
        if (t.censored[i] != 0) continue;
        s.x.push_back(t.ell[i]);
        s.successes.push_back(static_cast<double>(t.count[i]));
        s.trials.push_back(static_cast<double>(t.samples));
    }
    return s;
}

std::vector<double> integer_grid(int max_ell) {
    std::vector<double> g;
    for (int l = 0; l <= max_ell; ++l) g.push_back(l);
    return g;
}

}  // namespace kcm
