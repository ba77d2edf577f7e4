#include "kcmlab/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>

#include "kcmlab/cluster.hpp"
#include "kcmlab/coupling.hpp"
#include "kcmlab/dynamics.hpp"
#include "kcmlab/errors.hpp"
#include "kcmlab/io.hpp"
#include "kcmlab/parallel.hpp"
#include "kcmlab/renorm.hpp"
#include "kcmlab/rng.hpp"
#include "kcmlab/stats.hpp"

namespace kcm {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

json num(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + p.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

template <class F>
std::string to_text(F&& f) {
    std::ostringstream os;
    f(os);
    return os.str();
}

struct Ctx {
    const ExperimentConfig& cfg;
    const json& p;
    fs::path dir;
    RunRecord& rec;
    unsigned jobs;

    void write(const std::string& rel, const std::string& role, const std::string& content) {
        const fs::path path = dir / rel;
        if (path.has_parent_path()) fs::create_directories(path.parent_path());
        std::ofstream out(path, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write " + path.string());
        out << content;
        out.close();
        rec.outputs.push_back({rel, role, fnv1a_hex(content), content.size()});
    }
    void verdict(const std::string& name, bool ok, const std::string& detail = "") {
        rec.verdicts.push_back({name, ok, detail});
    }
    template <class T>
    T get(const char* key) const {
        return p.at(key).get<T>();
    }
    UpdateFamily family() const { return family_from_json(p.at("family")); }
};

std::string count_detail(std::size_t bad, std::size_t total, const char* what) {
    return std::to_string(bad) + " of " + std::to_string(total) + " " + what;
}

// ---------------------------------------------------------------- checks

/// Events whose change is not allowed by the update rule of the process.
std::size_t illegal_moves(const Trajectory& t) {
    Configuration c = t.initial;
    std::size_t bad = 0;
    double prev = -kInf;
    for (const auto& e : t.events) {
        const LatticeVec x = t.domain.box.site_at(e.site);
        const bool was = c[e.site] != 0;
        const bool cons = constraint_satisfied(t.family, t.domain, c, x);
        bool ok = was != (e.value != 0) && e.time > prev && e.time <= t.horizon;
        if (t.kind == ProcessKind::KCM) ok = ok && cons;
        if (t.kind == ProcessKind::CP && e.value) ok = ok && cons;
        bad += !ok;
        c[e.site] = e.value;
        prev = e.time;
    }
    return bad;
}

std::size_t frame_mismatches(const Trajectory& t, const std::vector<Frame>& frames) {
    std::size_t bad = 0;
    for (const auto& f : frames) bad += !(t.state_at(f.time) == f.config);
    return bad;
}

struct OrangeCheck {
    std::size_t initial_bad = 0;
    std::size_t not_healthy = 0;
    std::size_t regrowth = 0;
};

OrangeCheck check_orange(const Trajectory& cp, const OrangeProcess& o) {
    OrangeCheck r;
    std::vector<std::uint8_t> z = cp.initial.bits();
    std::vector<std::uint8_t> org = o.initial;
    for (std::size_t i = 0; i < z.size(); ++i) r.initial_bad += (org[i] != 0) != (z[i] == 0);
    std::size_t size = static_cast<std::size_t>(std::count(org.begin(), org.end(), 1));
    std::size_t a = 0, b = 0;
    bool empty_seen = size == 0;
    while (a < cp.events.size() || b < o.changes.size()) {
        const double t = std::min(a < cp.events.size() ? cp.events[a].time : kInf,
                                  b < o.changes.size() ? o.changes[b].time : kInf);
        std::vector<std::uint32_t> touched;
        for (; a < cp.events.size() && cp.events[a].time == t; ++a) {
            z[cp.events[a].site] = cp.events[a].value;
            touched.push_back(cp.events[a].site);
        }
        for (; b < o.changes.size() && o.changes[b].time == t; ++b) {
            const auto s = o.changes[b].site;
            if (o.changes[b].member && empty_seen) ++r.regrowth;
            size = size + o.changes[b].member - org[s];
            org[s] = o.changes[b].member;
            touched.push_back(s);
        }
        for (auto s : touched) r.not_healthy += org[s] && z[s];
        if (size == 0) empty_seen = true;
    }
    return r;
}

std::string orange_csv(const OrangeProcess& o) {
    return to_text([&](std::ostream& os) {
        os << "t,size\n";
        std::size_t size = static_cast<std::size_t>(std::count(o.initial.begin(), o.initial.end(), 1));
        os << format_double(o.start_time) << ',' << size << '\n';
        for (const auto& c : o.changes) {
            size = c.member ? size + 1 : size - 1;
            os << format_double(c.time) << ',' << size << '\n';
        }
    });
}

std::vector<double> probe_times(double smax, std::size_t probes) {
    std::vector<double> t;
    for (std::size_t k = 1; k <= probes; ++k)
        t.push_back(smax * (static_cast<double>(k) - 0.5) / static_cast<double>(probes));
    t.push_back(smax);
    return t;
}

/// Sites where {s_x <= t} and the KCM infected set differ, summed over probes.
std::size_t identity_mismatches(const Trajectory& kcm, const PassageField& s, const std::vector<double>& probes) {
    std::size_t bad = 0;
    for (double t : probes) {
        const Configuration c = kcm.state_at(t);
        for (std::size_t i = 0; i < s.times.size(); ++i) bad += (c[i] != 0) != (s.times[i] <= t);
    }
    return bad;
}

struct MonotoneCheck {
    std::size_t mismatched = 0;  // addition time differs from s_x, or site repeated
    std::size_t not_monotone = 0;
    bool absorbed = false;
};

MonotoneCheck check_monotone(const Box& cube, const std::vector<std::pair<double, std::uint32_t>>& adds,
                             const PassageField& s) {
    MonotoneCheck r;
    std::vector<std::uint8_t> member(cube.size(), 0);
    double prev = -kInf;
    for (std::size_t k = 0; k < adds.size(); ++k) {
        const auto [t, site] = adds[k];
        if (site >= cube.size() || member[site] || s.times[site] != t || t < prev) {
            ++r.mismatched;
            continue;
        }
        prev = t;
        const LatticeVec x = cube.site_at(site);
        for (std::size_t i = 0; i < x.dim(); ++i) {
            LatticeVec y = x;
            --y[i];
            if (cube.contains(y) && !member[cube.index_of(y)]) ++r.not_monotone;
        }
        member[site] = 1;
        std::size_t below = 0;
        for (double v : s.times) below += v <= t;
        if (below != k + 1) ++r.mismatched;
    }
    r.absorbed = std::all_of(member.begin(), member.end(), [](std::uint8_t m) { return m != 0; });
    return r;
}

std::uint8_t local_value(const LocalMap& map, const Configuration& prev, const LatticeVec& x, bool torus) {
    const Box& b = prev.box();
    std::size_t idx = 0;
    for (std::size_t j = 0; j < map.support.size(); ++j) {
        LatticeVec y = x + map.support[j];
        bool v;
        if (torus) {
            for (std::size_t i = 0; i < y.dim(); ++i) {
                const int e = b.extent(i);
                y[i] = b.lower()[i] + ((y[i] - b.lower()[i]) % e + e) % e;
            }
            v = prev.at(y);
        } else {
            v = b.contains(y) && prev.at(y);
        }
        if (v) idx |= std::size_t{1} << j;
    }
    return map.table[idx];
}

/// Frames violating omega(t) <= phi(omega(t-1)) (or equality when exact).
std::size_t ca_violations(const LocalMap& map, const std::vector<Configuration>& frames, bool torus, bool exact) {
    std::size_t bad = 0;
    for (std::size_t t = 1; t < frames.size(); ++t) {
        const Box& b = frames[t].box();
        for (std::size_t i = 0; i < b.size(); ++i) {
            const auto phi = local_value(map, frames[t - 1], b.site_at(i), torus);
            if (frames[t][i] > phi || (exact && frames[t][i] != phi)) {
                ++bad;
                break;
            }
        }
    }
    return bad;
}

std::size_t bp_violations(const UpdateFamily& fam, const Domain& dom, const std::vector<Configuration>& frames) {
    std::size_t bad = 0;
    for (std::size_t t = 1; t < frames.size(); ++t) {
        const Box& b = frames[t].box();
        for (std::size_t i = 0; i < b.size(); ++i) {
            const bool want = frames[t - 1][i] || constraint_satisfied(fam, dom, frames[t - 1], b.site_at(i));
            if ((frames[t][i] != 0) != want) {
                ++bad;
                break;
            }
        }
    }
    return bad;
}

PassageField passage_from_csv(const CsvTable& t, const Box& box) {
    PassageField f{box, std::vector<double>(box.size(), 0)};
    const std::size_t d = box.dim();
    if (t.header.size() != d + 1 || t.rows.size() != box.size()) throw std::runtime_error("passage csv: wrong shape");
    for (const auto& row : t.rows) {
        LatticeVec x(d);
        for (std::size_t i = 0; i < d; ++i) x[i] = static_cast<int>(row[i]);
        f.times[box.index_of(x)] = row[d];
    }
    return f;
}

std::string trajectory_text(const Trajectory& t) {
    return to_text([&](std::ostream& os) { write_trajectory_jsonl(os, t); });
}

Trajectory load_trajectory(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + p.string());
    return read_trajectory_jsonl(in);
}

Domain domain_of(const Ctx& c, const Box& box) {
    if (c.p.contains("boundary") && c.get<std::string>("boundary") == "zeros") return {box, AllZeros{}};
    return {box, AllOnes{}};
}

Configuration initial_config(const std::string& kind, const Box& box, double p, std::uint64_t seed,
                             std::uint64_t replica) {
    if (kind == "ones") return Configuration::ones(box);
    if (kind == "zeros") return Configuration::zeros(box);
    if (kind == "diagonal") {
        Configuration c(box);
        for (std::size_t i = 0; i < box.size(); ++i) {
            const auto x = box.site_at(i);
            bool diag = true;
            for (std::size_t k = 1; k < x.dim(); ++k) diag = diag && x[k] == x[0];
            c[i] = diag;
        }
        return c;
    }
    return Configuration::bernoulli(box, p, seed, replica);
}

OrientedRule oriented_of(const UpdateFamily& fam) {
    auto o = find_oriented_rule(fam);
    if (!o) throw std::invalid_argument("family is trivial subcritical: no oriented rule");
    return *o;
}

BoxGeometry geometry_of(const Ctx& c) {
    const auto fam = c.family();
    const auto o = oriented_of(fam);
    const RationalDirection u = c.p.at("u").is_null() ? o.direction
                                                      : RationalDirection(LatticeVec(c.get<std::vector<int>>("u")));
    return build_geometry(o.rule, u, c.get<int>("R"), c.get<double>("T"), c.get<int>("budget"));
}

std::uint64_t extra_replica(std::uint64_t r, std::uint64_t k) { return ((r + 1) << 20) | (k + 1); }

// ---------------------------------------------------------------- runners

void run_classify(Ctx& c) {
    json arr = json::array();
    const auto& fams = c.p.at("families");
    const auto& expect = c.p.at("expect");
    for (std::size_t i = 0; i < fams.size(); ++i) {
        const auto fam = family_from_json(fams[i]);
        const auto cls = classify(fam);
        arr.push_back({{"family", fams[i]}, {"class", std::string(to_string(cls))}});
        if (fam.dim() == 2) {
            const UnstableArcs2D arcs(fam);
            int m = 1;
            for (const auto& r : fam.rules())
                for (const auto& y : r.offsets()) m = std::max({m, std::abs(y[0]) + 1, std::abs(y[1]) + 1});
            std::string bad;
            for (int a = -m; a <= m && bad.empty(); ++a)
                for (int b = -m; b <= m && bad.empty(); ++b)
                    if ((a || b) && arcs.unstable(LatticeVec{a, b}) != is_unstable(fam, LatticeVec{a, b}))
                        bad = "arc model disagrees at (" + std::to_string(a) + "," + std::to_string(b) + ")";
            c.verdict("arcs[" + std::to_string(i) + "]", bad.empty(),
                      bad.empty() ? "unstable arcs match the direction scan up to |coordinate| " + std::to_string(m) : bad);
        }
        if (!expect.empty()) {
            const auto want = expect[i].get<std::string>();
            c.verdict("class[" + std::to_string(i) + "]", want == to_string(cls),
                      "got " + std::string(to_string(cls)) + ", expected " + want);
        }
    }
    c.write("classify.json", "classes", arr.dump(2) + "\n");
    c.rec.results["classes"] = arr;
}

void run_process_kind(Ctx& c, ProcessKind kind) {
    const auto fam = c.family();
    const auto d = fam.dim();
    const Box box = Box::cube(c.get<int>("n"), d);
    const Domain dom = domain_of(c, box);
    const auto reps = c.get<std::size_t>("replicas");
    const auto frames = c.get<std::vector<double>>("frames");
    const double q = c.get<double>("q");
    struct Slot {
        std::string traj, frames;
        std::size_t events = 0, illegal = 0, frame_bad = 0, wrong_writes = 0;
        double density = 0;
    };
    std::vector<Slot> slots(reps);
    parallel_for(reps, c.jobs, [&](std::size_t r) {
        const ClockField clocks(c.cfg.seed(), d, r);
        const auto init = initial_config(c.get<std::string>("init"), box, c.get<double>("p_init"), c.cfg.seed(), r);
        const Trajectory t = run_process(kind, fam, dom, init, q, c.get<double>("horizon"), clocks, frames);
        Slot& s = slots[r];
        s.events = t.events.size();
        s.illegal = illegal_moves(t);
        s.frame_bad = frame_mismatches(t, t.frames);
        if (kind == ProcessKind::CP && q == 1)
            for (const auto& e : t.events) s.wrong_writes += e.value == 0;
        if (kind == ProcessKind::CP && q == 0)
            for (const auto& e : t.events) s.wrong_writes += e.value == 1;
        s.density = static_cast<double>(t.state_at(t.horizon).count_ones()) / static_cast<double>(box.size());
        if (c.get<bool>("store_trajectories")) s.traj = trajectory_text(t);
        if (!frames.empty()) s.frames = to_text([&](std::ostream& os) { write_frames_jsonl(os, t.frames); });
    });
    std::size_t illegal = 0, fbad = 0, wrong = 0, events = 0;
    std::string table = "replica,events,final_density\n";
    for (std::size_t r = 0; r < reps; ++r) {
        const auto& s = slots[r];
        illegal += s.illegal;
        fbad += s.frame_bad;
        wrong += s.wrong_writes;
        events += s.events;
        table += std::to_string(r) + "," + std::to_string(s.events) + "," + format_double(s.density) + "\n";
        if (!s.traj.empty()) c.write("trajectory_r" + std::to_string(r) + ".jsonl", "trajectory", s.traj);
        if (!s.frames.empty()) c.write("frames_r" + std::to_string(r) + ".jsonl", "frames", s.frames);
    }
    c.write("summary.csv", "table", table);
    c.verdict("legal-moves", illegal == 0, count_detail(illegal, events, "events illegal"));
    c.verdict("frames-replay", fbad == 0, std::to_string(fbad) + " frames differ from the replayed events");
    if (kind == ProcessKind::CP && q == 1) c.verdict("cp-q1-never-heals", wrong == 0);
    if (kind == ProcessKind::CP && q == 0) c.verdict("cp-q0-only-heals", wrong == 0);
    c.rec.results["events"] = events;
}

void run_bp_kind(Ctx& c) {
    const auto fam = c.family();
    const Box box = Box::cube(c.get<int>("n"), fam.dim());
    const Domain dom = domain_of(c, box);
    const auto init = initial_config(c.get<std::string>("init"), box, c.get<double>("p_init"), c.cfg.seed(), 0);
    const std::size_t steps = c.p.at("steps").is_null() ? box.size() : c.get<std::size_t>("steps");
    const auto traj = run_bp(fam, init, steps, dom);
    std::size_t nonmono = 0;
    std::string dens = "t,density\n";
    for (std::size_t t = 0; t < traj.frames.size(); ++t) {
        if (t > 0 && !traj.frames[t - 1].dominated_by(traj.frames[t])) ++nonmono;
        dens += std::to_string(t) + "," +
                format_double(static_cast<double>(traj.frames[t].count_ones()) / static_cast<double>(box.size())) + "\n";
    }
    c.write("density.csv", "table", dens);
    if (c.get<bool>("store_frames"))
        c.write("frames.jsonl", "frames", to_text([&](std::ostream& os) { write_frames_jsonl(os, traj); }));
    c.verdict("monotone", nonmono == 0, std::to_string(nonmono) + " decreasing steps");
    const auto bad = bp_violations(fam, dom, traj.frames);
    c.verdict("bp-map", bad == 0, std::to_string(bad) + " frames inconsistent with the BP map");
    if (steps >= box.size()) {
        const bool fix = traj.frames.back() == bp_closure(fam, init, dom);
        c.verdict("closure", fix, "last frame equals the BP closure");
    }
    c.rec.results["final_density"] = static_cast<double>(traj.frames.back().count_ones()) / static_cast<double>(box.size());
}

void run_ca_kind(Ctx& c) {
    const auto fam = c.family();
    const Box box = Box::cube(c.get<int>("n"), fam.dim());
    const auto map = LocalMap::from_bp(fam);
    const bool torus = c.get<std::string>("topology") == "torus";
    const auto init = initial_config(c.get<std::string>("init"), box, c.get<double>("p_init"), c.cfg.seed(), 0);
    const double delta = c.get<double>("delta");
    const auto traj = run_ca_death(map, delta, init, c.get<std::size_t>("steps"), c.cfg.seed(),
                                   torus ? Topology::Torus : Topology::Box);
    std::string dens = "t,density\n";
    double sum = 0;
    std::size_t cnt = 0;
    const auto burn = c.get<std::size_t>("burn_in");
    for (std::size_t t = 0; t < traj.frames.size(); ++t) {
        const double rho = static_cast<double>(traj.frames[t].count_ones()) / static_cast<double>(box.size());
        dens += std::to_string(t) + "," + format_double(rho) + "\n";
        if (t >= burn) {
            sum += rho;
            ++cnt;
        }
    }
    c.write("density.csv", "table", dens);
    if (c.get<bool>("store_frames"))
        c.write("frames.jsonl", "frames", to_text([&](std::ostream& os) { write_frames_jsonl(os, traj); }));
    const auto bad = ca_violations(map, traj.frames, torus, delta == 0);
    c.verdict("death-consistent", bad == 0, std::to_string(bad) + " frames not below the map image");
    c.rec.results["mean_density_after_burn_in"] = cnt ? num(sum / static_cast<double>(cnt)) : json(nullptr);
}

void run_lpp_kind(Ctx& c) {
    const auto fam = c.family();
    const auto rule = fam.rules().front();
    const auto d = fam.dim();
    const auto reps = c.get<std::size_t>("replicas");
    const auto sizes = c.get<std::vector<int>>("sizes");
    const bool clock_w = c.get<std::string>("weights") == "clock";
    std::string table = "n,mean_ratio,ci_lo,ci_hi,replicas\n";
    std::vector<double> means;
    std::size_t id_bad = 0, id_checked = 0;
    json rows = json::array();
    for (int n : sizes) {
        const Box box = Box::cube(n, d);
        std::vector<double> ratio(reps);
        std::vector<std::size_t> bad(reps, 0);
        std::string first_passage, id_traj, id_passage;
        parallel_for(reps, c.jobs, [&](std::size_t r) {
            const WeightSource w = clock_w ? WeightSource(ClockWeights{ClockField(c.cfg.seed(), d, r)})
                                           : WeightSource(ExponentialWeights{c.cfg.seed(), r});
            const auto f = lpp_times(rule, box, w);
            ratio[r] = f.max() / n;
            if (r == 0) first_passage = to_text([&](std::ostream& os) { write_passage_csv(os, f); });
            if (c.get<bool>("identity_check")) {
                const ClockField clocks(c.cfg.seed(), d, r);
                const auto s = lpp_times(rule, box, ClockWeights{clocks});
                const auto kcm = run_kcm(single_rule_family(rule), Domain{box, AllOnes{}}, Configuration::zeros(box),
                                         1.0, s.max() + 1, clocks);
                bad[r] = identity_mismatches(kcm, s, probe_times(s.max(), c.get<std::size_t>("probe_times")));
                if (r == 0) {
                    id_traj = trajectory_text(kcm);
                    id_passage = to_text([&](std::ostream& os) { write_passage_csv(os, s); });
                }
            }
        });
        const double mean = std::accumulate(ratio.begin(), ratio.end(), 0.0) / static_cast<double>(reps);
        double var = 0;
        for (double v : ratio) var += (v - mean) * (v - mean);
        const double sd = reps > 1 ? std::sqrt(var / static_cast<double>(reps - 1)) : 0;
        const double h = 1.959963984540054 * sd / std::sqrt(static_cast<double>(reps));
        means.push_back(mean);
        table += std::to_string(n) + "," + format_double(mean) + "," + format_double(mean - h) + "," +
                 format_double(mean + h) + "," + std::to_string(reps) + "\n";
        rows.push_back({{"n", n}, {"mean_ratio", mean}, {"ci_lo", mean - h}, {"ci_hi", mean + h}});
        c.write("passage_n" + std::to_string(n) + "_r0.csv", "passage-field", first_passage);
        if (c.get<bool>("identity_check")) {
            for (auto b : bad) id_bad += b;
            id_checked += reps;
            c.write("identity_n" + std::to_string(n) + "_r0.jsonl", "identity-trajectory", id_traj);
            c.write("identity_passage_n" + std::to_string(n) + "_r0.csv", "identity-passage", id_passage);
        }
    }
    c.write("lpp.csv", "table", table);
    if (c.get<bool>("identity_check"))
        c.verdict("lpp-kcm-identity", id_bad == 0,
                  std::to_string(id_bad) + " site/probe mismatches over " + std::to_string(id_checked) + " runs");
    json ratios = json::array();
    for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
        const double rr = means[i + 1] / means[i];
        ratios.push_back({{"n1", sizes[i]}, {"n2", sizes[i + 1]}, {"ratio", rr}});
        if (sizes[i] >= c.get<int>("ratio_from"))
            c.verdict("ratio " + std::to_string(sizes[i]) + "->" + std::to_string(sizes[i + 1]),
                      rr >= c.get<double>("ratio_lo") && rr <= c.get<double>("ratio_hi"),
                      "ratio of mean max s/n = " + format_double(rr));
    }
    c.rec.results["rows"] = rows;
    c.rec.results["ratios"] = ratios;
}

std::string additions_csv(const Box& cube, const MonotoneSetRun& run) {
    return to_text([&](std::ostream& os) {
        os << 't';
        for (std::size_t i = 1; i <= cube.dim(); ++i) os << ",x" << i;
        os << '\n';
        for (const auto& [t, s] : run.additions) {
            os << format_double(t);
            const auto x = cube.site_at(s);
            for (std::size_t i = 0; i < x.dim(); ++i) os << ',' << x[i];
            os << '\n';
        }
    });
}

void run_monotone_kind(Ctx& c) {
    const int ell = c.get<int>("ell");
    const auto d = c.get<std::size_t>("dim");
    const auto reps = c.get<std::size_t>("replicas");
    std::vector<MonotoneCheck> checks(reps);
    std::vector<double> absorbed(reps);
    std::string adds0, pass0;
    parallel_for(reps, c.jobs, [&](std::size_t r) {
        const ClockField clocks(c.cfg.seed(), d, r);
        const auto run = run_monotone_set_chain(ell, static_cast<int>(d), clocks);
        const auto s = lpp_times(standard_lpp_rule(d), run.cube, ClockWeights{clocks});
        checks[r] = check_monotone(run.cube, run.additions, s);
        absorbed[r] = run.absorbed_time;
        if (r == 0) {
            adds0 = additions_csv(run.cube, run);
            pass0 = to_text([&](std::ostream& os) { write_passage_csv(os, s); });
        }
    });
    std::size_t mism = 0, nonmono = 0, unabsorbed = 0;
    std::string table = "replica,absorbed_time\n";
    for (std::size_t r = 0; r < reps; ++r) {
        mism += checks[r].mismatched;
        nonmono += checks[r].not_monotone;
        unabsorbed += !checks[r].absorbed;
        table += std::to_string(r) + "," + format_double(absorbed[r]) + "\n";
    }
    c.write("monotone_r0.csv", "additions", adds0);
    c.write("passage_r0.csv", "passage-field", pass0);
    c.write("absorption.csv", "table", table);
    c.verdict("monotone-lpp-identity", mism == 0, std::to_string(mism) + " additions off the LPP sublevel sets");
    c.verdict("monotone-every-step", nonmono == 0, std::to_string(nonmono) + " additions breaking monotonicity");
    c.verdict("absorbed", unabsorbed == 0, std::to_string(unabsorbed) + " replicas not absorbed at the full cube");
}

void run_orange_kind(Ctx& c) {
    const auto fam = c.family();
    const auto o = oriented_of(fam);
    const auto u0fam = single_rule_family(o.rule);
    const auto d = fam.dim();
    const Box box = Box::cube(c.get<int>("n"), d);
    const auto reps = c.get<std::size_t>("replicas");
    std::vector<OrangeCheck> checks(reps);
    std::vector<double> empty(reps);
    std::string cp0, org0;
    parallel_for(reps, c.jobs, [&](std::size_t r) {
        const ClockField clocks(c.cfg.seed(), d, r);
        const auto xi = Configuration::bernoulli(box, c.get<double>("p_init"), c.cfg.seed(), r);
        const auto cp = run_cp(u0fam, Domain{box, AllOnes{}}, xi, c.get<double>("q0"), c.get<double>("horizon"), clocks);
        const auto org = track_orange_norm2(cp, fam.norm2());
        checks[r] = check_orange(cp, org);
        empty[r] = org.empty_time ? *org.empty_time : kInf;
        if (r == 0) {
            cp0 = trajectory_text(cp);
            org0 = orange_csv(org);
        }
    });
    std::size_t ib = 0, nh = 0, rg = 0;
    std::string table = "replica,empty_time\n";
    for (std::size_t r = 0; r < reps; ++r) {
        ib += checks[r].initial_bad;
        nh += checks[r].not_healthy;
        rg += checks[r].regrowth;
        table += std::to_string(r) + "," + format_double(empty[r]) + "\n";
    }
    c.write("cp_r0.jsonl", "cp-trajectory", cp0);
    c.write("orange_r0.csv", "orange", org0);
    c.write("orange.csv", "table", table);
    c.verdict("orange-initial", ib == 0, "O_0 equals the healthy sites of the initial condition");
    c.verdict("orange-healthy", nh == 0, std::to_string(nh) + " orange sites infected in the CP");
    c.verdict("orange-absorbing", rg == 0, std::to_string(rg) + " additions after O became empty");
}

void run_grand_coupling_kind(Ctx& c) {
    const auto fam = c.family();
    const auto o = oriented_of(fam);
    const auto u0fam = single_rule_family(o.rule);
    const auto d = fam.dim();
    const Box box = Box::cube(c.get<int>("n"), d);
    const Domain dom{box, AllOnes{}};
    const auto reps = c.get<std::size_t>("replicas");
    const auto ninit = c.get<std::size_t>("inits");
    const double q = c.get<double>("q"), q0 = c.get<double>("q0"), hor = c.get<double>("horizon");
    GrandCouplingOptions gopt;
    gopt.corrupt_tracker = c.get<bool>("corrupt_tracker");
    std::vector<std::optional<GrandCouplingReport>> reps_out(reps);
    std::vector<std::pair<std::string, std::string>> stored;
    parallel_for(reps, c.jobs, [&](std::size_t r) {
        const ClockField clocks(c.cfg.seed(), d, r);
        const auto xi = Configuration::bernoulli(box, c.get<double>("p_cp"), c.cfg.seed(), r);
        std::vector<Configuration> inits;
        for (std::size_t k = 0; k < ninit; ++k) {
            auto extra = Configuration::bernoulli(box, c.get<double>("p_extra"), c.cfg.seed(), extra_replica(r, k));
            for (std::size_t i = 0; i < box.size(); ++i) extra[i] = extra[i] | xi[i];
            inits.push_back(std::move(extra));
        }
        if (r == 0 && c.get<bool>("store")) {
            const auto cp = run_cp(u0fam, dom, xi, q0, hor, clocks);
            const auto eta1 = run_kcm(fam, dom, Configuration::ones(box), q, hor, clocks);
            std::vector<Trajectory> etas;
            for (const auto& x : inits) etas.push_back(run_kcm(fam, dom, x, q, hor, clocks));
            reps_out[r] = check_coupling(cp, eta1, etas, fam.norm2(), gopt);
            stored.emplace_back("gc_cp.jsonl", trajectory_text(cp));
            stored.emplace_back("gc_eta1.jsonl", trajectory_text(eta1));
            for (std::size_t k = 0; k < etas.size(); ++k)
                stored.emplace_back("gc_eta" + std::to_string(k + 2) + ".jsonl", trajectory_text(etas[k]));
        } else {
            reps_out[r] = grand_coupling_check(fam, dom, q, q0, hor, clocks, xi, inits, gopt);
        }
    });
    std::map<std::string, std::size_t> kinds{{"domination", 0}, {"inclusion", 0}, {"after-certificate", 0}};
    std::size_t total = 0, certified = 0, events = 0;
    json viol = json::array();
    std::string table = "replica,certificate_time,events_checked,violations\n";
    for (std::size_t r = 0; r < reps; ++r) {
        const auto& rep = *reps_out[r];
        total += rep.violation_count;
        events += rep.events_checked;
        certified += rep.certificate.empty_time.has_value();
        for (const auto& v : rep.violations) ++kinds[v.kind];
        for (auto e : violations_to_json(rep)) {
            e["replica"] = r;
            viol.push_back(e);
        }
        table += std::to_string(r) + "," + format_double(rep.certificate.empty_time.value_or(kInf)) + "," +
                 std::to_string(rep.events_checked) + "," + std::to_string(rep.violation_count) + "\n";
    }
    for (const auto& [name, text] : stored) c.write(name, "trajectory", text);
    c.write("coupling.csv", "table", table);
    c.write("violations.json", "violations", viol.dump(2) + "\n");
    for (const auto& [k, n] : kinds) c.verdict(k, n == 0, std::to_string(n) + " recorded violations");
    c.verdict("violation-count", total == 0, count_detail(total, events, "checked events with a violation"));
    c.rec.results["certified_fraction"] = static_cast<double>(certified) / static_cast<double>(reps);
    c.rec.results["events_checked"] = events;
}

void run_mixing_kind(Ctx& c) {
    const auto fam = c.family();
    const auto sizes = c.get<std::vector<int>>("sizes");
    std::vector<MixingEstimate> ests;
    std::string reps_csv = "n,replica,certificate_time,kcm_meet_time,lower_proxy,kcm_agree\n";
    json rows = json::array();
    bool agree = true;
    for (int n : sizes) {
        MixingOptions o;
        o.delta = c.get<double>("delta");
        o.replicas = c.get<std::size_t>("replicas");
        o.seed = c.cfg.seed();
        if (!c.p.at("q0").is_null()) o.q0 = c.get<double>("q0");
        if (!c.p.at("max_time").is_null()) o.max_time = c.get<double>("max_time");
        o.burn_in = c.get<double>("burn_in");
        o.ell = c.get<int>("ell");
        o.bootstrap = c.get<std::size_t>("bootstrap");
        o.jobs = c.jobs;
        ests.push_back(estimate_mixing_time(fam, n, c.get<double>("q"), o));
        const auto& e = ests.back();
        agree = agree && e.kcm_agreement;
        for (std::size_t r = 0; r < e.replicas.size(); ++r) {
            const auto& m = e.replicas[r];
            reps_csv += std::to_string(n) + "," + std::to_string(r) + "," + format_double(m.certificate_time) + "," +
                        format_double(m.kcm_meet_time) + "," + format_double(m.lower_proxy) + "," +
                        (m.kcm_agree ? "1" : "0") + "\n";
        }
        rows.push_back({{"n", n},
                        {"t_hat", num(e.t_hat)},
                        {"ci_lo", num(e.ci_lo)},
                        {"ci_hi", num(e.ci_hi)},
                        {"lower_hat", num(e.lower_hat)},
                        {"lower_ci_lo", num(e.lower_ci_lo)},
                        {"lower_ci_hi", num(e.lower_ci_hi)},
                        {"censored", e.censored}});
    }
    c.write("mixing.csv", "table", to_text([&](std::ostream& os) { write_mixing_csv(os, ests); }));
    c.write("mixing_replicas.csv", "table", reps_csv);
    const double lo = c.get<double>("ratio_lo"), hi = c.get<double>("ratio_hi");
    json ratios = json::array();
    for (std::size_t i = 0; i + 1 < ests.size(); ++i) {
        const double up = ests[i + 1].t_hat / ests[i].t_hat;
        const double low = ests[i + 1].lower_hat / ests[i].lower_hat;
        const std::string tag = std::to_string(sizes[i]) + "->" + std::to_string(sizes[i + 1]);
        const bool up_ok = std::isfinite(up) && up >= lo && up <= hi;
        const bool low_ok = std::isfinite(low) && low >= lo && low <= hi;
        c.verdict("upper-ratio " + tag, up_ok, "t_hat ratio " + format_double(up));
        c.verdict("lower-ratio " + tag, low_ok, "lower proxy ratio " + format_double(low));
        ratios.push_back({{"n1", sizes[i]}, {"n2", sizes[i + 1]}, {"upper", num(up)}, {"lower", num(low)},
                          {"upper_ok", up_ok}, {"lower_ok", low_ok}});
    }
    c.verdict("kcm-agreement", agree, "KCM from 1 and from 0 agree at every certificate time");
    c.rec.results["rows"] = rows;
    c.rec.results["ratios"] = ratios;
}

void run_survival_kind(Ctx& c) {
    const auto fam = c.family();
    SurvivalOptions o;
    o.q = c.get<double>("q");
    o.q0 = c.get<double>("q0");
    o.p_init = c.get<double>("p_init");
    o.window = c.get<int>("window");
    o.buffer = c.get<int>("buffer");
    o.horizon = c.get<double>("horizon");
    o.replicas = c.get<std::size_t>("replicas");
    o.seed = c.cfg.seed();
    o.t_min = c.get<double>("t_min");
    o.ratio = c.get<double>("ratio");
    o.validate_buffer = c.get<bool>("validate_buffer");
    o.validation_replicas = c.get<std::size_t>("validation_replicas");
    o.max_buffer = c.get<int>("max_buffer");
    o.jobs = c.jobs;
    const auto curve = survival_curve(fam, o);
    c.write("survival.csv", "table", to_text([&](std::ostream& os) { write_survival_csv(os, curve); }));
    const double t0 = c.get<double>("fit_t_min");
    DecaySeries s;
    std::vector<std::size_t> keep;
    for (std::size_t k = 0; k < curve.times.size(); ++k)
        if (curve.times[k] >= t0) keep.push_back(k);
    for (auto k : keep) {
        s.x.push_back(curve.times[k]);
        s.successes.push_back(static_cast<double>(curve.hits[k]));
        s.trials.push_back(static_cast<double>(curve.replicas));
    }
    for (const auto& row : curve.hits_by_replica) {
        std::vector<std::uint8_t> sub;
        for (auto k : keep) sub.push_back(row[k]);
        s.replica_hits.push_back(std::move(sub));
    }
    FitOptions fo;
    fo.seed = c.cfg.seed();
    const auto fit = fit_exponential(s, fo);
    c.write("fit.json", "fit", fit_to_json(fit).dump(2) + "\n");
    if (o.validate_buffer)
        c.verdict("buffer-validated", curve.buffer_validated, "buffer " + std::to_string(curve.buffer_used));
    const bool ok = !fit.underpowered && fit.decaying && fit.r_squared >= c.get<double>("min_r2") &&
                    fit.decades >= c.get<double>("min_decades");
    c.verdict("exponential-fit", ok,
              "R^2 " + format_double(fit.r_squared) + " over " + format_double(fit.decades) + " decades" +
                  (fit.underpowered ? " (underpowered)" : ""));
    c.rec.results["fit"] = fit_to_json(fit);
    c.rec.results["buffer_used"] = curve.buffer_used;
}

void run_renorm_kind(Ctx& c) {
    const auto g = geometry_of(c);
    const auto inv = g.check_invariants();
    std::string inv_s;
    for (const auto& m : inv) inv_s += (inv_s.empty() ? "" : "; ") + m;
    c.verdict("geometry-invariants", inv.empty(), inv_s);
    c.write("geometry.json", "geometry", geometry_to_json(g).dump(2) + "\n");
    const auto d = g.dim();
    const Box box = Box::cube(c.get<int>("n"), d);
    const auto u0fam = single_rule_family(g.u0);
    const auto taus = c.get<std::int64_t>("taus");
    const double q0 = c.get<double>("q0");
    const auto reps = c.get<std::size_t>("replicas");
    std::vector<RenormCheckReport> out(reps);
    std::string cp0, good0;
    parallel_for(reps, c.jobs, [&](std::size_t r) {
        const ClockField clocks(c.cfg.seed(), d, r);
        const auto xi = block_bernoulli(g, box, c.get<double>("p_init"), c.cfg.seed(), r);
        const auto cp = run_cp(u0fam, Domain{box, AllOnes{}}, xi, q0, static_cast<double>(taus) * g.T, clocks);
        out[r] = renormalised_bp_check(g, clocks, cp, q0);
        if (r == 0) {
            cp0 = trajectory_text(cp);
            good0 = to_text([&](std::ostream& os) { write_good_box_csv(os, good_box_field(g, clocks, box, taus, q0)); });
        }
    });
    std::size_t total = 0, ones = 0, boxes = 0;
    double good = 0;
    json viol = json::array();
    std::string table = "replica,boxes_checked,omega_ones,good_fraction,violations\n";
    for (std::size_t r = 0; r < reps; ++r) {
        const auto& rep = out[r];
        total += rep.violation_count;
        ones += rep.omega_ones;
        boxes += rep.boxes_checked;
        good += rep.good_fraction;
        for (auto e : violations_to_json(rep)) {
            e["replica"] = r;
            viol.push_back(e);
        }
        table += std::to_string(r) + "," + std::to_string(rep.boxes_checked) + "," + std::to_string(rep.omega_ones) +
                 "," + format_double(rep.good_fraction) + "," + std::to_string(rep.violation_count) + "\n";
    }
    c.write("cp_r0.jsonl", "cp-trajectory", cp0);
    c.write("good_box_r0.csv", "good-box-field", good0);
    c.write("renorm.csv", "table", table);
    c.write("violations.json", "violations", viol.dump(2) + "\n");
    c.verdict("renormalisation-implication", total == 0,
              std::to_string(total) + " violations; " + std::to_string(ones) + " of " + std::to_string(boxes) +
                  " renormalised states equal 1");
    c.rec.results["mean_good_fraction"] = good / static_cast<double>(reps);
    c.rec.results["omega_ones"] = ones;
    c.rec.results["boxes_checked"] = boxes;
}

void run_passage_kind(Ctx& c) {
    const auto g = geometry_of(c);
    const auto inv = g.check_invariants();
    c.verdict("geometry-invariants", inv.empty());
    c.write("geometry.json", "geometry", geometry_to_json(g).dump(2) + "\n");
    const auto d = g.dim();
    const Box box = Box::cube(c.get<int>("n"), d);
    const double q0 = c.get<double>("q0");
    const auto reps = c.get<std::size_t>("replicas");
    std::vector<PassageCouplingReport> out(reps);
    std::vector<double> tmax(reps);
    std::vector<std::size_t> order_bad(reps, 0), sites(reps, 0);
    std::string f0;
    parallel_for(reps, c.jobs, [&](std::size_t r) {
        const ClockField clocks(c.cfg.seed(), d, r);
        const auto f = renorm_passage_times(g, box, q0, clocks);
        for (std::size_t i = 0; i < f.xi.size(); ++i) order_bad[r] += !(f.t[i] > f.t_tilde[i]);
        sites[r] = f.xi.size();
        tmax[r] = f.max();
        out[r] = passage_coupling_check(g, box, q0, clocks, f);
        if (r == 0) f0 = to_text([&](std::ostream& os) { write_renorm_passage_csv(os, f); });
    });
    std::size_t total = 0, obad = 0, checked = 0;
    json viol = json::array();
    std::string table = "replica,renormalised_sites,max_t,horizon,violations\n";
    for (std::size_t r = 0; r < reps; ++r) {
        total += out[r].violation_count;
        obad += order_bad[r];
        checked += out[r].sites_checked;
        for (auto e : violations_to_json(out[r])) {
            e["replica"] = r;
            viol.push_back(e);
        }
        table += std::to_string(r) + "," + std::to_string(sites[r]) + "," + format_double(tmax[r]) + "," +
                 format_double(out[r].horizon) + "," + std::to_string(out[r].violation_count) + "\n";
    }
    c.write("passage_r0.csv", "renorm-passage", f0);
    c.write("passage.csv", "table", table);
    c.write("violations.json", "violations", viol.dump(2) + "\n");
    c.verdict("passage-order", obad == 0, std::to_string(obad) + " sites with t_x <= max over predecessors");
    c.verdict("passage-coupling", total == 0, count_detail(total, checked, "sites with a violation"));
}

void run_warmup_kind(Ctx& c) {
    const auto fam = c.family();
    WarmupOptions o;
    o.q = c.get<double>("q");
    o.p = c.get<double>("p");
    o.R = c.get<int>("R");
    o.window = c.get<int>("window");
    o.buffer = c.get<int>("buffer");
    o.replicas = c.get<std::size_t>("replicas");
    o.seed = c.cfg.seed();
    o.jobs = c.jobs;
    if (c.p.at("base_vectors").is_null()) {
        const auto or_ = oriented_of(fam);
        o.base_vectors = build_geometry(or_.rule, or_.direction, o.R, 1.0).w;
    } else {
        for (const auto& v : c.p.at("base_vectors")) o.base_vectors.emplace_back(v.get<std::vector<int>>());
    }
    std::string table = "T,boxes,full,density,ci_lo,ci_hi,base_size\n";
    std::vector<WarmupEstimate> ests;
    json rows = json::array();
    for (double T : c.get<std::vector<double>>("Ts")) {
        o.T = T;
        ests.push_back(measure_warmup(fam, o));
        const auto& e = ests.back();
        table += format_double(T) + "," + std::to_string(e.boxes) + "," + std::to_string(e.full) + "," +
                 format_double(e.density) + "," + format_double(e.ci_lo) + "," + format_double(e.ci_hi) + "," +
                 std::to_string(e.base_size) + "\n";
        rows.push_back({{"T", T}, {"boxes", e.boxes}, {"density", e.density}, {"ci_lo", e.ci_lo}, {"ci_hi", e.ci_hi},
                        {"base_size", e.base_size}});
    }
    c.write("warmup.csv", "table", table);
    if (ests.size() >= 2)
        c.verdict("increasing", ests.back().density > ests.front().density,
                  format_double(ests.front().density) + " -> " + format_double(ests.back().density));
    c.verdict("near-one", ests.back().density > c.get<double>("min_density"),
              "density " + format_double(ests.back().density) + " with |B| = " + std::to_string(ests.back().base_size));
    c.rec.results["rows"] = rows;
}

void merge_tail(TailTable& acc, const TailTable& t) {
    if (acc.ell.empty()) {
        acc = t;
        return;
    }
    for (std::size_t i = 0; i < acc.ell.size(); ++i) {
        acc.count[i] += t.count[i];
        acc.censored[i] += t.censored[i];
    }
    acc.samples += t.samples;
    acc.components += t.components;
    acc.censored_components += t.censored_components;
    for (std::size_t i = 0; i < acc.ell.size(); ++i) {
        const double n = static_cast<double>(acc.samples);
        acc.p_hat[i] = n > 0 ? static_cast<double>(acc.count[i]) / n : 0.0;
        std::tie(acc.ci_lo[i], acc.ci_hi[i]) = wilson_interval(static_cast<double>(acc.count[i]), n);
    }
}

void run_cluster_kind(Ctx& c) {
    const auto fam = c.family();
    const bool bp = c.get<std::string>("mode") == "bp";
    const auto ells = integer_grid(c.get<int>("max_ell"));
    const double k = c.p.at("k").is_null() ? (bp ? 1.0 : std::sqrt(3.0)) : c.get<double>("k");
    const std::size_t reps = c.p.at("replicas").is_null() ? (bp ? 8 : 1) : c.get<std::size_t>("replicas");
    const int margin = c.p.at("sample_margin").is_null() ? -1 : c.get<int>("sample_margin");
    TailTable table;
    if (bp) {
        const auto cls = classify(fam);
        const bool sub = cls == FamilyClass::SubcriticalNontrivial || cls == FamilyClass::TrivialSubcritical;
        c.verdict("subcritical-family", sub, std::string(to_string(cls)));
        if (!sub) throw std::invalid_argument("cluster-tail in bp mode needs a subcritical family");
        BpTailOptions o;
        o.p = c.get<double>("p");
        o.size = c.get<int>("size");
        o.k = k;
        o.ells = ells;
        o.replicas = reps;
        o.seed = c.cfg.seed();
        o.jobs = c.jobs;
        o.sample_margin = margin;
        table = cluster_tail_bp(fam, o);
    } else {
        const auto map = LocalMap::from_bp(fam);
        const Box box = Box::cube(c.get<int>("n"), fam.dim());
        const auto burn = c.get<std::size_t>("burn_in");
        const auto steps = burn + c.get<std::size_t>("frames") - 1;
        CaTailOptions o;
        o.k = k;
        o.ells = ells;
        o.burn_in = burn;
        o.material = static_cast<std::uint8_t>(c.get<int>("material"));
        o.topology = Topology::Torus;
        o.sample_margin = margin;
        std::vector<TailTable> parts(reps);
        parallel_for(reps, c.jobs, [&](std::size_t r) {
            const auto traj = run_ca_death(map, c.get<double>("delta"), Configuration::ones(box), steps, c.cfg.seed(),
                                           Topology::Torus, AllZeros{}, r);
            parts[r] = cluster_tail(traj, o);
        });
        for (const auto& t : parts) merge_tail(table, t);
    }
    c.write("tail.csv", "table", to_text([&](std::ostream& os) { write_tail_csv(os, table); }));
    FitOptions fo;
    fo.seed = c.cfg.seed();
    const auto fit = fit_exponential(tail_series(table), fo);
    c.write("fit.json", "fit", fit_to_json(fit).dump(2) + "\n");
    std::size_t nonmono = 0;
    for (std::size_t i = 1; i < table.count.size(); ++i) nonmono += table.count[i] > table.count[i - 1];
    c.verdict("tail-monotone", nonmono == 0, std::to_string(nonmono) + " increases in the tail counts");
    c.verdict("tail-fit", !fit.underpowered && fit.decaying && fit.r_squared >= c.get<double>("min_r2"),
              "R^2 " + format_double(fit.r_squared) + " on " + std::to_string(fit.points_used) + " points" +
                  (fit.underpowered ? " (underpowered)" : ""));
    c.rec.results["fit"] = fit_to_json(fit);
    c.rec.results["samples"] = table.samples;
    c.rec.results["censored_components"] = table.censored_components;
}

bool chain_equal(const Chain& a, const Chain& b) {
    return a.sets == b.sets && a.anchor == b.anchor && a.target == b.target;
}

json instance_to_json(const ChainInstance& in) {
    json path = json::array();
    for (const auto& p : in.path) path.push_back(std::vector<int>(p.coords().begin(), p.coords().end()));
    Chain sets_as_chain{in.sets, in.path.front(), in.path.back()};
    return {{"path", path}, {"sets", chain_to_json(sets_as_chain).at("sets")}, {"k", in.k}};
}

ChainInstance instance_from_json(const json& j) {
    ChainInstance in;
    for (const auto& p : j.at("path")) in.path.emplace_back(p.get<std::vector<int>>());
    json cj = {{"anchor", j.at("path").front()}, {"target", j.at("path").back()}, {"sets", j.at("sets")}};
    in.sets = chain_from_json(cj).sets;
    in.k = j.at("k").get<double>();
    return in;
}

struct ChainOutcome {
    bool claims = false, verified = false, roundtrip = false;
    std::size_t path_len = 0, chain_len = 0;
    std::string failure;
};

ChainOutcome evaluate_instance(const ChainInstance& in, Chain* out = nullptr) {
    ChainOutcome r;
    r.path_len = in.path.size();
    try {
        const auto ex = extract_chain(in.path, in.sets, in.k);
        r.claims = ex.claims.all();
        r.chain_len = ex.chain.sets.size();
        const double n = std::sqrt(static_cast<double>(dist2(in.path.front(), in.path.back())));
        r.verified = verify_chain(ex.chain, in.path.front(), n, in.k);
        r.roundtrip = chain_equal(chain_from_json(chain_to_json(ex.chain)), ex.chain);
        if (out) *out = ex.chain;
    } catch (const std::logic_error& e) {
        r.failure = e.what();
    }
    return r;
}

void run_chain_kind(Ctx& c) {
    const auto n = c.get<std::size_t>("instances");
    const auto d = c.get<std::size_t>("dim");
    const double k = c.get<double>("k");
    std::vector<ChainOutcome> outs(n);
    json fixture;
    parallel_for(n, c.jobs, [&](std::size_t i) {
        const auto inst = random_chain_instance(fold(mix64(c.cfg.seed()), i), d, k, c.get<std::size_t>("max_path"),
                                                c.get<std::size_t>("max_set"));
        Chain ch;
        outs[i] = evaluate_instance(inst, &ch);
        if (i == 0) fixture = {{"instance", instance_to_json(inst)}, {"chain", chain_to_json(ch)}};
    });
    std::size_t claims = 0, verified = 0, rt = 0;
    json failures = json::array();
    std::string table = "instance,path_len,chain_len,claims,verify,roundtrip\n";
    for (std::size_t i = 0; i < n; ++i) {
        const auto& o = outs[i];
        claims += !o.claims;
        verified += !o.verified;
        rt += !o.roundtrip;
        if (!o.claims || !o.verified || !o.roundtrip)
            failures.push_back({{"instance", i}, {"message", o.failure}});
        table += std::to_string(i) + "," + std::to_string(o.path_len) + "," + std::to_string(o.chain_len) + "," +
                 (o.claims ? "1" : "0") + "," + (o.verified ? "1" : "0") + "," + (o.roundtrip ? "1" : "0") + "\n";
    }
    c.write("chains.csv", "table", table);
    c.write("chain_0.json", "chain-fixture", fixture.dump(2) + "\n");
    c.write("violations.json", "violations", failures.dump(2) + "\n");
    c.verdict("claims", claims == 0, count_detail(claims, n, "instances failing a claim"));
    c.verdict("verify-chain", verified == 0, count_detail(verified, n, "chains rejected by verify_chain"));
    c.verdict("json-roundtrip", rt == 0, count_detail(rt, n, "chains not surviving a JSON round trip"));
}

}  // namespace

bool RunRecord::passed() const {
    return std::all_of(verdicts.begin(), verdicts.end(), [](const Verdict& v) { return v.passed; });
}

bool VerifyReport::passed() const {
    return std::all_of(verdicts.begin(), verdicts.end(), [](const Verdict& v) { return v.passed; });
}

json record_to_json(const RunRecord& r) {
    json outs = json::array();
    for (const auto& o : r.outputs) outs.push_back({{"path", o.path}, {"role", o.role}, {"hash", o.hash}, {"bytes", o.bytes}});
    json vs = json::array();
    for (const auto& v : r.verdicts) vs.push_back({{"name", v.name}, {"passed", v.passed}, {"detail", v.detail}});
    return {{"kind", r.kind},       {"config_hash", r.config_hash}, {"version", r.version},
            {"wall_time", r.wall_time}, {"config", r.config},       {"outputs", outs},
            {"verdicts", vs},       {"results", r.results},         {"passed", r.passed()}};
}

RunRecord record_from_json(const json& j) {
    RunRecord r;
    r.kind = j.at("kind").get<std::string>();
    r.config_hash = j.at("config_hash").get<std::string>();
    r.version = j.at("version").get<std::string>();
    r.wall_time = j.at("wall_time").get<double>();
    r.config = j.at("config");
    for (const auto& o : j.at("outputs"))
        r.outputs.push_back({o.at("path").get<std::string>(), o.at("role").get<std::string>(),
                             o.at("hash").get<std::string>(), o.at("bytes").get<std::uintmax_t>()});
    for (const auto& v : j.at("verdicts"))
        r.verdicts.push_back({v.at("name").get<std::string>(), v.at("passed").get<bool>(), v.at("detail").get<std::string>()});
    r.results = j.value("results", json::object());
    return r;
}

fs::path run_directory(const ExperimentConfig& cfg, const fs::path& base) {
    return base / (cfg.kind + "-" + config_hash(cfg).substr(0, 8));
}

RunRecord run_experiment(const ExperimentConfig& cfg, const fs::path& dir) {
    const auto start = std::chrono::steady_clock::now();
    RunRecord rec;
    rec.kind = cfg.kind;
    rec.config_hash = config_hash(cfg);
    rec.version = std::string(version());
    rec.config = cfg.params;
    fs::create_directories(dir);
    const unsigned jobs = cfg.jobs() == 0 ? default_jobs() : cfg.jobs();
    Ctx c{cfg, cfg.params, dir, rec, jobs};
    const auto& k = cfg.kind;
    if (k == "classify")
        run_classify(c);
    else if (k == "kcm")
        run_process_kind(c, ProcessKind::KCM);
    else if (k == "cp")
        run_process_kind(c, ProcessKind::CP);
    else if (k == "bp")
        run_bp_kind(c);
    else if (k == "ca-death")
        run_ca_kind(c);
    else if (k == "lpp")
        run_lpp_kind(c);
    else if (k == "monotone-set")
        run_monotone_kind(c);
    else if (k == "orange")
        run_orange_kind(c);
    else if (k == "grand-coupling")
        run_grand_coupling_kind(c);
    else if (k == "mixing-scaling")
        run_mixing_kind(c);
    else if (k == "survival")
        run_survival_kind(c);
    else if (k == "renorm-check")
        run_renorm_kind(c);
    else if (k == "passage-times")
        run_passage_kind(c);
    else if (k == "warmup")
        run_warmup_kind(c);
    else if (k == "cluster-tail")
        run_cluster_kind(c);
    else if (k == "chain-props")
        run_chain_kind(c);
    else
        throw ConfigError("kind", "unknown experiment kind '" + k + "'");
    rec.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::ofstream out(dir / "manifest.json", std::ios::binary);
    out << record_to_json(rec).dump(2) << '\n';
    return rec;
}

// ---------------------------------------------------------------- summary

std::string SummaryTable::to_csv() const {
    std::string s;
    for (std::size_t i = 0; i < columns.size(); ++i) s += (i ? "," : "") + columns[i];
    s += "\n";
    for (const auto& r : rows) {
        for (std::size_t i = 0; i < r.size(); ++i) s += (i ? "," : "") + r[i];
        s += "\n";
    }
    return s;
}

SummaryTable emit_summary(const std::vector<RunRecord>& records) {
    SummaryTable t;
    t.columns = {"kind", "config_hash", "item", "value", "ci_lo", "ci_hi", "verdict"};
    auto cell = [](const json& v) { return v.is_number() ? format_double(v.get<double>()) : std::string(); };
    auto pf = [](bool b) { return std::string(b ? "PASS" : "FAIL"); };
    for (const auto& r : records) {
        const auto& res = r.results;
        if (r.kind == "mixing-scaling" && res.contains("rows")) {
            for (const auto& row : res.at("rows"))
                t.rows.push_back({r.kind, r.config_hash, "t_hat n=" + std::to_string(row.at("n").get<int>()),
                                  cell(row.at("t_hat")), cell(row.at("ci_lo")), cell(row.at("ci_hi")), ""});
            for (const auto& q : res.at("ratios")) {
                const std::string tag = std::to_string(q.at("n1").get<int>()) + "->" + std::to_string(q.at("n2").get<int>());
                t.rows.push_back({r.kind, r.config_hash, "t_hat ratio " + tag, cell(q.at("upper")), "", "",
                                  pf(q.at("upper_ok").get<bool>())});
                t.rows.push_back({r.kind, r.config_hash, "lower-proxy ratio " + tag, cell(q.at("lower")), "", "",
                                  pf(q.at("lower_ok").get<bool>())});
            }
        }
        if (res.contains("fit")) {
            const auto& f = res.at("fit");
            bool fit_ok = true;
            for (const auto& v : r.verdicts)
                if (v.name == "exponential-fit" || v.name == "tail-fit") fit_ok = v.passed;
            t.rows.push_back({r.kind, r.config_hash, "decay rate", cell(f.at("rate")), cell(f.at("rate_ci_lo")),
                              cell(f.at("rate_ci_hi")), pf(fit_ok)});
            t.rows.push_back({r.kind, r.config_hash, "r_squared", cell(f.at("r_squared")), "", "", ""});
        }
        for (const auto& v : r.verdicts) t.rows.push_back({r.kind, r.config_hash, v.name, "", "", "", pf(v.passed)});
    }
    return t;
}

// ---------------------------------------------------------------- verify

VerifyReport verify_manifest(const fs::path& manifest) {
    VerifyReport rep;
    auto add = [&](const std::string& name, bool ok, const std::string& detail = "") {
        rep.verdicts.push_back({name, ok, detail});
    };
    json mj;
    try {
        mj = json::parse(read_file(manifest));
    } catch (const std::exception& e) {
        add("manifest", false, e.what());
        return rep;
    }
    const RunRecord rec = record_from_json(mj);
    const fs::path dir = manifest.parent_path();
    add("version", rec.version == version(), "manifest " + rec.version + ", tool " + std::string(version()));
    std::map<std::string, bool> intact;
    for (const auto& o : rec.outputs) {
        bool ok = false;
        try {
            ok = fnv1a_hex(read_file(dir / o.path)) == o.hash;
        } catch (const std::exception&) {
        }
        intact[o.path] = ok;
        add("hash " + o.path, ok);
    }
    ExperimentConfig cfg;
    try {
        cfg = config_from_json(rec.config);
        add("config-hash", config_hash(cfg) == rec.config_hash);
    } catch (const std::exception& e) {
        add("config", false, e.what());
        return rep;
    }
    auto has = [&](const std::string& p) { return intact.count(p) && intact.at(p); };
    const json& p = cfg.params;
    const auto& k = cfg.kind;
    try {
        if (k == "classify" && has("classify.json")) {
            const json stored = json::parse(read_file(dir / "classify.json"));
            const auto& expect = p.at("expect");
            for (std::size_t i = 0; i < stored.size(); ++i) {
                const std::string cls(to_string(classify(family_from_json(stored[i].at("family")))));
                add("class[" + std::to_string(i) + "]",
                    cls == stored[i].at("class").get<std::string>() &&
                        (expect.empty() || expect[i].get<std::string>() == cls),
                    cls);
            }
        } else if (k == "kcm" || k == "cp") {
            for (const auto& o : rec.outputs)
                if (o.role == "trajectory" && has(o.path)) {
                    const auto t = load_trajectory(dir / o.path);
                    add("replay " + o.path, consistent_with_clocks(t));
                    add("legal-moves " + o.path, illegal_moves(t) == 0);
                }
        } else if (k == "orange" && has("cp_r0.jsonl")) {
            const auto cp = load_trajectory(dir / "cp_r0.jsonl");
            add("replay cp_r0.jsonl", consistent_with_clocks(cp));
            const auto fam = family_from_json(p.at("family"));
            const auto org = track_orange_norm2(cp, fam.norm2());
            const auto chk = check_orange(cp, org);
            add("orange-recomputed", has("orange_r0.csv") && orange_csv(org) == read_file(dir / "orange_r0.csv"));
            add("orange-healthy", chk.not_healthy == 0 && chk.initial_bad == 0);
            add("orange-absorbing", chk.regrowth == 0);
        } else if (k == "grand-coupling" && has("gc_cp.jsonl")) {
            const auto fam = family_from_json(p.at("family"));
            const auto cp = load_trajectory(dir / "gc_cp.jsonl");
            const auto eta1 = load_trajectory(dir / "gc_eta1.jsonl");
            std::vector<Trajectory> etas;
            for (std::size_t i = 0; has("gc_eta" + std::to_string(i + 2) + ".jsonl"); ++i)
                etas.push_back(load_trajectory(dir / ("gc_eta" + std::to_string(i + 2) + ".jsonl")));
            bool replay = consistent_with_clocks(cp) && consistent_with_clocks(eta1);
            for (const auto& e : etas) replay = replay && consistent_with_clocks(e);
            add("replay trajectories", replay);
            GrandCouplingOptions g;
            g.corrupt_tracker = p.at("corrupt_tracker").get<bool>();
            const auto r = check_coupling(cp, eta1, etas, fam.norm2(), g);
            add("coupling-recheck", r.violation_count == 0, std::to_string(r.violation_count) + " violations");
        } else if (k == "lpp" && p.at("identity_check").get<bool>()) {
            const auto fam = family_from_json(p.at("family"));
            for (int n : p.at("sizes").get<std::vector<int>>()) {
                const std::string tj = "identity_n" + std::to_string(n) + "_r0.jsonl";
                const std::string pc = "identity_passage_n" + std::to_string(n) + "_r0.csv";
                if (!has(tj) || !has(pc)) continue;
                const auto kcm = load_trajectory(dir / tj);
                std::ifstream in(dir / pc);
                const auto s = passage_from_csv(read_csv(in), kcm.domain.box);
                const auto fresh = lpp_times(fam.rules().front(), kcm.domain.box, ClockWeights{kcm.clocks});
                add("replay " + tj, consistent_with_clocks(kcm));
                add("passage-recomputed " + pc, fresh.times == s.times);
                add("lpp-kcm-identity n=" + std::to_string(n),
                    identity_mismatches(kcm, s, probe_times(s.max(), p.at("probe_times").get<std::size_t>())) == 0);
            }
        } else if (k == "monotone-set" && has("monotone_r0.csv") && has("passage_r0.csv")) {
            const auto d = p.at("dim").get<std::size_t>();
            const Box cube = Box::cube(p.at("ell").get<int>(), d);
            std::ifstream pin(dir / "passage_r0.csv");
            const auto s = passage_from_csv(read_csv(pin), cube);
            const auto fresh = lpp_times(standard_lpp_rule(d), cube, ClockWeights{ClockField(cfg.seed(), d, 0)});
            add("passage-recomputed", fresh.times == s.times);
            std::ifstream ain(dir / "monotone_r0.csv");
            const auto at = read_csv(ain);
            std::vector<std::pair<double, std::uint32_t>> adds;
            for (const auto& row : at.rows) {
                LatticeVec x(d);
                for (std::size_t i = 0; i < d; ++i) x[i] = static_cast<int>(row[i + 1]);
                adds.emplace_back(row[0], static_cast<std::uint32_t>(cube.contains(x) ? cube.index_of(x) : cube.size()));
            }
            const auto chk = check_monotone(cube, adds, s);
            add("monotone-lpp-identity", chk.mismatched == 0);
            add("monotone-every-step", chk.not_monotone == 0);
            add("absorbed", chk.absorbed);
        } else if (k == "renorm-check" && has("geometry.json") && has("cp_r0.jsonl")) {
            const auto g = geometry_from_json(json::parse(read_file(dir / "geometry.json")));
            add("geometry-invariants", g.check_invariants().empty());
            const auto cp = load_trajectory(dir / "cp_r0.jsonl");
            add("replay cp_r0.jsonl", consistent_with_clocks(cp));
            const auto r = renormalised_bp_check(g, cp.clocks, cp, p.at("q0").get<double>());
            add("renormalisation-implication", r.passed(), std::to_string(r.violation_count) + " violations");
        } else if (k == "passage-times" && has("geometry.json") && has("passage_r0.csv")) {
            const auto g = geometry_from_json(json::parse(read_file(dir / "geometry.json")));
            add("geometry-invariants", g.check_invariants().empty());
            const Box box = Box::cube(p.at("n").get<int>(), g.dim());
            const double q0 = p.at("q0").get<double>();
            const ClockField clocks(cfg.seed(), g.dim(), 0);
            const auto f = renorm_passage_times(g, box, q0, clocks);
            const auto text = to_text([&](std::ostream& os) { write_renorm_passage_csv(os, f); });
            add("passage-recomputed", text == read_file(dir / "passage_r0.csv"));
            std::size_t bad = 0;
            for (std::size_t i = 0; i < f.xi.size(); ++i) bad += !(f.t[i] > f.t_tilde[i]);
            add("passage-order", bad == 0);
            add("passage-coupling", passage_coupling_check(g, box, q0, clocks, f).passed());
        } else if (k == "chain-props" && has("chain_0.json")) {
            const json fx = json::parse(read_file(dir / "chain_0.json"));
            const auto inst = instance_from_json(fx.at("instance"));
            const Chain stored = chain_from_json(fx.at("chain"));
            Chain fresh;
            const auto o = evaluate_instance(inst, &fresh);
            add("claims", o.claims, o.failure);
            add("chain-reproduced", chain_equal(fresh, stored));
            const double n = std::sqrt(static_cast<double>(dist2(inst.path.front(), inst.path.back())));
            add("verify-chain", verify_chain(stored, inst.path.front(), n, inst.k));
        } else if (k == "bp" && has("frames.jsonl")) {
            std::ifstream in(dir / "frames.jsonl");
            const auto frames = read_frames_jsonl(in);
            std::vector<Configuration> cs;
            for (const auto& f : frames) cs.push_back(f.config);
            const auto fam = family_from_json(p.at("family"));
            const Domain dom{cs.front().box(), p.at("boundary").get<std::string>() == "zeros" ? Boundary(AllZeros{})
                                                                                              : Boundary(AllOnes{})};
            add("bp-map", bp_violations(fam, dom, cs) == 0);
        } else if (k == "ca-death" && has("frames.jsonl")) {
            std::ifstream in(dir / "frames.jsonl");
            const auto frames = read_frames_jsonl(in);
            std::vector<Configuration> cs;
            for (const auto& f : frames) cs.push_back(f.config);
            const auto map = LocalMap::from_bp(family_from_json(p.at("family")));
            add("death-consistent", ca_violations(map, cs, p.at("topology").get<std::string>() == "torus",
                                                  p.at("delta").get<double>() == 0) == 0);
        }
    } catch (const std::exception& e) {
        add("recheck", false, e.what());
    }
    return rep;
}

}  // namespace kcm
