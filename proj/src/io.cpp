#include "kcmlab/io.hpp"

#include <charconv>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "kcmlab/errors.hpp"

namespace kcm {

using nlohmann::json;

std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

namespace {

json coords_json(const LatticeVec& v) {
    json a = json::array();
    for (int c : v.coords()) a.push_back(c);
    return a;
}

LatticeVec coords_from(const json& j) {
    return LatticeVec(j.get<std::vector<int>>());
}

std::string bits_string(const std::vector<std::uint8_t>& bits) {
    std::string s(bits.size(), '0');
    for (std::size_t i = 0; i < bits.size(); ++i)
        if (bits[i]) s[i] = '1';
    return s;
}

std::vector<std::uint8_t> bits_from(const std::string& s, std::size_t expected) {
    if (s.size() != expected)
        throw std::runtime_error("bit string has length " + std::to_string(s.size()) + ", expected " +
                                 std::to_string(expected));
    std::vector<std::uint8_t> b(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] != '0' && s[i] != '1') throw std::runtime_error("bit string contains a non-binary character");
        b[i] = s[i] == '1';
    }
    return b;
}

void write_site(std::ostream& os, const LatticeVec& x) {
    for (std::size_t i = 0; i < x.dim(); ++i) os << x[i] << ',';
}

void write_coord_header(std::ostream& os, std::size_t d) {
    for (std::size_t i = 1; i <= d; ++i) os << 'x' << i << ',';
}

}  // namespace

json box_to_json(const Box& b) { return {{"lower", coords_json(b.lower())}, {"upper", coords_json(b.upper())}}; }

Box box_from_json(const json& j) { return Box(coords_from(j.at("lower")), coords_from(j.at("upper"))); }

json boundary_to_json(const Boundary& b) {
    if (std::holds_alternative<AllOnes>(b)) return "ones";
    if (std::holds_alternative<AllZeros>(b)) return "zeros";
    json a = json::array();
    for (const auto& [x, v] : std::get<ExplicitBoundary>(b).values) a.push_back({coords_json(x), v ? 1 : 0});
    return {{"explicit", a}};
}

Boundary boundary_from_json(const json& j) {
    if (j.is_string()) {
        const auto s = j.get<std::string>();
        if (s == "ones") return AllOnes{};
        if (s == "zeros") return AllZeros{};
        throw std::runtime_error("unknown boundary '" + s + "'");
    }
    ExplicitBoundary e;
    for (const auto& p : j.at("explicit")) e.values[coords_from(p.at(0))] = p.at(1).get<int>() != 0;
    return e;
}

void write_trajectory_jsonl(std::ostream& os, const Trajectory& t) {
    json h = {{"format", "kcmlab-trajectory"},
              {"kind", std::string(to_string(t.kind))},
              {"family", family_to_json(t.family)},
              {"box", box_to_json(t.domain.box)},
              {"boundary", boundary_to_json(t.domain.boundary)},
              {"q", t.q},
              {"horizon", t.horizon},
              {"seed", t.clocks.seed()},
              {"replica", t.clocks.replica()},
              {"initial", bits_string(t.initial.bits())},
              {"events", t.events.size()}};
    os << h.dump() << '\n';
    const Box& box = t.domain.box;
    for (const auto& e : t.events) {
        json l = {{"t", e.time}, {"x", coords_json(box.site_at(e.site))}, {"v", static_cast<int>(e.value)}};
        os << l.dump() << '\n';
    }
}

Trajectory read_trajectory_jsonl(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw std::runtime_error("trajectory: missing header line");
    const json h = json::parse(line);
    if (h.value("format", "") != "kcmlab-trajectory") throw std::runtime_error("trajectory: bad format tag");
    const auto kind_s = h.at("kind").get<std::string>();
    ProcessKind kind;
    if (kind_s == to_string(ProcessKind::KCM))
        kind = ProcessKind::KCM;
    else if (kind_s == to_string(ProcessKind::CP))
        kind = ProcessKind::CP;
    else
        throw std::runtime_error("trajectory: unknown kind '" + kind_s + "'");
    const UpdateFamily family = family_from_json(h.at("family"));
    const Box box = box_from_json(h.at("box"));
    Domain domain{box, boundary_from_json(h.at("boundary"))};
    Configuration init(box, bits_from(h.at("initial").get<std::string>(), box.size()));
    ClockField clocks(h.at("seed").get<std::uint64_t>(), box.dim(), h.at("replica").get<std::uint64_t>());
    Trajectory t{kind, family, domain, h.at("q").get<double>(), h.at("horizon").get<double>(),
                 clocks, init, {}, {}};
    const auto n = h.at("events").get<std::size_t>();
    t.events.reserve(n);
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const json l = json::parse(line);
        const LatticeVec x = coords_from(l.at("x"));
        if (!box.contains(x)) throw std::runtime_error("trajectory: event site " + x.str() + " outside the box");
        const int v = l.at("v").get<int>();
        if (v != 0 && v != 1) throw std::runtime_error("trajectory: event value must be 0 or 1");
        t.events.push_back({l.at("t").get<double>(), static_cast<std::uint32_t>(box.index_of(x)),
                            static_cast<std::uint8_t>(v)});
    }
    if (t.events.size() != n)
        throw std::runtime_error("trajectory: header announces " + std::to_string(n) + " events, found " +
                                 std::to_string(t.events.size()));
    return t;
}

void write_frames_jsonl(std::ostream& os, const std::vector<Frame>& frames) {
    for (const auto& f : frames) {
        const Box& b = f.config.box();
        json l = {{"dim", b.dim()},
                  {"lower", coords_json(b.lower())},
                  {"upper", coords_json(b.upper())},
                  {"time", f.time},
                  {"bits", bits_string(f.config.bits())}};
        os << l.dump() << '\n';
    }
}

void write_frames_jsonl(std::ostream& os, const DiscreteTrajectory& t) {
    std::vector<Frame> frames;
    frames.reserve(t.frames.size());
    for (std::size_t k = 0; k < t.frames.size(); ++k) frames.push_back({static_cast<double>(k), t.frames[k]});
    write_frames_jsonl(os, frames);
}

std::vector<Frame> read_frames_jsonl(std::istream& is) {
    std::vector<Frame> out;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const json l = json::parse(line);
        Box b(coords_from(l.at("lower")), coords_from(l.at("upper")));
        if (l.at("dim").get<std::size_t>() != b.dim()) throw std::runtime_error("frame: dim does not match corners");
        out.push_back({l.at("time").get<double>(), Configuration(b, bits_from(l.at("bits").get<std::string>(), b.size()))});
    }
    return out;
}

void write_passage_csv(std::ostream& os, const PassageField& f) {
    write_coord_header(os, f.box.dim());
    os << "s_x\n";
    for (std::size_t i = 0; i < f.times.size(); ++i) {
        write_site(os, f.box.site_at(i));
        os << format_double(f.times[i]) << '\n';
    }
}

void write_renorm_passage_csv(std::ostream& os, const RenormPassageField& f) {
    const std::size_t d = f.xi.empty() ? 0 : f.xi.front().dim();
    write_coord_header(os, d);
    os << "t_x,t_tilde,base_count\n";
    for (std::size_t i = 0; i < f.xi.size(); ++i) {
        write_site(os, f.xi[i]);
        os << format_double(f.t[i]) << ',' << format_double(f.t_tilde[i]) << ',' << f.base_count[i] << '\n';
    }
}

void write_good_box_csv(std::ostream& os, const GoodBoxField& f) {
    const std::size_t d = f.sites.empty() ? 0 : f.sites.front().dim();
    write_coord_header(os, d);
    os << "tau,good\n";
    for (std::int64_t tau = 1; tau <= f.taus; ++tau)
        for (std::size_t i = 0; i < f.sites.size(); ++i) {
            write_site(os, f.sites[i]);
            os << tau << ',' << (f.at(i, tau) ? 1 : 0) << '\n';
        }
}

void write_survival_csv(std::ostream& os, const SurvivalCurve& c) {
    os << "t,p_hat,ci_lo,ci_hi,n_replicas\n";
    for (std::size_t k = 0; k < c.times.size(); ++k)
        os << format_double(c.times[k]) << ',' << format_double(c.p_hat[k]) << ',' << format_double(c.ci_lo[k])
           << ',' << format_double(c.ci_hi[k]) << ',' << c.replicas << '\n';
}

void write_mixing_csv(std::ostream& os, const std::vector<MixingEstimate>& rows) {
    os << "n,t_hat,ci_lo,ci_hi,lower_hat,lower_ci_lo,lower_ci_hi,censored\n";
    for (const auto& r : rows)
        os << r.n << ',' << format_double(r.t_hat) << ',' << format_double(r.ci_lo) << ',' << format_double(r.ci_hi)
           << ',' << format_double(r.lower_hat) << ',' << format_double(r.lower_ci_lo) << ','
           << format_double(r.lower_ci_hi) << ',' << r.censored << '\n';
}

void write_tail_csv(std::ostream& os, const TailTable& t) {
    os << "ell,count,censored_count,p_hat,ci_lo,ci_hi\n";
    for (std::size_t k = 0; k < t.ell.size(); ++k)
        os << format_double(t.ell[k]) << ',' << t.count[k] << ',' << t.censored[k] << ','
           << format_double(t.p_hat[k]) << ',' << format_double(t.ci_lo[k]) << ',' << format_double(t.ci_hi[k])
           << '\n';
}

json violations_to_json(const GrandCouplingReport& r) {
    json a = json::array();
    for (const auto& v : r.violations)
        a.push_back({{"time", v.time}, {"site", coords_json(v.site)}, {"kind", v.kind}, {"init", v.init_index}});
    return a;
}

json violations_to_json(const RenormCheckReport& r) {
    json a = json::array();
    for (const auto& v : r.violations)
        a.push_back({{"x", coords_json(v.x)}, {"tau", v.tau}, {"y", coords_json(v.y)}, {"time", v.t}});
    return a;
}

json violations_to_json(const PassageCouplingReport& r) {
    json a = json::array();
    for (const auto& v : r.violations) {
        json e = {{"x", coords_json(v.x)}, {"z", coords_json(v.z)}, {"t_x", v.t_x}};
        if (std::isfinite(v.coupled_from))
            e["coupled_from"] = v.coupled_from;
        else
            e["coupled_from"] = nullptr;
        a.push_back(e);
    }
    return a;
}

json fit_to_json(const ExpFit& f) {
    auto num = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
    return {{"underpowered", f.underpowered}, {"decaying", f.decaying},   {"rate", num(f.rate)},
            {"intercept", num(f.intercept)},  {"r_squared", num(f.r_squared)}, {"rate_ci_lo", num(f.rate_ci_lo)},
            {"rate_ci_hi", num(f.rate_ci_hi)}, {"points_used", f.points_used}, {"decades", num(f.decades)},
            {"note", f.note}};
}

CsvTable read_csv(std::istream& is) {
    CsvTable t;
    std::string line;
    auto split = [](const std::string& l) {
        std::vector<std::string> out;
        std::stringstream ss(l);
        std::string cell;
        while (std::getline(ss, cell, ',')) out.push_back(cell);
        return out;
    };
    if (!std::getline(is, line)) return t;
    t.header = split(line);
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto cells = split(line);
        if (cells.size() != t.header.size()) throw std::runtime_error("csv: ragged row");
        std::vector<double> row;
        for (const auto& c : cells) {
            if (c == "inf")
                row.push_back(INFINITY);
            else if (c == "-inf")
                row.push_back(-INFINITY);
            else if (c == "nan")
                row.push_back(NAN);
            else {
                double v = 0;
                auto r = std::from_chars(c.data(), c.data() + c.size(), v);
                if (r.ec != std::errc() || r.ptr != c.data() + c.size())
                    throw std::runtime_error("csv: non-numeric cell '" + c + "'");
                row.push_back(v);
            }
        }
        t.rows.push_back(std::move(row));
    }
    return t;
}

}  // namespace kcm
