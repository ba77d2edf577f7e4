#pragma once

// Renormalised space-time boxes: geometry, good boxes and the renormalised
// BP with death, passage times of the oriented CP, and warm-up densities.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>
#include <nlohmann/json_fwd.hpp>

#include "kcmlab/clock.hpp"
#include "kcmlab/dynamics.hpp"
#include "kcmlab/lattice.hpp"

namespace kcm {

using Rational = boost::multiprecision::cpp_rational;

/// B_{x,tau}: sites a with x_i W_i <= <a,u_i> < (x_i+1) W_i for every i,
/// times [tau T, (tau+1) T), where W_i = R <lambda_i v_i, u_i>
/// = lambda_i |v_i|^2 R.
struct BoxGeometry {
    UpdateRule u0;
    RationalDirection u;
    std::vector<LatticeVec> u_dirs;
    std::vector<std::vector<Rational>> v;
    std::vector<Rational> lambda;
    std::vector<LatticeVec> w;          // lambda_i v_i, integral
    std::vector<std::int64_t> width;    // W_i
    int R = 1;
    double T = 1;
    std::int64_t norm2 = 0;             // squared norm used in the covering bound

    std::size_t dim() const noexcept { return u_dirs.size(); }
    /// The renormalised site x with z in B^_x.
    LatticeVec renormalised(const LatticeVec& z) const;
    bool in_base(const LatticeVec& z, const LatticeVec& x) const { return renormalised(z) == x; }
    /// All integer points of B^_x, lexicographically sorted.
    std::vector<LatticeVec> base_sites(const LatticeVec& x) const;
    /// |B^| = R^d |det(w)|.
    std::int64_t base_volume() const;
    /// Failed invariants as messages (empty when valid).
    std::vector<std::string> check_invariants() const;
};

/// Directions u_i = m u + e_i for the smallest m in [1, budget] keeping U0
/// strictly inside every H_{u_i}; throws GeometryError otherwise or when the
/// covering inclusion fails for this R.
BoxGeometry build_geometry(const UpdateRule& u0, const RationalDirection& u, int R, double T,
                           int perturbation_budget = 16);
/// Same with the directions given explicitly.
BoxGeometry build_geometry_from_directions(const UpdateRule& u0, const RationalDirection& u,
                                           const std::vector<LatticeVec>& u_dirs, int R, double T);

nlohmann::json geometry_to_json(const BoxGeometry& g);
/// Rebuilds from the directions and checks the stored fields agree.
BoxGeometry geometry_from_json(const nlohmann::json& j);

/// Events of one site in (t0, t1], sorted by time.
using EventSource = std::function<std::vector<ClockEvent>(const LatticeVec&, double, double)>;
EventSource clock_source(const ClockField& clocks);

struct GoodBoxDetail {
    bool marks_ok = false;  // condition (i)
    bool chain_ok = false;  // condition (ii)
    bool good() const noexcept { return marks_ok && chain_ok; }
};

/// Sites and time window every good-box bit may depend on.
struct DependencyRegion {
    std::vector<LatticeVec> sites;
    double t0 = 0, t1 = 0;
};
DependencyRegion good_box_dependency(const BoxGeometry& g, const LatticeVec& x, std::int64_t tau);

/// Good-box event for (x, tau), tau >= 1. With `within`, only sites of that
/// box are read (sites outside are frozen boundary cells).
GoodBoxDetail good_box_detail(const BoxGeometry& g, const EventSource& events, const LatticeVec& x,
                              std::int64_t tau, double q0, const Box* within = nullptr);
bool good_box(const BoxGeometry& g, const ClockField& clocks, const LatticeVec& x, std::int64_t tau,
              double q0, const Box* within = nullptr);

/// Renormalised sites whose base meets the box, lexicographically sorted.
std::vector<LatticeVec> renormalised_sites(const BoxGeometry& g, const Box& box);

struct GoodBoxField {
    std::vector<LatticeVec> sites;
    std::int64_t taus = 0;                 // tau = 1..taus
    std::vector<std::uint8_t> bits;        // bits[(tau - 1) * sites.size() + i]
    bool at(std::size_t i, std::int64_t tau) const { return bits[static_cast<std::size_t>(tau - 1) * sites.size() + i] != 0; }
    double good_fraction() const;
};
GoodBoxField good_box_field(const BoxGeometry& g, const ClockField& clocks, const Box& box,
                            std::int64_t taus, double q0);

struct RenormViolation {
    LatticeVec x;
    std::int64_t tau;
    LatticeVec y;
    double t;
};

struct RenormCheckReport {
    std::vector<RenormViolation> violations;
    std::size_t violation_count = 0;
    std::size_t boxes_checked = 0;
    std::size_t omega_ones = 0;  // (x, tau) with renormalised state 1
    double good_fraction = 0;
    std::int64_t taus = 0;
    bool passed() const noexcept { return violation_count == 0; }
};

/// Builds the renormalised BP with deaths at bad boxes on the sites whose
/// base meets the CP box (other sites are held at 1) and checks that no
/// site of B_{x,tau} is healthy while the renormalised state at (x, tau) is 1.
RenormCheckReport renormalised_bp_check(const BoxGeometry& g, const ClockField& clocks,
                                        const Trajectory& cp, double q0,
                                        std::size_t max_recorded = 1000);

/// Initial condition constant on each base: zeta_y(0) = xi_x for y in B^_x,
/// xi ~ Bernoulli(p) keyed by x.
Configuration block_bernoulli(const BoxGeometry& g, const Box& box, double p, std::uint64_t seed,
                              std::uint64_t replica = 0);

struct RenormPassageField {
    std::vector<LatticeVec> xi;        // renormalised sites, sorted by coordinate sum
    std::vector<double> t;             // t_x
    std::vector<double> t_tilde;       // max over predecessors
    std::vector<std::size_t> base_count;  // |B^_x cap Lambda|

    /// t_x, 0 off Xi.
    double at(const LatticeVec& x) const;
    double max() const;
};

RenormPassageField renorm_passage_times(const BoxGeometry& g, const Box& lambda, double q0,
                                        const ClockField& clocks);

struct PassageViolation {
    LatticeVec x;
    LatticeVec z;
    double t_x;
    double coupled_from;  // +inf if still different at the horizon
};

struct PassageCouplingReport {
    std::vector<PassageViolation> violations;
    std::size_t violation_count = 0;
    std::size_t sites_checked = 0;
    double horizon = 0;
    bool passed() const noexcept { return violation_count == 0; }
};

/// Runs the {U0}-CP from 1 and from 0 on the box with infected boundary on
/// shared clocks up to max t_x + 1 and checks zeta^1_z(t) = zeta^0_z(t) for
/// all z in B^_x and t >= t_x.
PassageCouplingReport passage_coupling_check(const BoxGeometry& g, const Box& lambda, double q0,
                                             const ClockField& clocks, const RenormPassageField& f,
                                             std::size_t max_recorded = 1000);

struct WarmupOptions {
    double q = 0.99;
    double p = 0.3;
    std::vector<LatticeVec> base_vectors;  // v'_i
    int R = 8;
    double T = 50;
    int window = 24;   // boxes whose base lies in the centred box of this half-width
    int buffer = 16;
    std::size_t replicas = 10;
    std::uint64_t seed = 1;
    unsigned jobs = 1;
};

struct WarmupEstimate {
    std::size_t boxes = 0;
    std::size_t full = 0;
    double density = 0, ci_lo = 0, ci_hi = 0;
    std::size_t base_size = 0;
};

/// Fraction of bases sum_i v'_i [0,R) + sum_i x_i R v'_i fully infected at
/// time T by the KCM from Bernoulli(p), with a Wilson interval.
WarmupEstimate measure_warmup(const UpdateFamily& family, const WarmupOptions& opt);

}  // namespace kcm
