#pragma once

// Orange sets, the grand coupling of KCM trajectories through a {U0}-CP, and
// the estimators built on it: coupling-time mixing estimates, survival curves
// of the orange set and exponential fits.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "kcmlab/dynamics.hpp"

namespace kcm {

/// Incremental orange-set bookkeeping for one CP on a box.
class OrangeTracker {
public:
    OrangeTracker(const Box& box, std::int64_t norm2);

    /// O = healthy sites of the given CP configuration.
    void reset(const Configuration& cp_state);
    /// Applies the rule at a clock event of `site`, given the CP value after
    /// the event. Returns +1 if the site joined O, -1 if it left, 0 otherwise.
    int update(std::uint32_t site, bool cp_value) noexcept {
        const auto c = cell_of_[site];
        if (cp_value) {
            if (!orange_[c]) return 0;
            orange_[c] = 0;
            --size_;
            return -1;
        }
        if (orange_[c] || drop_additions) return 0;
        for (auto d : ball_)
            if (orange_[static_cast<std::ptrdiff_t>(c) + d]) {
                orange_[c] = 1;
                ++size_;
                return 1;
            }
        return 0;
    }
    bool contains(std::uint32_t site) const noexcept { return orange_[cell_of_[site]] != 0; }
    std::size_t size() const noexcept { return size_; }
    std::vector<std::uint8_t> members() const;

    /// Test hook: never add sites, which breaks the coupling inclusion.
    bool drop_additions = false;

private:
    std::vector<std::uint32_t> cell_of_;
    std::vector<std::ptrdiff_t> ball_;
    std::vector<std::uint8_t> orange_;
    std::size_t size_ = 0;
};

struct OrangeChange {
    double time;
    std::uint32_t site;
    std::uint8_t member;
};

struct OrangeProcess {
    Box box;
    double start_time = 0;
    double horizon = 0;
    std::vector<std::uint8_t> initial;
    std::vector<OrangeChange> changes;
    /// First event time with O empty (start_time if empty initially).
    std::optional<double> empty_time;

    std::vector<std::uint8_t> members_at(double t) const;
};

struct OrangeOptions {
    /// Orange is initialised to the healthy sites at this time.
    double start_time = 0;
    bool drop_additions = false;
    /// Test hook: start from O empty instead of the healthy sites.
    bool empty_start = false;
};

/// Replays the clock events of a CP trajectory and tracks O_t with
/// threshold ||U|| (compared through squares).
OrangeProcess track_orange(const Trajectory& cp, double family_norm, const OrangeOptions& opt = {});
OrangeProcess track_orange_norm2(const Trajectory& cp, std::int64_t norm2,
                                 const OrangeOptions& opt = {});

struct CouplingCertificate {
    std::optional<double> empty_time;
    double horizon = 0;
};

struct CouplingViolation {
    double time;
    LatticeVec site;
    std::string kind;  // "domination", "inclusion" or "after-certificate"
    std::size_t init_index;
};

struct GrandCouplingReport {
    std::vector<CouplingViolation> violations;  // first max_recorded only
    std::size_t violation_count = 0;
    CouplingCertificate certificate;
    std::size_t events_checked = 0;
    UpdateRule u0;
    RationalDirection u;

    bool passed() const noexcept { return violation_count == 0; }
};

struct GrandCouplingOptions {
    /// Test hook: the tracker starts empty and never adds sites.
    bool corrupt_tracker = false;
    std::size_t max_recorded = 1000;
};

/// Runs the {U0}-CP from xi (parameter q0), the KCM from 1 and from every
/// xi' (parameter q) by independent simulation, then replays them together
/// with the orange tracker and checks zeta <= eta' and
/// {eta^1 != eta'} subset O at every clock event.
GrandCouplingReport grand_coupling_check(const UpdateFamily& family, const Domain& domain, double q,
                                         double q0, double horizon, const ClockField& clocks,
                                         const Configuration& cp_init,
                                         const std::vector<Configuration>& kcm_inits,
                                         const GrandCouplingOptions& opt = {});

/// The same checks on given trajectories: a {U0}-CP, the KCM from 1 and
/// further KCM trajectories on the same box, clocks and horizon.
GrandCouplingReport check_coupling(const Trajectory& cp, const Trajectory& eta1,
                                   const std::vector<Trajectory>& etas, std::int64_t norm2,
                                   const GrandCouplingOptions& opt = {});

struct MixingOptions {
    double delta = 0.25;
    std::size_t replicas = 200;
    std::uint64_t seed = 1;
    std::optional<double> q0;       // defaults to q
    std::optional<double> max_time; // defaults to 200 n + 100
    double burn_in = 0;             // orange initialised at this time
    int ell = 1;                    // half-width of the centred box of the lower-bound proxy
    std::size_t bootstrap = 1000;
    unsigned jobs = 1;
};

struct MixingReplica {
    double certificate_time;  // +inf if O never emptied before max_time
    double kcm_meet_time;     // last time eta^1 and eta^0 became equal
    double lower_proxy;       // first change inside the centred box, from all zeros
    bool kcm_agree;           // eta^1 == eta^0 at the certificate time
};

struct MixingEstimate {
    int n = 0;
    double t_hat = 0, ci_lo = 0, ci_hi = 0;
    double lower_hat = 0, lower_ci_lo = 0, lower_ci_hi = 0;
    std::size_t censored = 0;
    bool kcm_agreement = true;
    std::vector<MixingReplica> replicas;
};

/// Upper-bound estimator of t_mix(delta) on {1..n}^d with infected boundary.
MixingEstimate estimate_mixing_time(const UpdateFamily& family, int n, double q,
                                    const MixingOptions& opt);

struct SurvivalOptions {
    double q = 0.97;
    double q0 = 0.97;
    double p_init = 0.95;
    int window = 0;   // observed window: centred box of this half-width
    int buffer = 12;  // simulated box: centred box of half-width window + buffer
    double horizon = 60;
    std::size_t replicas = 1000;
    std::uint64_t seed = 1;
    std::vector<double> times;  // empty: 0 plus a geometric grid
    double t_min = 0.25;
    double ratio = 1.15;
    bool validate_buffer = true;
    std::size_t validation_replicas = 16;
    int max_buffer = 256;
    unsigned jobs = 1;
};

struct SurvivalCurve {
    std::vector<double> times;
    std::vector<std::size_t> hits;
    std::size_t replicas = 0;
    std::vector<double> p_hat, ci_lo, ci_hi;
    /// hits_by_replica[r][k]: 0 in O at times[k] for replica r.
    std::vector<std::vector<std::uint8_t>> hits_by_replica;
    int buffer_used = 0;
    bool buffer_validated = false;
};

/// P(0 in O_t) for the {U0}-CP started from Bernoulli(p_init) on a large
/// centred box with infected boundary.
SurvivalCurve survival_curve(const UpdateFamily& family, const SurvivalOptions& opt);

/// Grid of times used when SurvivalOptions::times is empty.
std::vector<double> geometric_grid(double t_min, double ratio, double horizon);

struct DecaySeries {
    std::vector<double> x;
    std::vector<double> successes;
    std::vector<double> trials;
    /// Optional per-replica indicators for the bootstrap ([replica][point]).
    std::vector<std::vector<std::uint8_t>> replica_hits;
};

struct ExpFit {
    bool underpowered = false;
    bool decaying = false;
    double rate = 0, intercept = 0, r_squared = 0;
    double rate_ci_lo = 0, rate_ci_hi = 0;
    std::size_t points_used = 0;
    double decades = 0;  // log10(max p / min p) over the fitted points
    std::string note;
};

struct FitOptions {
    double min_successes = 10;
    std::size_t min_points = 4;
    std::size_t bootstrap = 1000;
    std::uint64_t seed = 1;
};

/// Weighted least squares of log p against x, p = successes / trials.
ExpFit fit_exponential(const DecaySeries& s, const FitOptions& opt = {});
ExpFit fit_exponential(const SurvivalCurve& c, const FitOptions& opt = {});

}  // namespace kcm
