#pragma once

// k-connected components, regularised sets, the chain-extraction algorithm
// over decorated sets, decorated set systems and empirical cluster-diameter
// tails for CA with death, subcritical BP and continuous-time trajectories.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "kcmlab/coupling.hpp"
#include "kcmlab/dynamics.hpp"
#include "kcmlab/lattice.hpp"

namespace kcm {

using PointSet = std::vector<LatticeVec>;  // sorted, unique

/// Integer squared radius for a real k: floor(k^2) with a 1e-9 tolerance,
/// so k = sqrt(3) gives 3.
std::int64_t k_squared(double k);
/// Non-zero integer vectors of squared norm <= k2.
std::vector<LatticeVec> ball_offsets(std::size_t dim, std::int64_t k2);

PointSet make_point_set(std::vector<LatticeVec> points);

/// Maximal subset of the cloud k-connected to the seed.
PointSet k_component(const PointSet& cloud, const LatticeVec& seed, double k);
std::vector<PointSet> k_components(const PointSet& cloud, double k);
bool is_k_connected(const PointSet& set, double k);

/// Squared diameter (exact); 0 for singletons. Empty sets are rejected.
std::int64_t diameter2(const PointSet& set);
double diameter(const PointSet& set);
/// Squared distance between two non-empty sets.
std::int64_t set_distance2(const PointSet& a, const PointSet& b);

/// {x : d(x,Z) <= 3(1 + diam Z)}.
PointSet regularize(const PointSet& z);
/// Exact membership test for the regularised set, given diam(Z)^2.
bool in_regularized(const LatticeVec& x, const PointSet& z, std::int64_t diam2);

struct DecoratedSet {
    PointSet z;
    std::string gamma;
    friend bool operator==(const DecoratedSet&, const DecoratedSet&) = default;
};

struct Chain {
    std::vector<DecoratedSet> sets;
    LatticeVec anchor;
    LatticeVec target;
};

/// One iteration of the extraction algorithm.
struct ChainStep {
    std::size_t i;                     // i_t
    std::vector<std::size_t> j_removed;  // J_t
    std::vector<std::size_t> members;    // I_t
    std::vector<std::uint8_t> covered;   // p_j in X_t, per path index
};

struct ChainClaims {
    bool monotone = true;        // X_t cap P is non-decreasing
    bool strict_progress = true; // p_{i_t} in X_t \ X_{t-1}
    bool terminates = true;      // at most |P| iterations
    bool disjoint = true;        // Z's of I_t pairwise disjoint
    bool connected = true;       // X_t k-connected
    bool covers = true;          // P subset of X_t at the end
    bool nesting = true;         // bar Z_{p_j} subset of bar Z_{p_{i_t}} for j in J_t
    std::vector<std::string> failures;
    bool all() const noexcept {
        return monotone && strict_progress && terminates && disjoint && connected && covers && nesting;
    }
};

struct ChainExtraction {
    Chain chain;
    std::vector<std::size_t> final_members;  // I_t
    std::vector<std::size_t> order;          // i'_1..i'_m
    std::vector<ChainStep> steps;            // steps[0] is the initial state
    ChainClaims claims;
};

struct ExtractOptions {
    /// Check k-connectivity of every X_t (otherwise only the last one).
    bool check_every_step = true;
};

/// Runs the extraction over a k-connected path with one decorated set per
/// path point (sets[j] contains path[j]) and returns the chain from the
/// first to the last path point.
ChainExtraction extract_chain(const std::vector<LatticeVec>& path, const std::vector<DecoratedSet>& sets,
                              double k, const ExtractOptions& opt = {});

/// Step-by-step evaluation of the claims on a finished extraction.
ChainClaims check_chain_claims(const std::vector<LatticeVec>& path, const std::vector<DecoratedSet>& sets,
                               double k, const std::vector<ChainStep>& steps, bool every_step = true);

/// Disjointness, d(bar V_j, bar V_{j+1}) <= k, x in bar V_1 and some y in
/// bar V_m with d(x,y) >= n.
bool verify_chain(const Chain& chain, const LatticeVec& x, double n, double k);

nlohmann::json chain_to_json(const Chain& c);
Chain chain_from_json(const nlohmann::json& j);

struct ChainInstance {
    std::vector<LatticeVec> path;
    std::vector<DecoratedSet> sets;
    double k = 1;
};

/// Random k-connected path of 1..max_path points with, for every point, a
/// decorated set of 1..max_set nearby points containing it (sometimes the
/// set of an earlier point that already contains it).
ChainInstance random_chain_instance(std::uint64_t seed, std::size_t dim, double k, std::size_t max_path = 30,
                                    std::size_t max_set = 6);

/// Family of decorated sets with occurrence events.
class DecoratedSetSystem {
public:
    virtual ~DecoratedSetSystem() = default;
    virtual std::size_t dim() const = 0;
    /// Decorated sets (Z, gamma) with p in Z and |Z| <= max_size.
    virtual std::vector<DecoratedSet> enumerate(const LatticeVec& p, std::size_t max_size) const = 0;
    /// Whether E(Z, gamma) holds for the sample keyed by `seed`.
    virtual bool occurs(const DecoratedSet& s, std::uint64_t seed) const = 0;
    virtual double constant_c() const = 0;
};

/// diam(Z) <= C |Z|.
bool satisfies_diameter_condition(const DecoratedSetSystem& sys, const DecoratedSet& s);
/// counts[n] = number of decorated sets with |Z| = n containing p, n <= max_n.
std::vector<std::size_t> count_by_size(const DecoratedSetSystem& sys, const LatticeVec& p, std::size_t max_n);

/// Vertex sets of nearest-neighbour paths with E(Z) = {xi_x = 1 for x in Z},
/// xi i.i.d. Bernoulli(rho).
class BernoulliPathSystem : public DecoratedSetSystem {
public:
    BernoulliPathSystem(std::size_t dim, double rho);
    std::size_t dim() const override { return dim_; }
    std::vector<DecoratedSet> enumerate(const LatticeVec& p, std::size_t max_size) const override;
    bool occurs(const DecoratedSet& s, std::uint64_t seed) const override;
    double constant_c() const override { return 4.0 * static_cast<double>(dim_); }
    bool open(const LatticeVec& x, std::uint64_t seed) const;

private:
    std::size_t dim_;
    double rho_;
};

struct TailTable {
    std::vector<double> ell;
    std::vector<std::size_t> count;     // samples with diam >= ell
    std::vector<std::size_t> censored;  // boundary-limited samples with observed diam < ell
    std::size_t samples = 0;
    std::vector<double> p_hat, ci_lo, ci_hi;
    std::size_t components = 0;
    std::size_t censored_components = 0;
};

struct CaTailOptions {
    double k = 1.7320508075688772;
    std::vector<double> ells;
    std::size_t burn_in = 0;       // frames skipped
    std::uint8_t material = 0;     // state forming the clusters
    Topology topology = Topology::Torus;
    /// Sample points lie at least this far from non-periodic ends (time
    /// ends, box faces); -1 means ceil(max ell).
    int sample_margin = -1;
};

/// Space-time clusters of a discrete trajectory (unit time spacing).
TailTable cluster_tail(const DiscreteTrajectory& traj, const CaTailOptions& opt);

struct BpTailOptions {
    double p = 0.05;
    int size = 128;                // window {0..size-1}^d
    double k = 1;
    std::vector<double> ells;
    std::size_t replicas = 1;
    std::uint64_t seed = 1;
    unsigned jobs = 1;
    /// Sample points lie at least this far from the window faces; -1 means
    /// ceil(max ell).
    int sample_margin = -1;
};

/// Components of eventually infected sites: BP closure of Bernoulli(p) on
/// the window with empty boundary. Requires a subcritical family.
TailTable cluster_tail_bp(const UpdateFamily& family, const BpTailOptions& opt);

struct ContinuousTailOptions {
    double k = 1;
    std::vector<double> ells;
    std::uint8_t material = 0;
    double t_start = 0;
    bool censor_spatial_edges = true;
};

/// Space-time clusters of a continuous trajectory built from (site, interval)
/// atoms, sampled on the unit time grid t_start, t_start + 1, ...
TailTable cluster_tail(const Trajectory& traj, const ContinuousTailOptions& opt);

/// Points (ell, count, samples) usable for an exponential fit: those with no
/// censored samples.
DecaySeries tail_series(const TailTable& t);

/// 0, 1, ..., max_ell.
std::vector<double> integer_grid(int max_ell);

}  // namespace kcm
