#pragma once

// Continuous-time KCM and CP driven by a ClockField, discrete-time BP and
// cellular automata with death, LPP passage times and the monotone-set chain.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <variant>
#include <vector>

#include "kcmlab/clock.hpp"
#include "kcmlab/lattice.hpp"

namespace kcm {

enum class ProcessKind { KCM, CP };

std::string_view to_string(ProcessKind k);

struct StateChange {
    double time;
    std::uint32_t site;  // index in the domain box
    std::uint8_t value;

    friend bool operator==(const StateChange&, const StateChange&) = default;
};

struct Frame {
    double time;
    Configuration config;
};

/// Piecewise-constant record of a continuous-time process on a box.
struct Trajectory {
    ProcessKind kind;
    UpdateFamily family;
    Domain domain;
    double q;
    double horizon;
    ClockField clocks;
    Configuration initial;
    std::vector<StateChange> events;
    std::vector<Frame> frames;

    /// State after every change with time <= t.
    Configuration state_at(double t) const;
};

struct DiscreteTrajectory {
    std::vector<Configuration> frames;
};

/// Padded lattice holding a box plus a shell of boundary cells, so that
/// offset lookups never leave the array.
class PaddedLattice {
public:
    PaddedLattice(const Domain& domain, int pad, std::int64_t boundary_range2);

    const Box& box() const noexcept { return box_; }
    const Box& padded() const noexcept { return padded_; }
    std::size_t cells() const noexcept { return padded_.size(); }
    std::uint32_t cell(std::size_t box_index) const { return cell_of_[box_index]; }
    const std::vector<std::uint32_t>& cell_map() const noexcept { return cell_of_; }
    std::ptrdiff_t delta(const LatticeVec& y) const;

    /// Padded state: box values from c, boundary cells from the domain.
    std::vector<std::uint8_t> state(const Configuration& c) const;
    /// Padded array with 1 on box cells and 0 elsewhere.
    std::vector<std::uint8_t> inside_mask() const;

private:
    Box box_, padded_;
    int pad_;
    std::vector<std::uint32_t> cell_of_;
    std::vector<std::uint8_t> boundary_;
};

/// Rules compiled to padded-array deltas.
class CompiledFamily {
public:
    CompiledFamily(const UpdateFamily& family, const PaddedLattice& lat);

    bool satisfied(const std::uint8_t* state, std::uint32_t cell) const noexcept {
        for (const auto& r : rules_) {
            bool all = true;
            for (auto d : r)
                if (!state[static_cast<std::ptrdiff_t>(cell) + d]) {
                    all = false;
                    break;
                }
            if (all) return true;
        }
        return false;
    }

private:
    std::vector<std::vector<std::ptrdiff_t>> rules_;
};

/// Single-process event engine. apply() realises one clock event.
class Simulator {
public:
    Simulator(ProcessKind kind, const UpdateFamily& family, const Domain& domain,
              const Configuration& init, double q);

    /// Returns true iff the bit at the site changed.
    bool apply(std::uint32_t site, double mark) noexcept {
        const auto c = lat_.cell(site);
        std::uint8_t& s = state_[c];
        std::uint8_t next = s;
        if (kind_ == ProcessKind::KCM) {
            if (rules_.satisfied(state_.data(), c)) next = mark <= q_ ? 1 : 0;
        } else {
            if (mark > q_)
                next = 0;
            else if (rules_.satisfied(state_.data(), c))
                next = 1;
        }
        if (next == s) return false;
        s = next;
        ones_ += next ? 1 : -1;
        return true;
    }

    std::uint8_t at(std::uint32_t site) const noexcept { return state_[lat_.cell(site)]; }
    bool constraint(std::uint32_t site) const noexcept {
        return rules_.satisfied(state_.data(), lat_.cell(site));
    }
    std::int64_t ones() const noexcept { return ones_; }
    Configuration configuration() const;
    const PaddedLattice& lattice() const noexcept { return lat_; }

private:
    ProcessKind kind_;
    double q_;
    PaddedLattice lat_;
    CompiledFamily rules_;
    std::vector<std::uint8_t> state_;
    std::int64_t ones_ = 0;
};

Trajectory run_kcm(const UpdateFamily& family, const Domain& domain, const Configuration& init,
                   double q, double horizon, const ClockField& clocks,
                   const std::vector<double>& frame_times = {});
Trajectory run_cp(const UpdateFamily& family, const Domain& domain, const Configuration& init,
                  double q, double horizon, const ClockField& clocks,
                  const std::vector<double>& frame_times = {});
Trajectory run_process(ProcessKind kind, const UpdateFamily& family, const Domain& domain,
                       const Configuration& init, double q, double horizon,
                       const ClockField& clocks, const std::vector<double>& frame_times = {});

/// True iff re-simulating from the stored initial state, parameters and
/// clocks reproduces the stored events exactly.
bool consistent_with_clocks(const Trajectory& t);

/// Synchronous BP: steps+1 frames.
DiscreteTrajectory run_bp(const UpdateFamily& family, const Configuration& init, std::size_t steps,
                          const Domain& domain);
/// Fixpoint of BP.
Configuration bp_closure(const UpdateFamily& family, const Configuration& init, const Domain& domain);

/// Boolean function of the states at x + support[j]; bit j of the table
/// index is the state at x + support[j].
struct LocalMap {
    std::vector<LatticeVec> support;
    std::vector<std::uint8_t> table;

    static LocalMap from_function(std::vector<LatticeVec> support,
                                  const std::function<bool(std::span<const std::uint8_t>)>& f);
    /// The map omega_x OR c_x(omega) of BP for the given family.
    static LocalMap from_bp(const UpdateFamily& family);
    bool attractive() const;
};

enum class Topology { Torus, Box };

/// CA with delta death. Death at (x,t) iff the keyed uniform for (x,t) is
/// below delta, so runs at different delta with the same seed are coupled.
DiscreteTrajectory run_ca_death(const LocalMap& map, double delta, const Configuration& init,
                                std::size_t steps, std::uint64_t seed,
                                Topology topology = Topology::Torus,
                                const Boundary& boundary = AllZeros{}, std::uint64_t replica = 0);

struct ExponentialWeights {
    std::uint64_t seed;
    std::uint64_t replica = 0;
};
/// T(x) = first ring of x after all its predecessors have their passage time.
struct ClockWeights {
    ClockField clocks;
};
using WeightSource = std::variant<ExponentialWeights, ClockWeights>;

struct PassageField {
    Box box;
    std::vector<double> times;

    double at(const LatticeVec& x) const { return times[box.index_of(x)]; }
    double max() const;
};

PassageField lpp_times(const UpdateRule& rule, const Box& box, const WeightSource& weights);

/// The {-e_1,...,-e_d} rule.
UpdateRule standard_lpp_rule(std::size_t d);

struct MonotoneSetRun {
    Box cube;
    /// Additions in time order: (time, index of the added site in cube).
    std::vector<std::pair<double, std::uint32_t>> additions;
    double absorbed_time = 0;
};

MonotoneSetRun run_monotone_set_chain(int ell, int d, const ClockField& clocks);
bool is_monotone_set(const Box& cube, const std::vector<std::uint8_t>& member);

}  // namespace kcm
