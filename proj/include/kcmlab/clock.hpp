#pragma once

// Graphical construction: one rate-1 Poisson process per site with a uniform
// mark attached to every point.
//
// Key schedule. For site x and unit time block m >= 0 the points of P_x in
// (m, m+1) are derived from key_m = fold(fold_coords(K, x), m), where
// K = stream_key(seed, replica, Stream::Clock):
//   N      = Poisson(1) inverse CDF of to_open_unit(fold(key_m, 0))
//   time_i = m + to_open_unit(fold(key_m, 2i + 1))        i = 0..N-1
//   mark_i = to_open_unit(fold(key_m, 2i + 2))
// and the N pairs are sorted by time. Any window of any site can therefore be
// regenerated independently, and splitting a window never changes the result.

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "kcmlab/lattice.hpp"

namespace kcm {

struct ClockEvent {
    LatticeVec site;
    double time = 0;
    double mark = 0;

    friend bool operator==(const ClockEvent&, const ClockEvent&) = default;
};

/// A ring inside a block, without the site.
struct Ring {
    double time;
    double mark;
};

class ClockField {
public:
    ClockField(std::uint64_t seed, std::size_t dim, std::uint64_t replica = 0);

    std::uint64_t seed() const noexcept { return seed_; }
    std::size_t dim() const noexcept { return dim_; }
    std::uint64_t replica() const noexcept { return replica_; }

    std::uint64_t site_key(std::span<const int> site) const noexcept;
    /// Rings of a site (given by its key) in (m, m+1), sorted by time.
    static void block_rings(std::uint64_t site_key, std::int64_t m, std::vector<Ring>& out);

    /// Events of one site with time in (t0, t1], increasing.
    std::vector<ClockEvent> events_in(const LatticeVec& site, double t0, double t1) const;
    /// First event of the site strictly after t.
    ClockEvent first_event_after(const LatticeVec& site, double t) const;

    friend bool operator==(const ClockField&, const ClockField&) = default;

private:
    std::uint64_t seed_;
    std::size_t dim_;
    std::uint64_t replica_;
    std::uint64_t key_;
};

/// Global time-ordered merge over a finite site set, ties broken by
/// lexicographic site order.
std::vector<ClockEvent> merged_event_stream(const ClockField& field,
                                            const std::vector<LatticeVec>& sites, double t0,
                                            double t1);

/// Streams the merged events of a fixed list of sites block by block. Sites
/// are referred to by their position in the list; when the list is in
/// lexicographic order (as for Box::site_at) the order matches
/// merged_event_stream.
class BlockStream {
public:
    struct Event {
        double time;
        std::uint32_t site;
        double mark;
    };

    BlockStream(const ClockField& field, const std::vector<LatticeVec>& sites);
    BlockStream(const ClockField& field, const Box& box);

    /// Events with time in (m, m+1), sorted.
    const std::vector<Event>& block(std::int64_t m);

    /// Calls f(event) for every event with time in (t0, t1] in order; f may
    /// return false to stop early. Returns false iff stopped early.
    template <class F>
    bool for_each(double t0, double t1, F&& f) {
        if (t1 <= t0) return true;
        auto m0 = static_cast<std::int64_t>(t0 < 0 ? 0 : t0);
        for (std::int64_t m = m0; static_cast<double>(m) < t1; ++m) {
            for (const auto& e : block(m)) {
                if (e.time <= t0) continue;
                if (e.time > t1) return true;
                if (!f(e)) return false;
            }
        }
        return true;
    }

    std::size_t site_count() const noexcept { return keys_.size(); }

private:
    std::vector<std::uint64_t> keys_;
    std::vector<Event> buf_;
    std::vector<Ring> rings_;
    std::int64_t cached_ = -1;
};

}  // namespace kcm
