#include "kcmlab/clock.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "kcmlab/rng.hpp"

namespace kcm {

ClockField::ClockField(std::uint64_t seed, std::size_t dim, std::uint64_t replica)
    : seed_(seed), dim_(dim), replica_(replica), key_(stream_key(seed, replica, Stream::Clock)) {
    if (dim == 0) throw std::invalid_argument("ClockField: dimension must be at least 1");
}

std::uint64_t ClockField::site_key(std::span<const int> site) const noexcept {
    return fold_coords(key_, site);
}

void ClockField::block_rings(std::uint64_t site_key, std::int64_t m, std::vector<Ring>& out) {
    out.clear();
    const std::uint64_t bk = fold_signed(site_key, m);
    const double u = to_open_unit(fold(bk, 0));
    // Poisson(1) by inversion.
    int n = 0;
    double p = std::exp(-1.0);
    double cum = p;
    while (u > cum && n < 40) {
        ++n;
        p /= n;
        cum += p;
    }
    const double base = static_cast<double>(m);
    for (int i = 0; i < n; ++i) {
        const auto ii = static_cast<std::uint64_t>(i);
        out.push_back({base + to_open_unit(fold(bk, 2 * ii + 1)), to_open_unit(fold(bk, 2 * ii + 2))});
    }
    std::sort(out.begin(), out.end(), [](const Ring& a, const Ring& b) { return a.time < b.time; });
}

std::vector<ClockEvent> ClockField::events_in(const LatticeVec& site, double t0, double t1) const {
    if (t1 < t0) throw std::invalid_argument("events_in: t1 < t0");
    if (t0 < 0) throw std::invalid_argument("events_in: t0 must be non-negative");
    if (site.dim() != dim_) throw std::invalid_argument("events_in: site dimension mismatch");
    std::vector<ClockEvent> out;
    if (t1 == t0) return out;
    const auto key = site_key(site.coords());
    std::vector<Ring> rings;
    for (auto m = static_cast<std::int64_t>(t0); static_cast<double>(m) < t1; ++m) {
        block_rings(key, m, rings);
        for (const auto& r : rings)
            if (r.time > t0 && r.time <= t1) out.push_back({site, r.time, r.mark});
    }
    return out;
}

ClockEvent ClockField::first_event_after(const LatticeVec& site, double t) const {
    if (site.dim() != dim_) throw std::invalid_argument("first_event_after: site dimension mismatch");
    const auto key = site_key(site.coords());
    std::vector<Ring> rings;
    for (auto m = static_cast<std::int64_t>(t < 0 ? 0 : t);; ++m) {
        block_rings(key, m, rings);
        for (const auto& r : rings)
            if (r.time > t) return {site, r.time, r.mark};
    }
}

std::vector<ClockEvent> merged_event_stream(const ClockField& field,
                                            const std::vector<LatticeVec>& sites, double t0,
                                            double t1) {
    std::vector<ClockEvent> all;
    for (const auto& x : sites) {
        auto ev = field.events_in(x, t0, t1);
        all.insert(all.end(), ev.begin(), ev.end());
    }
    std::sort(all.begin(), all.end(), [](const ClockEvent& a, const ClockEvent& b) {
        if (a.time != b.time) return a.time < b.time;
        return a.site < b.site;
    });
    return all;
}

BlockStream::BlockStream(const ClockField& field, const std::vector<LatticeVec>& sites) {
    keys_.reserve(sites.size());
    for (const auto& x : sites) keys_.push_back(field.site_key(x.coords()));
}

BlockStream::BlockStream(const ClockField& field, const Box& box) {
    keys_.reserve(box.size());
    for (std::size_t i = 0; i < box.size(); ++i) keys_.push_back(field.site_key(box.site_at(i).coords()));
}

const std::vector<BlockStream::Event>& BlockStream::block(std::int64_t m) {
    if (m == cached_) return buf_;
    buf_.clear();
    for (std::size_t i = 0; i < keys_.size(); ++i) {
        ClockField::block_rings(keys_[i], m, rings_);
        for (const auto& r : rings_) buf_.push_back({r.time, static_cast<std::uint32_t>(i), r.mark});
    }
    std::sort(buf_.begin(), buf_.end(), [](const Event& a, const Event& b) {
        if (a.time != b.time) return a.time < b.time;
        return a.site < b.site;
    });
    cached_ = m;
    return buf_;
}

}  // namespace kcm
