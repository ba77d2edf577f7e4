#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "kcmlab/clock.hpp"

using namespace kcm;

namespace {

bool event_less(const ClockEvent& a, const ClockEvent& b) {
    return a.time < b.time || (a.time == b.time && a.site < b.site);
}

std::vector<LatticeVec> sites_of(const Box& b) {
    std::vector<LatticeVec> s;
    for (std::size_t i = 0; i < b.size(); ++i) s.push_back(b.site_at(i));
    return s;
}

}  // namespace

TEST_CASE("empty window") {
    const ClockField f(1, 2);
    CHECK(f.events_in({0, 0}, 3.5, 3.5).empty());
    CHECK(merged_event_stream(f, {{0, 0}, {1, 0}}, 2, 2).empty());
}

TEST_CASE("queries are deterministic") {
    const ClockField f(42, 2, 3);
    CHECK(f.events_in({5, -2}, 0, 17.3) == f.events_in({5, -2}, 0, 17.3));
    CHECK(ClockField(42, 2, 3).events_in({5, -2}, 0, 17.3) == f.events_in({5, -2}, 0, 17.3));
    CHECK(ClockField(43, 2, 3).events_in({5, -2}, 0, 17.3) != f.events_in({5, -2}, 0, 17.3));
    CHECK(ClockField(42, 2, 4).events_in({5, -2}, 0, 17.3) != f.events_in({5, -2}, 0, 17.3));
}

TEST_CASE("splitting a window does not change the events") {
    const ClockField f(5, 1);
    auto whole = f.events_in({3}, 0.3, 9.7);
    auto a = f.events_in({3}, 0.3, 4.1);
    const auto b = f.events_in({3}, 4.1, 9.7);
    a.insert(a.end(), b.begin(), b.end());
    CHECK(a == whole);
    for (std::size_t i = 1; i < whole.size(); ++i) CHECK(whole[i - 1].time < whole[i].time);
    for (const auto& e : whole) {
        CHECK(e.time > 0.3);
        CHECK(e.time <= 9.7);
        CHECK(e.mark > 0);
        CHECK(e.mark < 1);
    }
    if (!whole.empty()) CHECK(f.first_event_after({3}, 0.3) == whole.front());
}

TEST_CASE("mean event count over [0,100] is 100 per site") {
    const ClockField f(2024, 2);
    const Box b = Box::cube(100, 2);
    double total = 0, marks = 0;
    for (std::size_t i = 0; i < b.size(); ++i) {
        const auto ev = f.events_in(b.site_at(i), 0, 100);
        total += static_cast<double>(ev.size());
        for (const auto& e : ev) marks += e.mark;
    }
    const double mean = total / static_cast<double>(b.size());
    CHECK(std::abs(mean - 100.0) <= 3.0 * 10.0 / 100.0);
    CHECK(std::abs(marks / total - 0.5) < 3 * std::sqrt(1.0 / 12.0 / total));
}

TEST_CASE("merged stream over one site equals its own events") {
    const ClockField f(3, 2);
    const auto m = merged_event_stream(f, {{2, 2}}, 1.5, 30);
    CHECK(m == f.events_in({2, 2}, 1.5, 30));
}

TEST_CASE("merging is associative over disjoint site sets") {
    const ClockField f(8, 2);
    const std::vector<LatticeVec> a{{0, 0}, {0, 1}, {3, 3}}, b{{1, 0}, {2, 2}};
    std::vector<LatticeVec> all = a;
    all.insert(all.end(), b.begin(), b.end());
    const auto ma = merged_event_stream(f, a, 0, 20), mb = merged_event_stream(f, b, 0, 20);
    std::vector<ClockEvent> pair;
    std::merge(ma.begin(), ma.end(), mb.begin(), mb.end(), std::back_inserter(pair), event_less);
    CHECK(pair == merged_event_stream(f, all, 0, 20));
}

TEST_CASE("superposed rate over N sites is N") {
    const ClockField f(11, 2);
    const Box b = Box::cube(40, 2);
    const auto m = merged_event_stream(f, sites_of(b), 0, 10);
    const double expect = 10.0 * static_cast<double>(b.size());
    CHECK(std::abs(static_cast<double>(m.size()) - expect) < 3 * std::sqrt(expect));
    CHECK(std::is_sorted(m.begin(), m.end(), event_less));
}

TEST_CASE("block stream matches the merged stream") {
    const ClockField f(17, 2, 1);
    const Box b = Box::cube(6, 2);
    const auto ref = merged_event_stream(f, sites_of(b), 0.7, 12.2);
    BlockStream s(f, b);
    std::vector<ClockEvent> got;
    s.for_each(0.7, 12.2, [&](const BlockStream::Event& e) {
        got.push_back({b.site_at(e.site), e.time, e.mark});
        return true;
    });
    CHECK(got == ref);
}
