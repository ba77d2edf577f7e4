#include "kcmlab/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "kcmlab/rng.hpp"

namespace kcm {

std::pair<double, double> wilson_interval(double k, double n, double z) {
    if (n <= 0) return {0.0, 1.0};
    const double p = k / n;
    const double z2 = z * z;
    const double denom = 1 + z2 / n;
    const double centre = (p + z2 / (2 * n)) / denom;
    const double half = z * std::sqrt(p * (1 - p) / n + z2 / (4 * n * n)) / denom;
    return {std::max(0.0, centre - half), std::min(1.0, centre + half)};
}

double quantile_order_stat(std::vector<double> values, double level) {
    if (values.empty()) throw std::invalid_argument("quantile of an empty sample");
    std::sort(values.begin(), values.end());
    const auto m = static_cast<double>(values.size());
    auto r = static_cast<std::size_t>(std::ceil(level * m - 1e-12));
    r = std::clamp<std::size_t>(r, 1, values.size());
    return values[r - 1];
}

std::pair<double, double> bootstrap_quantile_ci(const std::vector<double>& values, double level,
                                                std::size_t resamples, std::uint64_t seed,
                                                double alpha) {
    if (values.empty()) throw std::invalid_argument("bootstrap of an empty sample");
    KeyedRng rng(stream_key(seed, 0, Stream::Bootstrap));
    std::vector<double> stats;
    stats.reserve(resamples);
    std::vector<double> sample(values.size());
    const auto n = static_cast<std::int64_t>(values.size());
    for (std::size_t b = 0; b < resamples; ++b) {
        for (auto& s : sample) s = values[static_cast<std::size_t>(rng.integer(0, n - 1))];
        stats.push_back(quantile_order_stat(sample, level));
    }
    return {quantile_order_stat(stats, alpha / 2), quantile_order_stat(stats, 1 - alpha / 2)};
}

double binomial_draw(KeyedRng& rng, double n, double p) {
    if (n <= 0 || p <= 0) return 0;
    if (p >= 1) return n;
    const double var = n * p * (1 - p);
    if (var > 100) {
        const double u1 = rng.uniform(), u2 = rng.uniform();
        const double g = std::sqrt(-2 * std::log(u1)) * std::cos(2 * M_PI * u2);
        return std::clamp(std::round(n * p + g * std::sqrt(var)), 0.0, n);
    }
    if (n > 2000) {
        // Rare successes (or rare failures): Poisson limit by inversion.
        const bool flip = p > 0.5;
        const double mean = n * (flip ? 1 - p : p);
        const double u = rng.uniform();
        double term = std::exp(-mean), cum = term, k = 0;
        while (u > cum && k < n) {
            k += 1;
            term *= mean / k;
            cum += term;
        }
        return flip ? n - k : k;
    }
    double k = 0;
    const auto trials = static_cast<std::int64_t>(n);
    for (std::int64_t i = 0; i < trials; ++i) k += rng.bernoulli(p) ? 1 : 0;
    return k;
}

}  // namespace kcm
