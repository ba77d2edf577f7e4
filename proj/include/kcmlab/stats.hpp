#pragma once

#include <cstddef>
#include <cstdint>
#include <utility>
#include <vector>

namespace kcm {

/// Wilson score interval for k successes out of n at the given z.
std::pair<double, double> wilson_interval(double k, double n, double z = 1.959963984540054);

/// Order statistic: the ceil(level * m)-th smallest of m values (1-based),
/// clamped to [1, m]. Values may contain +infinity for censored samples.
double quantile_order_stat(std::vector<double> values, double level);

/// Percentile bootstrap CI of quantile_order_stat over resampled replicas.
std::pair<double, double> bootstrap_quantile_ci(const std::vector<double>& values, double level,
                                                std::size_t resamples, std::uint64_t seed,
                                                double alpha = 0.05);

/// Binomial(n, p) draw from a keyed generator, deterministic across
/// platforms (normal approximation when n p (1-p) > 100).
class KeyedRng;
double binomial_draw(KeyedRng& rng, double n, double p);

}  // namespace kcm
