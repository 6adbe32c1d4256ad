#include "hca/harness/analysis.hpp"

#include <cmath>

namespace hca::harness {

LoadStats binomial_load_stats(size_t n, size_t k) {
    LoadStats s;
    double dn = static_cast<double>(n), dk = static_cast<double>(k);
    s.mean = dk / dn;
    s.sigma = n == 1 ? 0.0 : std::sqrt((dk / dn) * (1.0 - 1.0 / dn));
    s.band_low = s.mean - 4.0 * s.sigma;
    s.band_high = s.mean + 4.0 * s.sigma;
    s.normal_approximation_ok = dk >= 10.0 * dn;
    return s;
}

LatencyBounds latency_bounds(double diameter, int depth) {
    LatencyBounds b;
    // 2 * (D + D/2 + D/4 + ...) truncated at the tree depth
    double sum = 0;
    if (depth < 0) {
        sum = 2.0 * diameter;
    } else {
        double term = diameter;
        for (int i = 0; i < depth; ++i) {
            sum += term;
            term /= 2.0;
        }
    }
    b.worst = 2.0 * sum;
    b.average = b.worst / 2.0;  // mean hop distance is half the worst case
    return b;
}

double delivery_failure_prob(double p, int replicas, int depth) {
    double stage_failure = std::pow(p, replicas);  // all replicas down
    return 1.0 - std::pow(1.0 - stage_failure, depth);
}

}  // namespace hca::harness
