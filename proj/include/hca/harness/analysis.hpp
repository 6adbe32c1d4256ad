#pragma once

#include <cstddef>

namespace hca::harness {

// Balls-into-boxes load model: k random-address sockets over n nodes.
struct LoadStats {
    double mean = 0;
    double sigma = 0;
    double band_low = 0;   // mean - 4 sigma
    double band_high = 0;  // mean + 4 sigma
    bool normal_approximation_ok = true;  // k >= 10 n
};
LoadStats binomial_load_stats(size_t n, size_t k);

// Halving-distance latency model over a tree of the given depth; depth < 0
// evaluates the full geometric series.
struct LatencyBounds {
    double worst = 0;    // 4D as depth grows
    double average = 0;  // 2D as depth grows
};
LatencyBounds latency_bounds(double diameter, int depth = -1);

// Probability a message fails to cross `depth` stages of k-replicated nodes,
// each node independently unreachable with probability p.
double delivery_failure_prob(double p, int replicas, int depth);

}  // namespace hca::harness
