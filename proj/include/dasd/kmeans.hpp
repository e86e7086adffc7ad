#pragma once

#include <cstdint>
#include <vector>

namespace dasd {

struct KMeansResult {
    std::vector<int> assignment;
    double inertia = 0.0;
};

// Lloyd's algorithm with seeded k-means++ starts; the best of `restarts`
// runs by inertia wins. Fully deterministic for a fixed seed.
KMeansResult kmeans(const std::vector<std::vector<double>>& points, std::size_t k,
                    std::size_t restarts, std::size_t max_iters, std::uint64_t seed);

}  // namespace dasd
