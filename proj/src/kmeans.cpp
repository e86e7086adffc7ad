#include "dasd/kmeans.hpp"

#include <algorithm>
#include <limits>

#include "dasd/errors.hpp"
#include "dasd/rng.hpp"

namespace dasd {

namespace {

double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

std::vector<std::vector<double>> kmeanspp_init(const std::vector<std::vector<double>>& points,
                                               std::size_t k, SplitMix64& rng) {
    std::vector<std::vector<double>> centers;
    centers.push_back(points[rng.below(points.size())]);
    std::vector<double> dist(points.size());
    while (centers.size() < k) {
        double total = 0;
        for (std::size_t i = 0; i < points.size(); ++i) {
            double best = std::numeric_limits<double>::max();
            for (const auto& c : centers) best = std::min(best, sq_dist(points[i], c));
            dist[i] = best;
            total += best;
        }
        if (total == 0) {
            // All remaining mass sits on existing centers; fall back to
            // uniform picks.
            centers.push_back(points[rng.below(points.size())]);
            continue;
        }
        double target = rng.uniform() * total;
        std::size_t chosen = points.size() - 1;
        double acc = 0;
        for (std::size_t i = 0; i < points.size(); ++i) {
            acc += dist[i];
            if (acc >= target) {
                chosen = i;
                break;
            }
        }
        centers.push_back(points[chosen]);
    }
    return centers;
}

KMeansResult lloyd(const std::vector<std::vector<double>>& points, std::size_t k,
                   std::size_t max_iters, SplitMix64& rng) {
    const std::size_t dim = points[0].size();
    auto centers = kmeanspp_init(points, k, rng);
    std::vector<int> assignment(points.size(), -1);

    for (std::size_t iter = 0; iter < max_iters; ++iter) {
        bool changed = false;
        for (std::size_t i = 0; i < points.size(); ++i) {
            int best = 0;
            double best_d = sq_dist(points[i], centers[0]);
            for (std::size_t c = 1; c < k; ++c) {
                double d = sq_dist(points[i], centers[c]);
                if (d < best_d) {
                    best_d = d;
                    best = static_cast<int>(c);
                }
            }
            if (assignment[i] != best) {
                assignment[i] = best;
                changed = true;
            }
        }
        std::vector<std::vector<double>> sums(k, std::vector<double>(dim, 0.0));
        std::vector<std::size_t> counts(k, 0);
        for (std::size_t i = 0; i < points.size(); ++i) {
            counts[assignment[i]] += 1;
            for (std::size_t d = 0; d < dim; ++d) sums[assignment[i]][d] += points[i][d];
        }
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] == 0) {
                // Re-seed an empty cluster on the point farthest from its
                // current center.
                std::size_t far_i = 0;
                double far_d = -1;
                for (std::size_t i = 0; i < points.size(); ++i) {
                    double d = sq_dist(points[i], centers[assignment[i]]);
                    if (d > far_d) {
                        far_d = d;
                        far_i = i;
                    }
                }
                centers[c] = points[far_i];
                changed = true;
                continue;
            }
            for (std::size_t d = 0; d < dim; ++d)
                centers[c][d] = sums[c][d] / static_cast<double>(counts[c]);
        }
        if (!changed) break;
    }

    KMeansResult result;
    result.assignment = assignment;
    for (std::size_t i = 0; i < points.size(); ++i) {
        result.inertia += sq_dist(points[i], centers[assignment[i]]);
    }
    return result;
}

}  // namespace

KMeansResult kmeans(const std::vector<std::vector<double>>& points, std::size_t k,
                    std::size_t restarts, std::size_t max_iters, std::uint64_t seed) {
    if (points.empty()) throw InvalidValue("kmeans: no points");
    if (k == 0 || k > points.size()) throw InvalidValue("kmeans: bad cluster count");
    for (const auto& p : points) {
        if (p.size() != points[0].size()) throw ShapeMismatch("kmeans: ragged points");
    }
    KMeansResult best;
    best.inertia = std::numeric_limits<double>::max();
    for (std::size_t r = 0; r < restarts; ++r) {
        SplitMix64 rng = substream(seed, "kmeans.restart", r);
        KMeansResult candidate = lloyd(points, k, max_iters, rng);
        if (candidate.inertia < best.inertia) best = std::move(candidate);
    }
    return best;
}

}  // namespace dasd
