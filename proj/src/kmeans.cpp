#include "lfa/kmeans.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "lfa/rng.hpp"

namespace lfa {

double squared_l2(std::span<const float> a, std::span<const float> b) {
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double d = static_cast<double>(a[i]) - b[i];
        sum += d * d;
    }
    return sum;
}

namespace {

std::span<const float> point(std::span<const float> data, std::uint32_t dim, std::uint64_t i) {
    return data.subspan(static_cast<std::size_t>(i) * dim, dim);
}

// k-means++: first centroid uniform, then D^2-weighted draws. Weighted
// selection walks the cumulative sum serially, so zero-weight (already
// covered) points are never chosen while any positive weight remains.
std::vector<float> kmeanspp_init(std::span<const float> data, std::uint64_t n, std::uint32_t dim,
                                 std::uint32_t k, std::mt19937_64& rng) {
    std::vector<float> centroids;
    centroids.reserve(static_cast<std::size_t>(k) * dim);

    std::uint64_t first = uniform_index(rng, n);
    auto p0 = point(data, dim, first);
    centroids.insert(centroids.end(), p0.begin(), p0.end());

    std::vector<double> mindist(n);
#pragma omp parallel for schedule(static)
    for (std::uint64_t i = 0; i < n; ++i) {
        mindist[i] = squared_l2(point(data, dim, i), p0);
    }

    for (std::uint32_t c = 1; c < k; ++c) {
        double total = 0.0;
        for (std::uint64_t i = 0; i < n; ++i) total += mindist[i];

        std::uint64_t chosen;
        if (total > 0.0) {
            double u = u01(rng) * total;
            double cum = 0.0;
            chosen = n - 1;
            for (std::uint64_t i = 0; i < n; ++i) {
                cum += mindist[i];
                if (cum > u) {
                    chosen = i;
                    break;
                }
            }
        } else {
            // All points already coincide with a centroid.
            chosen = uniform_index(rng, n);
        }

        auto pc = point(data, dim, chosen);
        centroids.insert(centroids.end(), pc.begin(), pc.end());
#pragma omp parallel for schedule(static)
        for (std::uint64_t i = 0; i < n; ++i) {
            double d = squared_l2(point(data, dim, i), pc);
            if (d < mindist[i]) mindist[i] = d;
        }
    }
    return centroids;
}

struct AssignResult {
    std::vector<std::uint32_t> labels;
    std::vector<double> dists;
    double inertia = 0.0;
};

AssignResult assign_all(std::span<const float> data, std::uint64_t n, std::uint32_t dim,
                        std::span<const float> centroids, std::uint32_t k) {
    AssignResult res;
    res.labels.resize(n);
    res.dists.resize(n);
#pragma omp parallel for schedule(static)
    for (std::uint64_t i = 0; i < n; ++i) {
        auto x = point(data, dim, i);
        std::uint32_t best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (std::uint32_t c = 0; c < k; ++c) {
            double d = squared_l2(x, centroids.subspan(static_cast<std::size_t>(c) * dim, dim));
            if (d < best_d) {  // strict: ties stay with the lowest id
                best_d = d;
                best = c;
            }
        }
        res.labels[i] = best;
        res.dists[i] = best_d;
    }
    // Serial sum in sample order keeps the value independent of thread count.
    for (std::uint64_t i = 0; i < n; ++i) res.inertia += res.dists[i];
    return res;
}

}  // namespace

KMeansModel kmeans(std::span<const float> data, std::uint64_t n, std::uint32_t dim,
                   const KMeansParams& params) {
    if (params.k < 1) throw ValidationError("kmeans: k must be >= 1");
    if (n < params.k) {
        throw ValidationError("kmeans: n (" + std::to_string(n) + ") < k (" +
                              std::to_string(params.k) + ")");
    }
    const std::uint32_t k = params.k;

    std::mt19937_64 rng(params.seed);
    KMeansModel model;
    model.k = k;
    model.dim = dim;
    model.seed = params.seed;
    model.centroids = kmeanspp_init(data, n, dim, k, rng);

    AssignResult cur = assign_all(data, n, dim, model.centroids, k);
    model.inertia_history.push_back(cur.inertia);

    std::vector<double> sums(static_cast<std::size_t>(k) * dim);
    std::vector<std::uint64_t> counts(k);

    int updates = 0;
    while (updates < params.max_iter) {
        // Update: centroid = mean of members, accumulated serially in id order.
        std::fill(sums.begin(), sums.end(), 0.0);
        std::fill(counts.begin(), counts.end(), 0);
        for (std::uint64_t i = 0; i < n; ++i) {
            auto x = point(data, dim, i);
            double* s = sums.data() + static_cast<std::size_t>(cur.labels[i]) * dim;
            for (std::uint32_t d = 0; d < dim; ++d) s[d] += x[d];
            ++counts[cur.labels[i]];
        }
        for (std::uint32_t c = 0; c < k; ++c) {
            if (counts[c] == 0) continue;
            float* dst = model.centroids.data() + static_cast<std::size_t>(c) * dim;
            const double* s = sums.data() + static_cast<std::size_t>(c) * dim;
            for (std::uint32_t d = 0; d < dim; ++d) {
                dst[d] = static_cast<float>(s[d] / static_cast<double>(counts[c]));
            }
        }

        // Empty-cluster repair: seed each empty cluster with the farthest
        // point of the currently largest cluster.
        std::vector<bool> taken(n, false);
        for (std::uint32_t c = 0; c < k; ++c) {
            if (counts[c] != 0) continue;
            std::uint32_t largest = 0;
            for (std::uint32_t l = 1; l < k; ++l) {
                if (counts[l] > counts[largest]) largest = l;
            }
            if (counts[largest] == 0) break;  // fewer distinct points than clusters
            std::uint64_t far_i = n;
            double far_d = -1.0;
            for (std::uint64_t i = 0; i < n; ++i) {
                if (cur.labels[i] != largest || taken[i]) continue;
                if (cur.dists[i] > far_d) {
                    far_d = cur.dists[i];
                    far_i = i;
                }
            }
            if (far_i == n) break;
            auto x = point(data, dim, far_i);
            std::copy(x.begin(), x.end(),
                      model.centroids.begin() + static_cast<std::size_t>(c) * dim);
            taken[far_i] = true;
            --counts[largest];
            ++counts[c];
        }

        ++updates;
        double prev = cur.inertia;
        cur = assign_all(data, n, dim, model.centroids, k);
        model.inertia_history.push_back(cur.inertia);
        if (prev <= 0.0) break;
        if ((prev - cur.inertia) / prev < params.tol) break;
    }

    model.iterations_run = updates;
    model.inertia = cur.inertia;
    return model;
}

KMeansModel kmeans(const EmbeddingStore& data, const KMeansParams& params) {
    return kmeans(std::span<const float>(data.data), data.rows, data.dim, params);
}

std::vector<std::uint32_t> assign_to_centroids(const KMeansModel& model,
                                               std::span<const float> data, std::uint64_t n) {
    return assign_all(data, n, model.dim, model.centroids, model.k).labels;
}

}  // namespace lfa
