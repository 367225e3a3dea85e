// corrupt.hpp -- strong-contamination adversary fixtures.
//
// The adversary replaces exactly floor(eps * n) rows and then reorders
// everything.  Real adversaries are unconstrained; the strategies here are a
// small documented catalog of test fixtures, not a completeness claim.
// Reordering is a uniform random permutation (the model allows any order, so
// we pin one we can reproduce).

#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "robustmix/gaussian.hpp"

namespace robustmix {

struct CorruptConfig {
    double distance = 1e3;     // far-cluster: offset of the spurious cluster
    double spread = 0.01;      // far-cluster: stddev of the planted cluster
    double shift = 50.0;       // mean-shift: offset along the top direction
    double jitter = 0.1;       // mean-shift: stddev along the direction
    double noise_range = 100.0;  // random-noise: half-width of the box
};

// Draw order (one Rng seeded with `seed`): victim selection, replacement
// rows in ascending victim order, then the final permutation.
inline SampleSet corrupt(const SampleSet& s, double eps, const std::string& adversary,
                         std::uint64_t seed, const CorruptConfig& cfg = {}) {
    if (eps < 0.0 || eps >= 1.0) throw InvalidEpsilon("corrupt: need 0 <= eps < 1");
    if (adversary != "far-cluster" && adversary != "mean-shift" && adversary != "random-noise") {
        throw UsageError("corrupt: unknown adversary '" + adversary + "'");
    }
    const int n = s.n();
    const int d = s.dim();
    const int m = static_cast<int>(eps * static_cast<double>(n));

    SampleSet out = s;
    out.seed = seed;
    out.declared_eps = eps;
    out.adversary = adversary;
    out.corrupted = std::vector<std::uint8_t>(n, 0);

    Rng rng(seed);

    // Victims: first m entries of a partially shuffled index array.
    std::vector<int> idx(n);
    for (int i = 0; i < n; ++i) idx[i] = i;
    for (int i = 0; i < m; ++i) {
        const int j = i + static_cast<int>(rng.uniform_index(n - i));
        std::swap(idx[i], idx[j]);
    }
    std::vector<int> victims(idx.begin(), idx.begin() + m);
    std::sort(victims.begin(), victims.end());

    if (m > 0) {
        const Vector mean = s.points.colwise().mean().transpose();
        Vector direction = Vector::Zero(d);
        if (adversary == "far-cluster") {
            for (int j = 0; j < d; ++j) direction(j) = rng.normal();
            direction.normalize();
            const Vector center = mean + cfg.distance * direction;
            for (int v : victims) {
                Vector x = center;
                for (int j = 0; j < d; ++j) x(j) += cfg.spread * rng.normal();
                out.points.row(v) = x.transpose();
            }
        } else if (adversary == "mean-shift") {
            Matrix centered = s.points.rowwise() - mean.transpose();
            Matrix cov = centered.transpose() * centered / static_cast<double>(n);
            Eigen::SelfAdjointEigenSolver<Matrix> es(cov);
            direction = es.eigenvectors().col(d - 1);
            const Vector base = mean + cfg.shift * direction;
            for (int v : victims) {
                out.points.row(v) = (base + cfg.jitter * rng.normal() * direction).transpose();
            }
        } else {  // random-noise
            for (int v : victims) {
                for (int j = 0; j < d; ++j) {
                    out.points(v, j) = rng.uniform(-cfg.noise_range, cfg.noise_range);
                }
            }
        }
        for (int v : victims) (*out.corrupted)[v] = 1;
    }

    // Uniform reorder of rows together with labels and mask.
    std::vector<int> perm(n);
    for (int i = 0; i < n; ++i) perm[i] = i;
    rng.shuffle(perm.begin(), perm.end());

    SampleSet final = out;
    for (int i = 0; i < n; ++i) {
        final.points.row(i) = out.points.row(perm[i]);
        if (out.labels) (*final.labels)[i] = (*out.labels)[perm[i]];
        (*final.corrupted)[i] = (*out.corrupted)[perm[i]];
    }
    return final;
}

}  // namespace robustmix
