// robust.hpp -- outlier-robust Gaussian estimation and the end-to-end
// mixture-recovery pipeline: a spectral filter for single components,
// density-based reclustering, a Scheffe tournament over hypothesis mixtures,
// and the driver that turns corrupted samples into a winning mixture.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "robustmix/clustering.hpp"
#include "robustmix/distances.hpp"
#include "robustmix/gaussian.hpp"
#include "robustmix/linalg.hpp"
#include "robustmix/rng.hpp"

namespace robustmix {

// ---------------------------------------------------------------------------
// robust single-Gaussian estimation

struct FilterConfig {
    double c_f = 10.0;       // spectral threshold scale: tau = c_f * eps * log(1/eps)
    std::uint64_t seed = 0;  // stream for the randomized removal threshold
};

struct RobustFit {
    GaussianParams params;
    bool test_passed = false;       // the spectral test held at the returned iterate
    bool budget_exhausted = false;  // removals ran out with the test still failing
    int removed = 0;
    int iterations = 0;
    double spectral_deviation = 0.0;  // |lambda_max - 1| at the returned iterate
};

namespace detail {

inline GaussianParams empirical_gaussian(const Matrix& pts) {
    const int n = static_cast<int>(pts.rows());
    const int d = static_cast<int>(pts.cols());
    Vector mean = pts.colwise().mean().transpose();
    Matrix cov = Matrix::Zero(d, d);
    for (int r = 0; r < n; ++r) {
        const Vector c = pts.row(r).transpose() - mean;
        cov += c * c.transpose();
    }
    cov /= static_cast<double>(std::max(1, n));
    return GaussianParams(std::move(mean), std::move(cov));
}

// Frame for the spectral test.  The filter cannot trust its own covariance:
// planted mass inflates it in exactly the direction that must be tested, and
// whitening by it would flatten the evidence back to the identity.  Rank
// rows by Mahalanobis distance and refit with the top 2*eps fraction
// dropped, twice, so the second ranking happens in a frame the planted mass
// no longer controls.  (A fixed multiple-of-median cut would go blind once
// the contamination is heavy enough to drag the median itself.)
inline Whitening reference_frame(const Matrix& pts, double eps) {
    const int d = static_cast<int>(pts.cols());
    Matrix kept = pts;
    Whitening w = whitening_from_points(kept);
    for (int pass = 0; pass < 2; ++pass) {
        const int m = static_cast<int>(kept.rows());
        const int drop =
            std::min(static_cast<int>(std::ceil(2.0 * eps * m)), m - (d + 2));
        if (drop <= 0) break;
        std::vector<std::pair<double, int>> scored(m);
        for (int r = 0; r < m; ++r) {
            const double m2 = (w.W * (kept.row(r).transpose() - w.center)).squaredNorm();
            scored[r] = {m2, r};
        }
        std::sort(scored.begin(), scored.end());
        std::vector<int> keep;
        keep.reserve(m - drop);
        for (int r = 0; r < m - drop; ++r) keep.push_back(scored[r].second);
        std::sort(keep.begin(), keep.end());
        kept = rows_of(kept, keep);
        w = whitening_from_points(kept);
    }
    return w;
}

}  // namespace detail

// Iterative spectral filter.  Each round fits the kept rows, whitens them in
// a trimmed reference frame, and tests whether the top eigenvalue of the
// centered second moment sits within tau = c_f * eps * log(1/eps) of 1.  A
// failing round removes rows by score-proportional thresholding along the
// top eigenvector (threshold drawn uniformly below the top score, so a row's
// removal chance is proportional to its score).  Stops when the test passes
// or ceil(2 * eps * n) rows are gone; the latter returns the best-deviation
// iterate with budget_exhausted set.  eps = 0 disables the filter entirely
// and returns the plain empirical estimate.
inline RobustFit robust_gaussian(const Matrix& points, double eps, const FilterConfig& cfg = {}) {
    const int n = static_cast<int>(points.rows());
    const int d = static_cast<int>(points.cols());
    if (d < 1 || n < 10 * d) {
        throw PreconditionFailed("robust_gaussian: need n >= 10 * d");
    }
    if (!(eps >= 0.0 && eps <= 0.2)) {
        throw InvalidEpsilon("robust_gaussian: need 0 <= eps <= 0.2");
    }

    const int budget = static_cast<int>(std::ceil(2.0 * eps * n));
    if (budget == 0) {
        return RobustFit{detail::empirical_gaussian(points), true, false, 0, 0, 0.0};
    }
    const double tau = cfg.c_f * eps * std::log(1.0 / eps);

    Rng rng(cfg.seed);
    std::vector<int> kept(n);
    std::iota(kept.begin(), kept.end(), 0);

    std::optional<GaussianParams> best;
    double best_dev = std::numeric_limits<double>::infinity();
    bool passed = false;
    int removed = 0;
    int iterations = 0;

    while (true) {
        ++iterations;
        const Matrix cur = detail::rows_of(points, kept);
        GaussianParams emp = detail::empirical_gaussian(cur);
        const Whitening ref = detail::reference_frame(cur, eps);

        const int m = static_cast<int>(cur.rows());
        Matrix z(m, d);
        for (int r = 0; r < m; ++r) {
            z.row(r) = (ref.W * (cur.row(r).transpose() - ref.center)).transpose();
        }
        const Vector zbar = z.colwise().mean().transpose();
        Matrix c2 = Matrix::Zero(d, d);
        for (int r = 0; r < m; ++r) {
            const Vector c = z.row(r).transpose() - zbar;
            c2 += c * c.transpose();
        }
        c2 /= static_cast<double>(m);
        Eigen::SelfAdjointEigenSolver<Matrix> es(c2);
        const double lam = es.eigenvalues()(d - 1);
        const Vector top = es.eigenvectors().col(d - 1);
        const double dev = std::abs(lam - 1.0);

        if (dev < best_dev) {
            best_dev = dev;
            best = emp;
        }
        if (dev <= tau) {
            passed = true;
            best = std::move(emp);
            best_dev = dev;
            break;
        }
        if (removed >= budget) break;

        std::vector<std::pair<double, int>> scores(m);
        double s_max = 0.0;
        for (int r = 0; r < m; ++r) {
            const double s = std::pow(top.dot(z.row(r).transpose() - zbar), 2);
            scores[r] = {s, kept[r]};
            s_max = std::max(s_max, s);
        }
        if (s_max <= 0.0) break;  // nothing to project away; give up cleanly

        const double threshold = rng.uniform() * s_max;
        std::sort(scores.begin(), scores.end(),
                  [](const auto& a, const auto& b) { return a.first > b.first; });
        std::vector<int> gone;
        for (const auto& [s, idx] : scores) {
            if (s <= threshold) break;
            if (static_cast<int>(gone.size()) >= budget - removed) break;
            gone.push_back(idx);
        }
        removed += static_cast<int>(gone.size());
        std::sort(gone.begin(), gone.end());
        std::vector<int> next;
        next.reserve(kept.size() - gone.size());
        std::set_difference(kept.begin(), kept.end(), gone.begin(), gone.end(),
                            std::back_inserter(next));
        kept = std::move(next);
    }

    return RobustFit{std::move(*best), passed, !passed && removed >= budget,
                     removed, iterations, best_dev};
}

// ---------------------------------------------------------------------------
// reclustering

// Label each sample with the hypothesis of highest log density; exact ties go
// to the lowest index.  Densities shift by a common constant under a joint
// invertible affine map of samples and parameters, so labels are invariant.
inline std::vector<int> recluster(const Matrix& samples,
                                  const std::vector<GaussianParams>& hypotheses) {
    if (hypotheses.empty()) {
        throw PreconditionFailed("recluster: need at least one hypothesis");
    }
    for (const auto& h : hypotheses) {
        if (h.dim() != samples.cols()) {
            throw DimensionMismatch("recluster: hypothesis dimension != sample dimension");
        }
    }
    const int n = static_cast<int>(samples.rows());
    std::vector<int> labels(n, 0);
    for (int r = 0; r < n; ++r) {
        const Vector x = samples.row(r).transpose();
        double best = log_density(hypotheses[0], x);
        for (int j = 1; j < static_cast<int>(hypotheses.size()); ++j) {
            const double ld = log_density(hypotheses[j], x);
            if (ld > best) {
                best = ld;
                labels[r] = j;
            }
        }
    }
    return labels;
}

// ---------------------------------------------------------------------------
// hypothesis mixtures and the tournament

struct HypothesisMixture {
    std::vector<GaussianParams> components;
    std::vector<double> weights;
    std::string source;  // which candidate clustering produced it
};

namespace detail {

inline void check_hypothesis(const HypothesisMixture& mix) {
    if (mix.components.empty()) throw InvalidShape("hypothesis mixture: no components");
    if (mix.weights.size() != mix.components.size()) {
        throw InvalidWeights("hypothesis mixture: one weight per component required");
    }
    double total = 0.0;
    for (double w : mix.weights) {
        if (w < 0.0) throw InvalidWeights("hypothesis mixture: negative weight");
        total += w;
    }
    if (std::abs(total - 1.0) > 1e-9) {
        throw InvalidWeights("hypothesis mixture: weights must sum to 1 (tol 1e-9)");
    }
    for (const auto& c : mix.components) {
        if (c.dim() != mix.components[0].dim()) {
            throw DimensionMismatch("hypothesis mixture: components of unequal dimension");
        }
    }
}

inline double log_mixture_density(const HypothesisMixture& mix, const Vector& x) {
    double top = -std::numeric_limits<double>::infinity();
    std::vector<double> terms;
    terms.reserve(mix.components.size());
    for (std::size_t i = 0; i < mix.components.size(); ++i) {
        if (mix.weights[i] <= 0.0) continue;
        const double t = std::log(mix.weights[i]) + log_density(mix.components[i], x);
        terms.push_back(t);
        top = std::max(top, t);
    }
    double acc = 0.0;
    for (double t : terms) acc += std::exp(t - top);
    return top + std::log(acc);
}

inline Matrix sample_hypothesis(const HypothesisMixture& mix, int n, std::uint64_t seed) {
    Rng rng(seed);
    const int d = mix.components[0].dim();
    Matrix out(n, d);
    for (int r = 0; r < n; ++r) {
        const double u = rng.uniform();
        double cum = 0.0;
        std::size_t pick = mix.components.size() - 1;
        for (std::size_t i = 0; i < mix.weights.size(); ++i) {
            cum += mix.weights[i];
            if (u < cum) {
                pick = i;
                break;
            }
        }
        out.row(r) = sample_point(mix.components[pick], rng).transpose();
    }
    return out;
}

}  // namespace detail

struct TournamentConfig {
    int mc_samples = 4000;       // per candidate, reused across its matches
    double eps = 0.05;           // contamination budget driving the overlap gate
    double overlap_power = 2.0;  // gate: pairwise overlap certified <= (eps/k)^power
    bool strict_discard = false;  // throw instead of waiving a gate that empties the field
};

struct TournamentResult {
    HypothesisMixture winner;
    int winner_index = -1;
    std::vector<int> wins;
    std::vector<char> discarded;    // 1 = failed the overlap gate
    bool discard_fallback = false;  // gate would have removed everyone and was waived
};

// Scheffe tournament.  Candidates whose own components overlap more than
// (eps/k)^power, certified through the total-variation lower bound, are
// discarded first; if that empties the field the gate is waived (recorded)
// unless strict_discard asks for a hard failure.  Each surviving pair (i, j)
// is refereed on the set where density_i exceeds density_j: both candidates
// predict its mass by seeded Monte Carlo and the one closer to the fresh
// empirical mass takes the match.  Most wins return, ties to lowest index.
// eps = 0 means no contamination budget and disables the gate.
inline TournamentResult tournament(const std::vector<HypothesisMixture>& candidates,
                                   const Matrix& fresh, std::uint64_t seed,
                                   const TournamentConfig& cfg = {}) {
    if (candidates.empty()) throw AllCandidatesRejected("tournament: no candidates supplied");
    if (fresh.rows() < 1) throw PreconditionFailed("tournament: fresh sample set is empty");
    for (const auto& c : candidates) {
        detail::check_hypothesis(c);
        if (c.components[0].dim() != fresh.cols()) {
            throw DimensionMismatch("tournament: candidate dimension != fresh dimension");
        }
    }
    const int count = static_cast<int>(candidates.size());

    std::vector<char> discarded(count, 0);
    if (cfg.eps > 0.0) {
        for (int c = 0; c < count; ++c) {
            const auto& comps = candidates[c].components;
            const double k_c = static_cast<double>(comps.size());
            const double gate = std::pow(cfg.eps / k_c, cfg.overlap_power);
            for (std::size_t a = 0; a + 1 < comps.size() && !discarded[c]; ++a) {
                for (std::size_t b = a + 1; b < comps.size(); ++b) {
                    const double tv_lower = tv_bracket(comps[a], comps[b]).first;
                    if (1.0 - tv_lower > gate) {
                        discarded[c] = 1;
                        break;
                    }
                }
            }
        }
    }
    std::vector<int> kept;
    for (int c = 0; c < count; ++c) {
        if (!discarded[c]) kept.push_back(c);
    }
    bool fallback = false;
    if (kept.empty()) {
        if (cfg.strict_discard) {
            throw AllCandidatesRejected("tournament: every candidate failed the overlap gate");
        }
        fallback = true;
        kept.resize(count);
        std::iota(kept.begin(), kept.end(), 0);
    }

    // per-candidate draws and fresh log densities, computed once
    const int n_fresh = static_cast<int>(fresh.rows());
    std::vector<Matrix> draws(count);
    std::vector<std::vector<double>> fresh_ld(count);
    for (int c : kept) {
        draws[c] = detail::sample_hypothesis(candidates[c], cfg.mc_samples,
                                             derive_seed(derive_seed(seed, 7), c));
        fresh_ld[c].resize(n_fresh);
        for (int r = 0; r < n_fresh; ++r) {
            fresh_ld[c][r] = detail::log_mixture_density(candidates[c], fresh.row(r).transpose());
        }
    }

    std::vector<int> wins(count, 0);
    for (std::size_t a = 0; a < kept.size(); ++a) {
        for (std::size_t b = a + 1; b < kept.size(); ++b) {
            const int i = kept[a];
            const int j = kept[b];
            auto predicted_mass = [&](const Matrix& sample) {
                int hits = 0;
                for (int r = 0; r < sample.rows(); ++r) {
                    const Vector x = sample.row(r).transpose();
                    if (detail::log_mixture_density(candidates[i], x) >
                        detail::log_mixture_density(candidates[j], x)) {
                        ++hits;
                    }
                }
                return static_cast<double>(hits) / sample.rows();
            };
            const double pred_i = predicted_mass(draws[i]);
            const double pred_j = predicted_mass(draws[j]);
            int emp_hits = 0;
            for (int r = 0; r < n_fresh; ++r) {
                if (fresh_ld[i][r] > fresh_ld[j][r]) ++emp_hits;
            }
            const double emp = static_cast<double>(emp_hits) / n_fresh;
            const double miss_i = std::abs(pred_i - emp);
            const double miss_j = std::abs(pred_j - emp);
            if (miss_i < miss_j) {
                ++wins[i];
            } else if (miss_j < miss_i) {
                ++wins[j];
            }
        }
    }

    int winner = kept[0];
    for (int c : kept) {
        if (wins[c] > wins[winner]) winner = c;
    }
    return TournamentResult{candidates[winner], winner, std::move(wins), std::move(discarded),
                            fallback};
}

// ---------------------------------------------------------------------------
// component matching

struct ComponentMatching {
    std::vector<int> assignment;  // estimate index -> truth index
    std::vector<double> costs;    // tv-bracket midpoint per estimate under that pairing
    double total = 0.0;
};

// Minimum-cost pairing of two equally sized component lists under the
// tv-bracket midpoint, by exhaustive permutation (desk-scale k only).
inline ComponentMatching match_components(const std::vector<GaussianParams>& estimates,
                                          const std::vector<GaussianParams>& truth) {
    if (estimates.size() != truth.size()) {
        throw DimensionMismatch("match_components: lists of unequal length");
    }
    const int k = static_cast<int>(estimates.size());
    if (k == 0) throw InvalidShape("match_components: empty lists");
    if (k > 8) throw PreconditionFailed("match_components: exhaustive search capped at k = 8");

    Matrix cost(k, k);
    for (int i = 0; i < k; ++i) {
        for (int j = 0; j < k; ++j) {
            const auto [lo, hi] = tv_bracket(estimates[i], truth[j]);
            cost(i, j) = (lo + hi) / 2.0;
        }
    }
    std::vector<int> perm(k);
    std::iota(perm.begin(), perm.end(), 0);
    std::vector<int> best_perm = perm;
    double best_total = std::numeric_limits<double>::infinity();
    do {
        double total = 0.0;
        for (int i = 0; i < k; ++i) total += cost(i, perm[i]);
        if (total < best_total) {
            best_total = total;
            best_perm = perm;
        }
    } while (std::next_permutation(perm.begin(), perm.end()));

    ComponentMatching out;
    out.assignment = best_perm;
    out.costs.resize(k);
    for (int i = 0; i < k; ++i) out.costs[i] = cost(i, best_perm[i]);
    out.total = best_total;
    return out;
}

// ---------------------------------------------------------------------------
// end-to-end pipeline

struct PipelineParams {
    ClusterParams cluster;
    double eps = 0.0;  // contamination budget for every robust fit and the gate
    FilterConfig filter;  // c_f is shared; per-fit seeds are derived from the run seed
    TournamentConfig tournament;  // its eps field is overridden by the one above
    double merge_tol = 0.15;  // preliminary fits closer than this (tv midpoint) collapse
};

struct PipelineResult {
    HypothesisMixture winner;
    int winner_index = -1;  // index into `candidates` below
    std::vector<HypothesisMixture> candidates;
    TournamentResult duel;
    CandidateClusteringSet clustering;
    std::vector<std::string> notes;
};

// Corrupted samples -> candidate clusterings -> per-block robust fits ->
// near-duplicate collapse -> fresh-half reclustering and re-estimation with
// bin-fraction weights -> tournament on the held-back half.  The fresh set
// is split 50/50: the first floor(n/2) rows re-estimate, the rest referee.
// Stream layout (so any sub-fit can be replayed in isolation): cluster runs
// on stream 1, the tournament on stream 2, preliminary block fits on
// (100 + candidate, block), pooled refits after a collapse on
// (300 + candidate, group), bin re-estimates on (500 + candidate, bin).
inline PipelineResult full_pipeline(const SampleSet& corrupted, const SampleSet& fresh, int k,
                                    const PipelineParams& params, std::uint64_t seed) {
    if (corrupted.dim() != fresh.dim()) {
        throw DimensionMismatch("full_pipeline: sample sets of unequal dimension");
    }
    if (k < 1) throw PreconditionFailed("full_pipeline: k must be >= 1");
    if (fresh.n() < 2) throw PreconditionFailed("full_pipeline: fresh set too small to split");
    const int d = corrupted.dim();

    CandidateClusteringSet cset =
        cluster(corrupted.points, k, params.cluster, derive_seed(seed, 1));

    const int n_a = fresh.n() / 2;
    const Matrix fresh_a = fresh.points.topRows(n_a);
    const Matrix fresh_b = fresh.points.bottomRows(fresh.n() - n_a);

    std::vector<HypothesisMixture> mixes;
    std::vector<std::string> notes;
    for (std::size_t ci = 0; ci < cset.clusterings.size(); ++ci) {
        const auto& blocks = cset.clusterings[ci];
        try {
            std::vector<GaussianParams> prelim;
            prelim.reserve(blocks.size());
            for (std::size_t bj = 0; bj < blocks.size(); ++bj) {
                const FilterConfig cfg{
                    params.filter.c_f,
                    derive_seed(derive_seed(seed, 100 + static_cast<std::uint64_t>(ci)), bj)};
                prelim.push_back(
                    robust_gaussian(detail::rows_of(corrupted.points, blocks[bj]), params.eps, cfg)
                        .params);
            }

            // collapse near-duplicate preliminaries: a weighted mixture fed
            // through copy-count uniformization arrives as several blocks of
            // the same component, and reclustering against duplicate
            // hypotheses would split that component's fresh mass arbitrarily
            std::vector<int> root(prelim.size());
            std::iota(root.begin(), root.end(), 0);
            auto find = [&](int x) {
                while (root[x] != x) x = root[x] = root[root[x]];
                return x;
            };
            for (std::size_t a = 0; a + 1 < prelim.size(); ++a) {
                for (std::size_t b = a + 1; b < prelim.size(); ++b) {
                    const auto [lo, hi] = tv_bracket(prelim[a], prelim[b]);
                    if ((lo + hi) / 2.0 <= params.merge_tol) {
                        root[find(static_cast<int>(b))] = find(static_cast<int>(a));
                    }
                }
            }
            std::vector<int> group_of(prelim.size());
            std::vector<std::vector<int>> group_members;
            for (std::size_t a = 0; a < prelim.size(); ++a) {
                const int r = find(static_cast<int>(a));
                int g = -1;
                for (std::size_t gi = 0; gi < group_members.size(); ++gi) {
                    if (find(group_members[gi][0]) == r) g = static_cast<int>(gi);
                }
                if (g < 0) {
                    g = static_cast<int>(group_members.size());
                    group_members.push_back({});
                }
                group_members[g].push_back(static_cast<int>(a));
                group_of[a] = g;
            }

            std::vector<GaussianParams> hyps;
            hyps.reserve(group_members.size());
            for (std::size_t g = 0; g < group_members.size(); ++g) {
                const auto& members = group_members[g];
                if (members.size() == 1) {
                    hyps.push_back(prelim[members[0]]);
                    continue;
                }
                std::vector<int> pooled;
                for (int m : members) {
                    pooled.insert(pooled.end(), blocks[m].begin(), blocks[m].end());
                }
                std::sort(pooled.begin(), pooled.end());
                if (static_cast<int>(pooled.size()) >= 10 * d) {
                    const FilterConfig cfg{
                        params.filter.c_f,
                        derive_seed(derive_seed(seed, 300 + static_cast<std::uint64_t>(ci)), g)};
                    hyps.push_back(
                        robust_gaussian(detail::rows_of(corrupted.points, pooled), params.eps, cfg)
                            .params);
                } else {
                    hyps.push_back(prelim[members[0]]);
                    notes.push_back("candidate " + cset.provenance[ci] +
                                    ": pooled group too small to refit, kept first member");
                }
            }

            const std::vector<int> labels = recluster(fresh_a, hyps);
            std::vector<std::vector<int>> bins(hyps.size());
            for (int r = 0; r < n_a; ++r) bins[labels[r]].push_back(r);

            std::vector<GaussianParams> comps;
            std::vector<double> weights;
            for (std::size_t g = 0; g < hyps.size(); ++g) {
                if (static_cast<int>(bins[g].size()) >= 10 * d) {
                    const FilterConfig cfg{
                        params.filter.c_f,
                        derive_seed(derive_seed(seed, 500 + static_cast<std::uint64_t>(ci)), g)};
                    comps.push_back(
                        robust_gaussian(detail::rows_of(fresh_a, bins[g]), params.eps, cfg)
                            .params);
                } else {
                    comps.push_back(hyps[g]);
                    notes.push_back("candidate " + cset.provenance[ci] + ": bin " +
                                    std::to_string(g) + " too small to re-estimate");
                }
                weights.push_back(static_cast<double>(bins[g].size()) /
                                  static_cast<double>(n_a));
            }
            mixes.push_back(
                HypothesisMixture{std::move(comps), std::move(weights), cset.provenance[ci]});
        } catch (const Error& e) {
            notes.push_back("candidate " + cset.provenance[ci] + " dropped: " + e.what());
        }
    }
    if (mixes.empty()) {
        throw PipelineFailed("full_pipeline: no candidate clustering survived estimation");
    }

    TournamentConfig tcfg = params.tournament;
    tcfg.eps = params.eps;
    TournamentResult duel = tournament(mixes, fresh_b, derive_seed(seed, 2), tcfg);

    PipelineResult out;
    out.winner = duel.winner;
    out.winner_index = duel.winner_index;
    out.candidates = std::move(mixes);
    out.duel = std::move(duel);
    out.clustering = std::move(cset);
    out.notes = std::move(notes);
    return out;
}

}  // namespace robustmix
