// clustering.hpp -- randomized rounding of pseudoexpectations and the
// recursive candidate-clustering search built on top of it.
//
// The rounding step turns a pseudoexpectation over subset selectors into a
// random index set: pick an anchor i with probability proportional to pE w_i,
// then admit each j independently with the conditional pseudo-probability
// pE w_i w_j / pE w_i.  split repeats this, re-solving each time with an
// objective that rewards still-uncovered points, so the union of the rounded
// subsets covers all but roughly an eta fraction.
//
// cluster recurses: it auditions whitening frames (several probes, refined by
// a short fixed-point loop, scored by how decided the resulting selection is),
// rounds pseudoexpectations in the two best frames, merges the rounded
// subsets into candidate one-vs-rest splits, resizes each side to a multiple
// of the block size by proximity, and recurses on both sides.  Every output
// partition has blocks of exactly the top-level block size.  Candidate order
// is provenance-lexicographic, so a larger budget extends the list without
// reordering it.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "robustmix/common.hpp"
#include "robustmix/gaussian.hpp"
#include "robustmix/rng.hpp"
#include "robustmix/sos.hpp"

namespace robustmix {

struct RoundedSubsets {
    std::vector<std::vector<int>> subsets;
    int m = 0;
    double eta = 0.0;
    std::uint64_t seed = 0;
    double c_m = 4.0;
};

// ---------------------------------------------------------------------------
// rounding

inline std::vector<int> sample_rounded_subset(const PseudoExpectation& pe, Rng& rng) {
    const int n = pe.n;
    std::vector<double> p(n);
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        p[i] = std::max(0.0, pe.value({i}));
        total += p[i];
    }
    if (!(total > 0.0))
        throw PreconditionFailed("sample_rounded_subset: pseudoexpectation has no selector mass");

    int anchor = -1;
    for (int attempt = 0; attempt < 100 && anchor < 0; ++attempt) {
        double target = rng.uniform() * total;
        int pick = n - 1;
        for (int i = 0; i < n; ++i) {
            target -= p[i];
            if (target <= 0.0) {
                pick = i;
                break;
            }
        }
        if (p[pick] > 0.0) anchor = pick;
    }
    if (anchor < 0) {
        anchor = static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
    }

    std::vector<int> subset;
    for (int j = 0; j < n; ++j) {
        const double ratio = pe.value({anchor, j}) / p[anchor];
        const double prob = std::clamp(ratio, 0.0, 1.0);
        // one draw per index regardless of prob, so the stream is stable
        const double u = rng.uniform();
        if (u < prob) subset.push_back(j);
    }
    return subset;
}

inline RoundedSubsets split(const AxiomSystem& ax, double eta, std::uint64_t seed,
                            const SolveTolerances& tol = {}, double c_m = 4.0,
                            SolveState* warm = nullptr) {
    if (!(eta > 0.0 && eta < 1.0))
        throw PreconditionFailed("split: eta must lie strictly between 0 and 1");
    const int n = ax.n();
    const int m = std::max(1, static_cast<int>(std::ceil(c_m * ax.k * std::log(1.0 / eta))));

    RoundedSubsets out;
    out.m = m;
    out.eta = eta;
    out.seed = seed;
    out.c_m = c_m;

    Rng rng(seed);
    std::vector<char> covered(n, 0);
    // a warm state must come from an earlier solve of this same axiom system
    SolveState state;
    if (warm && warm->ws) state = *warm;
    for (int t = 0; t < m; ++t) {
        WPolynomial objective;
        for (int i = 0; i < n; ++i)
            if (!covered[i]) objective.add_term({i}, 1.0);
        // infeasibility surfaces on the first solve and propagates; later
        // solves reuse the warm state of the same feasible system
        const PseudoExpectation pe = solve_feasible(ax, objective, Sense::Maximize, tol, &state);
        std::vector<int> subset = sample_rounded_subset(pe, rng);
        for (int i : subset) covered[i] = 1;
        out.subsets.push_back(std::move(subset));
    }
    return out;
}

// ---------------------------------------------------------------------------
// selection resizing: move points across the boundary by Mahalanobis
// distance to the selection's own empirical Gaussian (fit once, then move
// the farthest members out or the nearest outsiders in)

namespace detail {

inline Matrix rows_of(const Matrix& points, const std::vector<int>& idx) {
    Matrix out(static_cast<int>(idx.size()), points.cols());
    for (int r = 0; r < static_cast<int>(idx.size()); ++r) out.row(r) = points.row(idx[r]);
    return out;
}

struct MahalMetric {
    Vector mean;
    Matrix precision;

    double operator()(const Vector& x) const {
        const Vector c = x - mean;
        return c.dot(precision * c);
    }
};

inline MahalMetric fit_metric(const Matrix& pts) {
    const int d = static_cast<int>(pts.cols());
    MahalMetric metric;
    metric.mean = pts.colwise().mean().transpose();
    Matrix sigma = Matrix::Zero(d, d);
    for (int r = 0; r < pts.rows(); ++r) {
        const Vector c = pts.row(r).transpose() - metric.mean;
        sigma += c * c.transpose();
    }
    sigma /= std::max<int>(1, static_cast<int>(pts.rows()));
    Eigen::SelfAdjointEigenSolver<Matrix> eig(sigma);
    const double lam_max = std::max(eig.eigenvalues().maxCoeff(), 0.0);
    const double floor = std::max(1e-9, 1e-9 * lam_max);
    Vector inv = eig.eigenvalues().cwiseMax(floor).cwiseInverse();
    metric.precision = eig.eigenvectors() * inv.asDiagonal() * eig.eigenvectors().transpose();
    return metric;
}

}  // namespace detail

inline std::pair<std::vector<int>, std::vector<int>> resize_selection(const Matrix& points,
                                                                      std::vector<int> inside,
                                                                      std::vector<int> outside,
                                                                      int target) {
    if (target < 0 || target > static_cast<int>(inside.size() + outside.size()))
        throw PreconditionFailed("resize_selection: target out of range");
    std::sort(inside.begin(), inside.end());
    std::sort(outside.begin(), outside.end());
    if (static_cast<int>(inside.size()) == target) return {inside, outside};

    const detail::MahalMetric metric =
        detail::fit_metric(detail::rows_of(points, inside.empty() ? outside : inside));
    auto by_distance = [&](const std::vector<int>& idx) {
        std::vector<std::pair<double, int>> scored;
        scored.reserve(idx.size());
        for (int i : idx) scored.push_back({metric(points.row(i).transpose()), i});
        std::sort(scored.begin(), scored.end());
        return scored;
    };

    if (static_cast<int>(inside.size()) > target) {
        auto scored = by_distance(inside);
        inside.clear();
        for (int r = 0; r < target; ++r) inside.push_back(scored[r].second);
        for (int r = target; r < static_cast<int>(scored.size()); ++r)
            outside.push_back(scored[r].second);
    } else {
        auto scored = by_distance(outside);
        const int need = target - static_cast<int>(inside.size());
        outside.clear();
        for (int r = 0; r < need; ++r) inside.push_back(scored[r].second);
        for (int r = need; r < static_cast<int>(scored.size()); ++r)
            outside.push_back(scored[r].second);
    }
    std::sort(inside.begin(), inside.end());
    std::sort(outside.begin(), outside.end());
    return {inside, outside};
}

// ---------------------------------------------------------------------------
// cluster

struct ClusterParams {
    int t = 2;
    double delta = 0.5;
    double eps = 0.0;
    double eta = 0.25;
    int N = 0;  // 0 means: use the top-level sample count
    int max_candidates = 64;
    int degree = 2;
    double c_m = 4.0;
    double c_corr = 10.0;
    int whiten_iters = 2;
    int probe_max_iters = 2500;  // solve budget while auditioning frames
    bool full_enumeration = false;
    // rounding only consumes pseudoexpectation values up to sampling noise,
    // so the solves here run with looser acceptance than the library default
    // and a bounded iteration budget; a capped solve still yields a usable
    // near-feasible iterate, while infeasible systems throw well before it
    SolveTolerances tol{.tol_eq = 5e-3,
                        .tol_ineq = 5e-3,
                        .tol_gap = 5e-2,
                        .max_iters = 8000,
                        .stop_tol = 1e-3};
};

struct CandidateClusteringSet {
    std::vector<std::vector<std::vector<int>>> clusterings;
    std::vector<std::string> provenance;
    bool budget_exceeded = false;
    std::vector<std::string> notes;
};

namespace detail {

struct ClusterContext {
    const Matrix& points;
    const ClusterParams& params;
    int block = 0;
    std::uint64_t seed = 0;
    int node_counter = 0;
    bool budget_exceeded = false;
    std::vector<std::string> notes;
};

struct NodeCandidate {
    std::string prov;
    std::vector<std::vector<int>> blocks;  // global indices
};

inline Whitening whitening_from_points(const Matrix& pts) {
    const int d = static_cast<int>(pts.cols());
    Whitening w;
    w.center = pts.colwise().mean().transpose();
    Matrix sigma = Matrix::Zero(d, d);
    for (int r = 0; r < pts.rows(); ++r) {
        const Vector c = pts.row(r).transpose() - w.center;
        sigma += c * c.transpose();
    }
    sigma /= std::max<int>(1, static_cast<int>(pts.rows()));
    Eigen::SelfAdjointEigenSolver<Matrix> eig(sigma);
    const double lam_max = std::max(eig.eigenvalues().maxCoeff(), 0.0);
    const double floor = std::max(1e-10 * std::max(lam_max, 1.0), 1e-12);
    Vector inv_sqrt = eig.eigenvalues().cwiseMax(floor).cwiseSqrt().cwiseInverse();
    w.W = eig.eigenvectors() * inv_sqrt.asDiagonal() * eig.eigenvectors().transpose();
    return w;
}

// fit a frame to a neighborhood while shedding interlopers: a handful of
// points from another distant cluster inflate a plain covariance fit enough
// to flatten the frame, so refit after dropping rows whose Mahalanobis
// distance dwarfs the median
inline Whitening trimmed_whitening(const Matrix& pts) {
    const int d = static_cast<int>(pts.cols());
    Matrix kept = pts;
    Whitening w = whitening_from_points(kept);
    for (int pass = 0; pass < 2; ++pass) {
        std::vector<double> m2(kept.rows());
        for (int r = 0; r < kept.rows(); ++r)
            m2[r] = (w.W * (kept.row(r).transpose() - w.center)).squaredNorm();
        std::vector<double> sorted = m2;
        std::nth_element(sorted.begin(), sorted.begin() + sorted.size() / 2, sorted.end());
        const double cut = 9.0 * std::max(sorted[sorted.size() / 2], 1e-12);
        std::vector<int> keep;
        for (int r = 0; r < kept.rows(); ++r)
            if (m2[r] <= cut) keep.push_back(r);
        if (static_cast<int>(keep.size()) == kept.rows() ||
            static_cast<int>(keep.size()) < d + 2)
            break;
        kept = rows_of(kept, keep);
        w = whitening_from_points(kept);
    }
    return w;
}

struct ProbeResult {
    bool alive = false;
    double score = -1.0;
    AxiomSystem ax;
    PseudoExpectation pe;
    SolveState state;
};

// one whitening probe: refine the frame by a short fixed-point loop of
// encode / solve / re-estimate, keep the round whose selection came out most
// decided (the refinement can drift off a good frame, so last is not best)
inline ProbeResult run_probe(ClusterContext& ctx, const Matrix& pts, int k_node, Whitening w,
                             const std::string& label) {
    ProbeResult result;
    const ClusterParams& p = ctx.params;
    EncodeOptions opt;
    opt.degree = p.degree;
    opt.c_corr = p.c_corr;
    SolveTolerances probe_tol = p.tol;
    probe_tol.max_iters = std::min(probe_tol.max_iters, p.probe_max_iters);
    for (int round = 0; round < std::max(1, p.whiten_iters); ++round) {
        AxiomSystem ax;
        try {
            ax = encode_axioms(pts, k_node, p.t, p.delta, p.eps, w, opt);
        } catch (const Error& e) {
            ctx.notes.push_back(label + ": encode failed: " + e.what());
            break;
        }
        WPolynomial objective;
        // cost rows by squared whitened distance, saturated a few sigma out.
        // in an adapted frame a foreign cluster costs separation^2, and after
        // the solver normalizes the objective by its largest coefficient such
        // rows hide the near-row distinctions this objective exists to express
        const double cost_cap = 25.0 * static_cast<double>(pts.cols());
        for (int i = 0; i < pts.rows(); ++i) {
            const Vector z = w.W * (pts.row(i).transpose() - w.center);
            objective.add_term({i}, std::min(z.squaredNorm(), cost_cap));
        }
        SolveState state;
        PseudoExpectation pe;
        try {
            pe = solve_feasible(ax, objective, Sense::Minimize, probe_tol, &state);
        } catch (const Infeasible& e) {
            ctx.notes.push_back(label + ": infeasible: " + e.what());
            break;
        }
        double score = 0.0;
        for (int i = 0; i < pts.rows(); ++i) {
            const double v = pe.value({i});
            score += v * v;
        }
        if (score > result.score) {
            result.alive = true;
            result.score = score;
            result.ax = std::move(ax);
            result.pe = pe;
            result.state = std::move(state);
        }

        Whitening next;
        try {
            next = update_whitening(pts, pe);
        } catch (const DegenerateSelection& e) {
            ctx.notes.push_back(label + ": degenerate selection: " + e.what());
            break;
        }
        const double rel = (next.W - w.W).norm() / std::max(1.0, w.W.norm());
        w = next;
        if (rel < 1e-6) break;
    }
    return result;
}

inline std::vector<NodeCandidate> cluster_rec(ClusterContext& ctx, const std::vector<int>& idx,
                                              int depth) {
    const int n_cur = static_cast<int>(idx.size());
    const int block = ctx.block;
    std::vector<NodeCandidate> out;
    if (depth > 32) {
        ctx.notes.push_back("recursion depth guard hit");
        return out;
    }
    if (n_cur <= static_cast<int>(1.1 * block)) {
        NodeCandidate base;
        base.prov = "b";
        base.blocks = {idx};
        out.push_back(std::move(base));
        return out;
    }
    const int k_node = n_cur / block;
    const int node_id = ctx.node_counter++;
    const Matrix pts = rows_of(ctx.points, idx);
    const int d = static_cast<int>(pts.cols());

    // probe frames: the global fit plus local fits around extreme seeds
    const Whitening global = whitening_from_points(pts);
    Matrix z = (pts.rowwise() - global.center.transpose()) * global.W.transpose();
    std::vector<int> seeds;
    {
        int lo = 0, hi = 0;
        for (int i = 1; i < n_cur; ++i) {
            if (z.row(i).squaredNorm() < z.row(lo).squaredNorm()) lo = i;
            if (z.row(i).squaredNorm() > z.row(hi).squaredNorm()) hi = i;
        }
        seeds.push_back(lo);
        if (hi != lo) seeds.push_back(hi);
        while (static_cast<int>(seeds.size()) < k_node + 1) {
            int far = -1;
            double far_d = -1.0;
            for (int i = 0; i < n_cur; ++i) {
                double nearest = 1e300;
                for (int s : seeds) nearest = std::min(nearest, (z.row(i) - z.row(s)).squaredNorm());
                if (nearest > far_d) {
                    far_d = nearest;
                    far = i;
                }
            }
            if (far < 0 || far_d <= 0.0) break;
            seeds.push_back(far);
        }
    }

    std::vector<ProbeResult> live;
    {
        std::vector<std::pair<std::string, Whitening>> probes;
        probes.push_back({"probe_global", global});
        for (std::size_t s = 0; s < seeds.size(); ++s) {
            std::vector<std::pair<double, int>> by_dist;
            for (int i = 0; i < n_cur; ++i)
                by_dist.push_back({(z.row(i) - z.row(seeds[s])).squaredNorm(), i});
            std::sort(by_dist.begin(), by_dist.end());
            const int take = std::min(n_cur, std::max(block, d + 2));
            Matrix local(take, d);
            for (int r = 0; r < take; ++r) local.row(r) = pts.row(by_dist[r].second);
            probes.push_back({"probe_seed" + std::to_string(s), trimmed_whitening(local)});
        }
        for (auto& [label, w] : probes) {
            ProbeResult probe = run_probe(ctx, pts, k_node, w,
                                          "node" + std::to_string(node_id) + "/" + label);
            if (probe.alive) live.push_back(std::move(probe));
        }
    }
    if (live.empty()) {
        ctx.notes.push_back("node" + std::to_string(node_id) +
                            ": all whitening probes infeasible, no candidates");
        return out;
    }
    std::stable_sort(live.begin(), live.end(),
                     [](const ProbeResult& a, const ProbeResult& b) { return a.score > b.score; });
    if (live.size() > 2) live.resize(2);

    // merge one probe's rounded subsets into at most 12 units (largest stay
    // single, the tail is pooled)
    auto merge_units = [](const RoundedSubsets& rounded) {
        std::vector<std::vector<int>> units;
        std::vector<int> order(rounded.subsets.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
            return rounded.subsets[a].size() > rounded.subsets[b].size();
        });
        const int unit_cap = 12;
        for (int r = 0; r < static_cast<int>(order.size()); ++r) {
            const auto& subset = rounded.subsets[order[r]];
            if (subset.empty()) continue;
            if (static_cast<int>(units.size()) < unit_cap - 1 ||
                static_cast<int>(order.size()) <= unit_cap) {
                units.push_back(subset);
            } else {
                if (static_cast<int>(units.size()) < unit_cap) units.push_back({});
                auto& pool = units.back();
                pool.insert(pool.end(), subset.begin(), subset.end());
                std::sort(pool.begin(), pool.end());
                pool.erase(std::unique(pool.begin(), pool.end()), pool.end());
            }
        }
        return units;
    };

    // every surviving probe contributes its pe-correlation dominant split;
    // only the best one also contributes the full unit-union enumeration.
    // dominant tags sort ahead of the enumerated ones, so they survive any
    // downstream candidate cap first.
    std::vector<std::pair<std::string, std::vector<int>>> raw_splits;
    std::vector<std::pair<std::string, std::vector<int>>> mask_splits;
    for (std::size_t rank = 0; rank < live.size(); ++rank) {
        ProbeResult& probe = live[rank];
        RoundedSubsets rounded;
        try {
            rounded = split(probe.ax, ctx.params.eta,
                            derive_seed(ctx.seed, 16 * static_cast<std::uint64_t>(node_id) + 3 +
                                                      static_cast<std::uint64_t>(rank)),
                            ctx.params.tol, ctx.params.c_m, &probe.state);
        } catch (const Infeasible& e) {
            ctx.notes.push_back("node" + std::to_string(node_id) +
                                ": split infeasible: " + e.what());
            continue;
        }
        const std::vector<std::vector<int>> units = merge_units(rounded);
        if (units.empty()) {
            ctx.notes.push_back("node" + std::to_string(node_id) +
                                ": rounding produced no points");
            continue;
        }

        const auto& anchor = units[0];
        auto corr = [&](const std::vector<int>& u) {
            double total = 0.0;
            for (int i : u)
                for (int j : anchor) total += probe.pe.value({i, j});
            return total / (static_cast<double>(u.size()) * anchor.size());
        };
        const double baseline = corr(anchor);
        std::vector<int> dom;
        for (const auto& u : units) {
            if (corr(u) >= 0.5 * baseline) {
                dom.insert(dom.end(), u.begin(), u.end());
            }
        }
        std::sort(dom.begin(), dom.end());
        dom.erase(std::unique(dom.begin(), dom.end()), dom.end());
        raw_splits.push_back({"A" + std::to_string(rank), std::move(dom)});

        if (rank != 0) continue;
        const int u_count = static_cast<int>(units.size());
        for (std::uint32_t mask = 1; mask + 1 < (1u << u_count); ++mask) {
            std::vector<int> merged;
            for (int t = 0; t < u_count; ++t) {
                if (mask & (1u << t)) merged.insert(merged.end(), units[t].begin(), units[t].end());
            }
            std::sort(merged.begin(), merged.end());
            merged.erase(std::unique(merged.begin(), merged.end()), merged.end());
            char tag[16];
            std::snprintf(tag, sizeof tag, "S%04u", mask);
            mask_splits.push_back({tag, std::move(merged)});
        }
    }
    raw_splits.insert(raw_splits.end(), std::make_move_iterator(mask_splits.begin()),
                      std::make_move_iterator(mask_splits.end()));
    if (raw_splits.empty()) return out;

    // recurse on each distinct sized split (sides deduplicated as unordered
    // pairs), assembling cross products of the children's candidates
    std::set<std::vector<int>> seen_sides;
    const int node_cap = 4096;
    for (auto& [tag, side_local] : raw_splits) {
        if (static_cast<int>(out.size()) >= node_cap) {
            ctx.budget_exceeded = true;
            break;
        }
        const int target =
            static_cast<int>(std::llround(static_cast<double>(side_local.size()) / block)) * block;
        if (target <= 0 || target >= n_cur) {
            ctx.notes.push_back("node" + std::to_string(node_id) + "/" + tag +
                                ": side resolves to an empty split, dropped");
            continue;
        }
        std::vector<int> side_global, rest_global;
        {
            std::vector<char> in_side(n_cur, 0);
            for (int p : side_local) in_side[p] = 1;
            for (int p = 0; p < n_cur; ++p)
                (in_side[p] ? side_global : rest_global).push_back(idx[p]);
        }
        auto [inside, outside] = resize_selection(ctx.points, side_global, rest_global, target);
        // a split and its mirror produce the same partitions; key on the
        // smaller side (ties lexicographic)
        const std::vector<int>& canon_key =
            inside.size() < outside.size()
                ? inside
                : outside.size() < inside.size() ? outside
                                                 : (inside < outside ? inside : outside);
        if (!seen_sides.insert(canon_key).second) continue;

        const auto left = cluster_rec(ctx, inside, depth + 1);
        if (left.empty()) continue;
        const auto right = cluster_rec(ctx, outside, depth + 1);
        for (const auto& lc : left) {
            for (const auto& rc : right) {
                if (static_cast<int>(out.size()) >= node_cap) {
                    ctx.budget_exceeded = true;
                    break;
                }
                NodeCandidate cand;
                cand.prov = tag + std::string("(") + lc.prov + "," + rc.prov + ")";
                cand.blocks = lc.blocks;
                cand.blocks.insert(cand.blocks.end(), rc.blocks.begin(), rc.blocks.end());
                out.push_back(std::move(cand));
            }
        }
    }
    return out;
}

}  // namespace detail

inline CandidateClusteringSet cluster(const Matrix& points, int k, const ClusterParams& params,
                                      std::uint64_t seed) {
    const int n = static_cast<int>(points.rows());
    if (k <= 0) throw PreconditionFailed("cluster: k must be >= 1");
    if (n <= 0 || n % k != 0) throw InvalidShape("cluster: n must be a positive multiple of k");
    if (params.max_candidates <= 0)
        throw PreconditionFailed("cluster: candidate budget must be >= 1");
    const int N = params.N > 0 ? params.N : n;
    if (N % k != 0) throw InvalidShape("cluster: N must be divisible by k");

    detail::ClusterContext ctx{points, params, N / k, seed, 0, false, {}};

    std::vector<int> all(n);
    std::iota(all.begin(), all.end(), 0);
    auto raw = detail::cluster_rec(ctx, all, 0);

    std::stable_sort(raw.begin(), raw.end(),
                     [](const detail::NodeCandidate& a, const detail::NodeCandidate& b) {
                         return a.prov < b.prov;
                     });

    CandidateClusteringSet out;
    out.notes = std::move(ctx.notes);
    std::set<std::vector<std::vector<int>>> seen;
    for (auto& cand : raw) {
        std::vector<std::vector<int>> canonical = cand.blocks;
        for (auto& blk : canonical) std::sort(blk.begin(), blk.end());
        std::sort(canonical.begin(), canonical.end());
        if (!seen.insert(canonical).second) continue;
        if (static_cast<int>(out.clusterings.size()) >= params.max_candidates) {
            out.budget_exceeded = true;
            break;
        }
        out.clusterings.push_back(std::move(canonical));
        out.provenance.push_back(std::move(cand.prov));
    }
    out.budget_exceeded = out.budget_exceeded || ctx.budget_exceeded;
    return out;
}

// ---------------------------------------------------------------------------
// weights_to_uniform

struct UniformizedMixture {
    MixtureModel mixture;
    std::vector<int> multiplicity;  // copies per original component
    std::vector<int> origin;        // new index -> original component
    double max_rel_error = 0.0;
};

inline UniformizedMixture weights_to_uniform(const MixtureModel& model, double tol = 0.05) {
    const auto& weights = model.weights();
    double w_min = weights[0];
    for (double w : weights) w_min = std::min(w_min, w);
    if (!(w_min > 0.0))
        throw PreconditionFailed("weights_to_uniform: weights must be strictly positive");

    std::vector<int> multiplicity(weights.size());
    double max_rel_error = 0.0;
    int total = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        const double ratio = weights[i] / w_min;
        const int c = std::max<int>(1, static_cast<int>(std::llround(ratio)));
        max_rel_error = std::max(max_rel_error, std::abs(ratio - c) / c);
        multiplicity[i] = c;
        total += c;
    }
    if (max_rel_error > tol) {
        throw WeightsNotCommensurate(
            "weights_to_uniform: weight ratios are not near integers (relative error " +
            std::to_string(max_rel_error) + ")");
    }

    std::vector<GaussianParams> components;
    std::vector<int> origin;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        for (int c = 0; c < multiplicity[i]; ++c) {
            components.push_back(model.component(static_cast<int>(i)));
            origin.push_back(static_cast<int>(i));
        }
    }
    UniformizedMixture out{
        MixtureModel(std::move(components), std::vector<double>(total, 1.0 / total)),
        std::move(multiplicity), std::move(origin), max_rel_error};
    return out;
}

}  // namespace robustmix
