#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "robustmix/corrupt.hpp"
#include "robustmix/distances.hpp"
#include "robustmix/robust.hpp"

using namespace robustmix;

namespace {

Matrix identity_gaussian_points(int n, int d, std::uint64_t seed) {
    GaussianParams g(Vector::Zero(d), Matrix::Identity(d, d));
    return sample_gaussian(g, n, seed);
}

// plain mean and 1/n covariance, written independently of the library helper
GaussianParams empirical_oracle(const Matrix& pts) {
    const int n = static_cast<int>(pts.rows());
    const int d = static_cast<int>(pts.cols());
    Vector mean = Vector::Zero(d);
    for (int r = 0; r < n; ++r) mean += pts.row(r).transpose();
    mean /= static_cast<double>(n);
    Matrix cov = Matrix::Zero(d, d);
    for (int r = 0; r < n; ++r) {
        const Vector c = pts.row(r).transpose() - mean;
        cov += c * c.transpose();
    }
    cov /= static_cast<double>(n);
    return GaussianParams(mean, cov);
}

double spectral_gap_to_identity(const Matrix& cov) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(cov - Matrix::Identity(cov.rows(), cov.cols()));
    return es.eigenvalues().cwiseAbs().maxCoeff();
}

double tv_midpoint(const GaussianParams& p, const GaussianParams& q) {
    const auto [lo, hi] = tv_bracket(p, q);
    return (lo + hi) / 2.0;
}

HypothesisMixture pair_mixture(double gap, double weight0 = 0.5) {
    const Matrix eye = Matrix::Identity(2, 2);
    Vector mu = Vector::Zero(2);
    std::vector<GaussianParams> comps;
    comps.emplace_back(mu, eye);
    mu(0) = gap;
    comps.emplace_back(mu, eye);
    return HypothesisMixture{comps, {weight0, 1.0 - weight0}, "fixture"};
}

}  // namespace

TEST_CASE("robust fit with a zero contamination budget is the empirical estimate") {
    for (int s = 0; s < 20; ++s) {
        const Matrix pts = identity_gaussian_points(200, 2, 3301 + s);
        const RobustFit fit = robust_gaussian(pts, 0.0);
        const GaussianParams oracle = empirical_oracle(pts);
        // the oracle sums rows in a different order, so allow reassociation
        // roundoff; the flags below witness that no filtering happened
        REQUIRE((fit.params.mean() - oracle.mean()).cwiseAbs().maxCoeff() <= 1e-14);
        REQUIRE((fit.params.covariance() - oracle.covariance()).cwiseAbs().maxCoeff() <= 1e-14);
        REQUIRE(fit.test_passed);
        REQUIRE_FALSE(fit.budget_exhausted);
        REQUIRE(fit.removed == 0);
        REQUIRE(fit.iterations == 0);
    }
}

TEST_CASE("robust fit survives a far planted cluster") {
    for (std::uint64_t seed : {3310ull, 3311ull, 3312ull}) {
        SampleSet clean;
        clean.points = identity_gaussian_points(5000, 2, seed);
        const SampleSet bad = corrupt(clean, 0.05, "far-cluster", seed + 7);

        const Vector naive = bad.points.colwise().mean().transpose();
        Vector clean_sum = Vector::Zero(2);
        int clean_count = 0;
        for (int r = 0; r < bad.n(); ++r) {
            if ((*bad.corrupted)[r]) continue;
            clean_sum += bad.points.row(r).transpose();
            ++clean_count;
        }
        const Vector clean_mean = clean_sum / clean_count;

        const RobustFit fit = robust_gaussian(bad.points, 0.05);
        const double err = fit.params.mean().norm();

        // planted cluster sits at distance 1e3, so the naive mean is off by
        // roughly 50 while the clean-sample mean lands near 0.02
        REQUIRE(err <= 0.1);
        REQUIRE(err <= naive.norm() / 100.0);
        REQUIRE(err <= 10.0 * clean_mean.norm());
        REQUIRE(fit.test_passed);
        REQUIRE(fit.removed <= static_cast<int>(std::ceil(2.0 * 0.05 * 5000)));
        REQUIRE(fit.removed >= 250);  // every planted row has to go
        REQUIRE(spectral_gap_to_identity(fit.params.covariance()) <= 0.2);
    }
}

TEST_CASE("robust fit flags an exhausted removal budget") {
    // 10% planted mass but only a 3% declared budget: ceil(2 * 0.03 * 300) = 18
    // removals cannot clear 30 planted rows, so the filter must give up and say so
    Matrix pts(300, 2);
    pts.topRows(270) = identity_gaussian_points(270, 2, 3320);
    const Matrix jitter = identity_gaussian_points(30, 2, 3321);
    for (int r = 0; r < 30; ++r) {
        pts(270 + r, 0) = 100.0 + 0.01 * jitter(r, 0);
        pts(270 + r, 1) = 100.0 + 0.01 * jitter(r, 1);
    }

    const RobustFit fit = robust_gaussian(pts, 0.03);
    REQUIRE(fit.budget_exhausted);
    REQUIRE_FALSE(fit.test_passed);
    REQUIRE(fit.removed == 18);
    REQUIRE(fit.iterations >= 2);
    REQUIRE(fit.params.mean().allFinite());
    REQUIRE(fit.params.covariance().allFinite());
}

TEST_CASE("robust fit of identical points returns a ridged point mass") {
    Matrix pts(40, 2);
    for (int r = 0; r < 40; ++r) {
        pts(r, 0) = 1.5;
        pts(r, 1) = -2.25;
    }

    SECTION("filter disabled") {
        const RobustFit fit = robust_gaussian(pts, 0.0);
        REQUIRE(fit.params.mean()(0) == 1.5);
        REQUIRE(fit.params.mean()(1) == -2.25);
        REQUIRE(fit.params.ridge_applied() > 0.0);
        REQUIRE(fit.params.covariance()(0, 1) == 0.0);
    }
    SECTION("wide threshold accepts the degenerate spectrum") {
        // tau(0.12) = 10 * 0.12 * log(1/0.12) = 2.54 exceeds the deviation
        // |0 - 1| of a zero whitened second moment, so the test passes
        const RobustFit fit = robust_gaussian(pts, 0.12);
        REQUIRE(fit.test_passed);
        REQUIRE(fit.removed == 0);
        REQUIRE(fit.params.mean()(0) == 1.5);
    }
    SECTION("tight threshold stalls without looping") {
        // tau(0.02) = 0.78 < 1: the test fires but every removal score is
        // zero, so the filter must bail out rather than spin
        const RobustFit fit = robust_gaussian(pts, 0.02);
        REQUIRE_FALSE(fit.test_passed);
        REQUIRE_FALSE(fit.budget_exhausted);
        REQUIRE(fit.removed == 0);
        REQUIRE(fit.params.mean()(0) == 1.5);
        REQUIRE(fit.params.ridge_applied() > 0.0);
    }
}

TEST_CASE("robust fit validates its inputs") {
    const Matrix ok = identity_gaussian_points(50, 2, 3330);
    REQUIRE_THROWS_AS(robust_gaussian(ok.topRows(19), 0.05), PreconditionFailed);
    REQUIRE_THROWS_AS(robust_gaussian(ok, 0.21), InvalidEpsilon);
    REQUIRE_THROWS_AS(robust_gaussian(ok, -0.01), InvalidEpsilon);
}

TEST_CASE("recluster assigns by highest density and breaks ties low") {
    const Matrix eye = Matrix::Identity(2, 2);
    Vector mu0 = Vector::Zero(2);
    Vector mu1 = Vector::Zero(2);
    mu1(0) = 10.0;
    const std::vector<GaussianParams> pair = {GaussianParams(mu0, eye), GaussianParams(mu1, eye)};

    SECTION("single hypothesis labels everything zero") {
        const Matrix pts = identity_gaussian_points(50, 2, 3340);
        const std::vector<int> labels = recluster(pts, {GaussianParams(mu0, eye)});
        REQUIRE(std::count(labels.begin(), labels.end(), 0) == 50);
    }
    SECTION("well separated pair mislabels almost nothing") {
        // misclassification mass of the 10 sigma pair is ~3e-7 per point
        const Matrix pts = identity_gaussian_points(2000, 2, 3341);
        const std::vector<int> labels = recluster(pts, pair);
        const auto zeros = std::count(labels.begin(), labels.end(), 0);
        REQUIRE(zeros >= 1980);
    }
    SECTION("exact midpoint goes to the lower index") {
        Matrix mid(1, 2);
        mid(0, 0) = 5.0;
        mid(0, 1) = 0.0;
        const std::vector<int> labels = recluster(mid, pair);
        REQUIRE(labels[0] == 0);
    }
    SECTION("no hypotheses is an error") {
        const Matrix pts = identity_gaussian_points(5, 2, 3342);
        REQUIRE_THROWS_AS(recluster(pts, {}), PreconditionFailed);
    }
}

TEST_CASE("recluster decisions survive joint affine maps") {
    const Matrix eye = Matrix::Identity(2, 2);
    Vector mu1 = Vector::Zero(2);
    mu1(0) = 6.0;
    const GaussianParams g0(Vector::Zero(2), eye);
    const GaussianParams g1(mu1, eye);

    Matrix pts(200, 2);
    pts.topRows(100) = sample_gaussian(g0, 100, 3350);
    pts.bottomRows(100) = sample_gaussian(g1, 100, 3351);
    const std::vector<int> labels = recluster(pts, {g0, g1});

    Matrix a(2, 2);
    a << 1.2, 0.3, -0.1, 0.9;
    Vector b(2);
    b << 3.0, -1.0;

    Matrix mapped(200, 2);
    for (int r = 0; r < 200; ++r) {
        mapped.row(r) = (a * pts.row(r).transpose() + b).transpose();
    }
    const std::vector<GaussianParams> mapped_hyps = {
        GaussianParams(a * g0.mean() + b, a * g0.covariance() * a.transpose()),
        GaussianParams(a * g1.mean() + b, a * g1.covariance() * a.transpose())};
    const std::vector<int> mapped_labels = recluster(mapped, mapped_hyps);

    REQUIRE(labels == mapped_labels);
}

TEST_CASE("tournament favors the hypothesis matching fresh data") {
    const Matrix eye = Matrix::Identity(2, 2);
    Vector shifted = Vector::Zero(2);
    shifted(0) = 10.0;
    const HypothesisMixture truth{{GaussianParams(Vector::Zero(2), eye)}, {1.0}, "truth"};
    const HypothesisMixture offset{{GaussianParams(shifted, eye)}, {1.0}, "offset"};
    const Matrix fresh = identity_gaussian_points(5000, 2, 3360);

    SECTION("shifted impostor loses") {
        const TournamentResult res = tournament({truth, offset}, fresh, 3361);
        REQUIRE(res.winner_index == 0);
        REQUIRE(res.wins == std::vector<int>{1, 0});
        REQUIRE_FALSE(res.discard_fallback);
        REQUIRE(res.winner.source == "truth");
    }
    SECTION("single candidate comes back unchanged") {
        const TournamentResult res = tournament({offset}, fresh, 3362);
        REQUIRE(res.winner_index == 0);
        REQUIRE(res.winner.components[0].mean()(0) == 10.0);
        REQUIRE(res.wins == std::vector<int>{0});
    }
    SECTION("identical candidates tie toward the lower index") {
        const TournamentResult res = tournament({truth, truth}, fresh, 3363);
        REQUIRE(res.winner_index == 0);
        REQUIRE(res.wins == std::vector<int>{0, 0});
    }
    SECTION("weights have to sum to one") {
        const HypothesisMixture broken{
            {GaussianParams(Vector::Zero(2), eye), GaussianParams(shifted, eye)},
            {0.45, 0.45},
            "broken"};
        REQUIRE_THROWS_AS(tournament({broken}, fresh, 3364), InvalidWeights);
    }
    SECTION("no candidates at all") {
        REQUIRE_THROWS_AS(tournament({}, fresh, 3365), AllCandidatesRejected);
    }
}

TEST_CASE("tournament discards heavily overlapping hypotheses first") {
    // gate at eps = 0.05, k = 2: overlap must certify below (0.025)^2, which
    // a 1 sigma pair (overlap bound 0.88) fails and a 20 sigma pair passes
    const HypothesisMixture blurry = pair_mixture(1.0);
    const HypothesisMixture crisp = pair_mixture(20.0);

    GaussianParams half0(Vector::Zero(2), Matrix::Identity(2, 2));
    Vector far = Vector::Zero(2);
    far(0) = 20.0;
    Matrix fresh(2000, 2);
    fresh.topRows(1000) = sample_gaussian(half0, 1000, 3370);
    fresh.bottomRows(1000) = sample_gaussian(GaussianParams(far, Matrix::Identity(2, 2)), 1000, 3371);

    SECTION("gated candidate cannot win") {
        const TournamentResult res = tournament({blurry, crisp}, fresh, 3372);
        REQUIRE(res.discarded == std::vector<char>{1, 0});
        REQUIRE_FALSE(res.discard_fallback);
        REQUIRE(res.winner_index == 1);
        REQUIRE(res.wins[0] == 0);
    }
    SECTION("gate waived when it would empty the field") {
        const TournamentResult res = tournament({blurry, pair_mixture(1.1)}, fresh, 3373);
        REQUIRE(res.discard_fallback);
        REQUIRE((res.winner_index == 0 || res.winner_index == 1));
    }
    SECTION("strict mode refuses an empty field") {
        TournamentConfig cfg;
        cfg.strict_discard = true;
        REQUIRE_THROWS_AS(tournament({blurry, pair_mixture(1.1)}, fresh, 3374, cfg),
                          AllCandidatesRejected);
    }
    SECTION("zero eps disables the gate") {
        TournamentConfig cfg;
        cfg.eps = 0.0;
        const TournamentResult res = tournament({blurry, crisp}, fresh, 3375, cfg);
        REQUIRE(res.discarded == std::vector<char>{0, 0});
        REQUIRE_FALSE(res.discard_fallback);
    }
}

TEST_CASE("component matching finds the lowest-cost pairing") {
    const Matrix eye = Matrix::Identity(2, 2);
    Vector mu1 = Vector::Zero(2);
    mu1(0) = 8.0;
    const std::vector<GaussianParams> truth = {GaussianParams(Vector::Zero(2), eye),
                                               GaussianParams(mu1, eye)};

    Vector e0(2), e1(2);
    e0 << 8.1, 0.05;
    e1 << 0.1, -0.05;
    const std::vector<GaussianParams> est = {GaussianParams(e0, 1.05 * eye),
                                             GaussianParams(e1, 0.97 * eye)};

    const ComponentMatching m = match_components(est, truth);
    REQUIRE(m.assignment == std::vector<int>{1, 0});
    REQUIRE(m.costs[0] <= 0.2);
    REQUIRE(m.costs[1] <= 0.2);

    // the swapped pairing is the only alternative; it must cost at least as much
    const double swapped = tv_midpoint(est[0], truth[0]) + tv_midpoint(est[1], truth[1]);
    REQUIRE(m.total <= swapped);

    REQUIRE_THROWS_AS(match_components(est, {truth[0]}), DimensionMismatch);
}

TEST_CASE("pipeline with a single block reduces to one robust fit") {
    Vector mu(2);
    mu << 1.0, 2.0;
    Matrix cov(2, 2);
    cov << 2.0, 0.0, 0.0, 0.5;
    const GaussianParams g(mu, cov);

    SampleSet corrupted;
    corrupted.points = sample_gaussian(g, 300, 3380);
    SampleSet fresh;
    fresh.points = sample_gaussian(g, 400, 3381);

    PipelineParams params;
    params.eps = 0.05;

    const PipelineResult res = full_pipeline(corrupted, fresh, 1, params, 3382);
    REQUIRE(res.winner.components.size() == 1);
    REQUIRE(res.winner.weights == std::vector<double>{1.0});
    REQUIRE(res.winner_index == 0);

    // the single component must be exactly the advertised sub-fit of the
    // re-estimation half, stream (500 + candidate, bin)
    const FilterConfig cfg{10.0, derive_seed(derive_seed(3382, 500), 0)};
    const RobustFit direct = robust_gaussian(fresh.points.topRows(200), 0.05, cfg);
    REQUIRE((res.winner.components[0].mean() - direct.params.mean()).cwiseAbs().maxCoeff() == 0.0);
    REQUIRE((res.winner.components[0].covariance() - direct.params.covariance())
                .cwiseAbs()
                .maxCoeff() == 0.0);

    const PipelineResult again = full_pipeline(corrupted, fresh, 1, params, 3382);
    REQUIRE((again.winner.components[0].mean() - res.winner.components[0].mean())
                .cwiseAbs()
                .maxCoeff() == 0.0);
    REQUIRE(again.duel.wins == res.duel.wins);
}

TEST_CASE("pipeline recovers a separated pair end to end") {
    const Matrix eye = Matrix::Identity(2, 2);
    Vector mu1 = Vector::Zero(2);
    mu1(0) = 20.0;
    const GaussianParams g0(Vector::Zero(2), eye);
    const GaussianParams g1(mu1, eye);
    const MixtureModel model = MixtureModel::uniform({g0, g1});

    SampleSet train = sample_mixture(model, 200, 3390);
    train = corrupt(train, 0.02, "far-cluster", 3391);
    SampleSet fresh = sample_mixture(model, 400, 3392);
    fresh = corrupt(fresh, 0.02, "far-cluster", 3393);

    PipelineParams params;
    // blocks of 100 carry fourth-moment noise of a few units; the 2% planted
    // rows force about two foreign points into a truth block, which at a 20
    // sigma gap costs ~133 on the order-4 row, so the slack sits well above
    // that and well below the ~3300 a half-and-half selection would need
    params.cluster.delta = 450.0;
    params.cluster.eps = 0.02;
    params.cluster.max_candidates = 16;
    params.eps = 0.02;

    const PipelineResult res = full_pipeline(train, fresh, 2, params, 3394);

    REQUIRE(res.winner.components.size() == 2);
    const ComponentMatching m =
        match_components(res.winner.components, {g0, g1});
    REQUIRE(m.costs[0] <= 0.15);
    REQUIRE(m.costs[1] <= 0.15);
    for (double w : res.winner.weights) {
        REQUIRE(w >= 0.4);
        REQUIRE(w <= 0.6);
    }
    REQUIRE(std::abs(res.winner.weights[0] + res.winner.weights[1] - 1.0) <= 1e-9);
}

TEST_CASE("pipeline recovers weights of an uneven mixture") {
    const Matrix eye = Matrix::Identity(2, 2);
    Vector mu1 = Vector::Zero(2);
    mu1(0) = 60.0;
    const GaussianParams heavy(Vector::Zero(2), eye);
    const GaussianParams light(mu1, eye);
    const MixtureModel model({heavy, light}, {2.0 / 3.0, 1.0 / 3.0});

    const SampleSet train = sample_mixture(model, 60, 3400);
    const SampleSet fresh = sample_mixture(model, 240, 3401);

    PipelineParams params;
    // blocks of 20 carry fourth-moment noise around eighteen in their own
    // frame, so give generous slack; the two copies covering the heavy
    // component are fits of near-identical point sets and must collapse
    params.cluster.delta = 30.0;
    params.cluster.max_candidates = 12;
    params.merge_tol = 0.3;

    const PipelineResult res = full_pipeline(train, fresh, 3, params, 3402);

    REQUIRE(res.winner.components.size() == 2);
    const ComponentMatching m = match_components(res.winner.components, {heavy, light});
    REQUIRE(m.costs[0] <= 0.2);
    REQUIRE(m.costs[1] <= 0.2);

    // recover the weight vector in matched order
    std::vector<double> matched(2, 0.0);
    for (int i = 0; i < 2; ++i) matched[m.assignment[i]] = res.winner.weights[i];
    REQUIRE(std::abs(matched[0] - 2.0 / 3.0) + std::abs(matched[1] - 1.0 / 3.0) <= 0.1);
}
