#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "robustmix/moments.hpp"

using namespace robustmix;

namespace {

SampleSet standard_normal_set(int n, int d, std::uint64_t seed) {
    GaussianParams g{Vector::Zero(d), Matrix::Identity(d, d)};
    SampleSet s;
    s.points = sample_gaussian(g, n, seed);
    s.seed = seed;
    return s;
}

std::vector<int> all_indices(int n) {
    std::vector<int> idx(n);
    for (int i = 0; i < n; ++i) idx[i] = i;
    return idx;
}

}  // namespace

TEST_CASE("gaussian_moment_tensor closed forms") {
    const auto m2 = gaussian_moment_tensor(2, 3);
    REQUIRE(m2.get({0, 0}) == 1.0);
    REQUIRE(m2.get({1, 1}) == 1.0);
    REQUIRE(m2.get({0, 1}) == 0.0);
    REQUIRE(m2.get({2, 1}) == 0.0);

    const auto m3 = gaussian_moment_tensor(3, 2);
    for (double v : m3.values) REQUIRE(v == 0.0);

    const auto m4 = gaussian_moment_tensor(4, 2);
    REQUIRE(m4.get({0, 0, 0, 0}) == 3.0);
    REQUIRE(m4.get({0, 0, 1, 1}) == 1.0);
    REQUIRE(m4.get({0, 0, 0, 1}) == 0.0);
    // permuted index resolves to the same entry
    REQUIRE(m4.get({1, 0, 1, 0}) == 1.0);
}

TEST_CASE("gaussian_moment_tensor fourth-order entries match Monte Carlo") {
    // 1e7 standard normal pairs; 3-sigma bands from the exact eighth moments
    Rng rng(777001);
    const std::size_t n = 10'000'000;
    double s4000 = 0, s2200 = 0, s3100 = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double x = rng.normal(), y = rng.normal();
        s4000 += x * x * x * x;
        s2200 += x * x * y * y;
        s3100 += x * x * x * y;
    }
    const double inv = 1.0 / double(n);
    REQUIRE(s4000 * inv == Catch::Approx(3.0).margin(3 * std::sqrt(96.0 * inv)));
    REQUIRE(s2200 * inv == Catch::Approx(1.0).margin(3 * std::sqrt(8.0 * inv)));
    REQUIRE(s3100 * inv == Catch::Approx(0.0).margin(3 * std::sqrt(15.0 * inv)));
}

TEST_CASE("MomentTensor weights make compressed norms agree with full tensors") {
    const auto m2 = gaussian_moment_tensor(2, 3);
    REQUIRE(m2.frobenius_sq() == Catch::Approx(3.0).epsilon(1e-15));  // ||I_3||_F^2

    MomentTensor t = MomentTensor::zero(3, 3);
    // weight of (0,1,2) is 3! = 6; of (0,0,1) is 3
    const auto& tuples = t.tuples;
    for (std::size_t e = 0; e < tuples.size(); ++e) {
        if (tuples[e] == std::vector<int>{0, 1, 2}) REQUIRE(t.weights[e] == 6);
        if (tuples[e] == std::vector<int>{0, 0, 1}) REQUIRE(t.weights[e] == 3);
        if (tuples[e] == std::vector<int>{2, 2, 2}) REQUIRE(t.weights[e] == 1);
    }
    REQUIRE(t.tuples.size() == 10);  // C(5,3)
}

TEST_CASE("M4 contracted on its last two slots equals (d+2) M2") {
    for (int d = 2; d <= 5; ++d) {
        const auto m4 = gaussian_moment_tensor(4, d);
        for (int i = 0; i < d; ++i) {
            for (int j = 0; j < d; ++j) {
                double acc = 0.0;
                for (int c = 0; c < d; ++c) acc += m4.get({i, j, c, c});
                REQUIRE(acc == Catch::Approx(i == j ? d + 2.0 : 0.0).margin(1e-14));
            }
        }
    }
}

TEST_CASE("empirical_whitened_tensor centering and whitening are exact") {
    const auto s = standard_normal_set(400, 3, 550);
    const auto idx = all_indices(400);

    const auto t1 = empirical_whitened_tensor(s.points, idx, 1);
    for (double v : t1.values) REQUIRE(v == Catch::Approx(0.0).margin(1e-12));

    const auto t2 = empirical_whitened_tensor(s.points, idx, 2);
    const auto id2 = gaussian_moment_tensor(2, 3);
    REQUIRE(std::sqrt(t2.frobenius_distance_sq(id2)) <= 1e-10);
}

TEST_CASE("empirical_whitened_tensor fourth moment concentrates") {
    const auto s = standard_normal_set(100000, 2, 551);
    const auto t4 = empirical_whitened_tensor(s.points, all_indices(100000), 4);
    REQUIRE(t4.get({0, 0, 0, 0}) == Catch::Approx(3.0).margin(0.1));
    REQUIRE(t4.get({1, 1, 1, 1}) == Catch::Approx(3.0).margin(0.1));
    REQUIRE(t4.get({0, 0, 1, 1}) == Catch::Approx(1.0).margin(0.1));
}

TEST_CASE("empirical_whitened_tensor rejects degenerate subsets") {
    Matrix line(10, 2);
    for (int i = 0; i < 10; ++i) {
        line(i, 0) = i;
        line(i, 1) = 2.0 * i;  // rank-1 covariance
    }
    REQUIRE_THROWS_AS(empirical_whitened_tensor(line, all_indices(10), 2), DegenerateSubset);

    const auto s = standard_normal_set(50, 3, 552);
    REQUIRE_THROWS_AS(empirical_whitened_tensor(s.points, {0, 1, 2}, 2), DegenerateSubset);
}

TEST_CASE("whitened tensors are affine-invariant up to rotation-invariant functionals") {
    // whitening cancels an affine map up to an orthogonal factor, so the
    // Frobenius norm and the residual against the isotropic Gaussian moment
    // are preserved; those are the quantities the conditions checker uses
    const auto s = standard_normal_set(500, 3, 553);
    const auto idx = all_indices(500);
    Matrix A(3, 3);
    A << 2.0, 0.3, -0.5, 0.1, 1.5, 0.4, -0.2, 0.6, 0.9;
    Vector b(3);
    b << 5.0, -3.0, 11.0;
    Matrix mapped = (s.points * A.transpose()).rowwise() + b.transpose();

    for (int ord : {2, 3, 4}) {
        const auto t = empirical_whitened_tensor(s.points, idx, ord);
        const auto ty = empirical_whitened_tensor(mapped, idx, ord);
        const auto ref = gaussian_moment_tensor(ord, 3);
        REQUIRE(std::abs(std::sqrt(t.frobenius_sq()) - std::sqrt(ty.frobenius_sq())) <= 1e-8);
        REQUIRE(std::abs(std::sqrt(t.frobenius_distance_sq(ref)) -
                         std::sqrt(ty.frobenius_distance_sq(ref))) <= 1e-8);
    }
}

TEST_CASE("deterministic conditions pass on clean Gaussian data") {
    for (std::uint64_t seed : {901u, 902u, 903u}) {
        const auto s = standard_normal_set(2000, 2, seed);
        const auto rep =
            check_deterministic_conditions(s, {all_indices(2000)}, 0.5, 0.1, 4, 50, seed);
        CAPTURE(seed, rep.moment_residuals[0], rep.e_fraction[0], rep.f_fraction[0],
                rep.g_fraction[0]);
        REQUIRE(rep.condition1_passed);
        REQUIRE(rep.condition2_passed);
        REQUIRE(rep.passed);
        REQUIRE(rep.e_fraction[0] >= 0.9);
        REQUIRE(rep.f_fraction[0] >= 0.9);
        REQUIRE(rep.g_fraction[0] >= 0.9);
        for (double r : rep.moment_residuals[0]) REQUIRE(r >= 0.0);
    }
}

TEST_CASE("a planted far outlier breaks the fourth-moment residual") {
    auto s = standard_normal_set(2000, 2, 910);
    s.points(137, 0) = 1000.0;
    s.points(137, 1) = 0.0;
    const auto rep =
        check_deterministic_conditions(s, {all_indices(2000)}, 0.5, 0.1, 4, 10, 910);
    REQUIRE_FALSE(rep.condition1_passed);
    REQUIRE_FALSE(rep.passed);
    REQUIRE(rep.moment_residuals[0][3] > rep.residual_thresholds[3]);
}

TEST_CASE("xi = 1 makes the event fractions trivial") {
    const auto s = standard_normal_set(200, 2, 911);
    const auto rep =
        check_deterministic_conditions(s, {all_indices(200)}, 0.5, 1.0, 2, 5, 911);
    REQUIRE(rep.condition2_passed);
}

TEST_CASE("conditions checker validates the partition") {
    const auto s = standard_normal_set(100, 2, 912);
    const auto idx = all_indices(100);
    REQUIRE_THROWS_AS(
        check_deterministic_conditions(s, {}, 0.5, 0.1, 2, 5, 1), InvalidPartition);
    REQUIRE_THROWS_AS(
        check_deterministic_conditions(s, {idx, {}}, 0.5, 0.1, 2, 5, 1), InvalidPartition);
    REQUIRE_THROWS_AS(
        check_deterministic_conditions(s, {{0, 1, 2}, {2, 3, 4}}, 0.5, 0.1, 2, 5, 1),
        InvalidPartition);
    REQUIRE_THROWS_AS(
        check_deterministic_conditions(s, {{0, 1}, {2, 3, 4}}, 0.5, 0.1, 2, 5, 1),
        InvalidPartition);
    REQUIRE_THROWS_AS(
        check_deterministic_conditions(s, {{0, 1, 200}}, 0.5, 0.1, 2, 5, 1),
        InvalidPartition);
    REQUIRE_THROWS_AS(
        check_deterministic_conditions(s, {idx}, 0.5, 0.1, 9, 5, 1), InvalidDegree);
}

TEST_CASE("conditions verdict is monotone in delta and xi on fixed data") {
    const auto s = standard_normal_set(1000, 2, 913);
    const auto part = std::vector<std::vector<int>>{all_indices(1000)};

    bool prev = false;
    for (double delta : {1e-6, 1e-4, 0.05, 0.5, 5.0}) {
        const bool now = check_deterministic_conditions(s, part, delta, 0.1, 4, 8, 913).passed;
        if (prev) REQUIRE(now);  // enlarging delta never un-passes
        prev = now;
    }

    prev = false;
    for (double xi : {0.05, 0.1, 0.2, 0.4, 0.8, 1.0}) {
        const bool now = check_deterministic_conditions(s, part, 0.5, xi, 4, 8, 913).passed;
        if (prev) REQUIRE(now);
        prev = now;
    }
}

TEST_CASE("ground-truth parameters can replace the empirical ones") {
    MixtureModel gt = MixtureModel::uniform(
        {GaussianParams{Vector::Zero(2), Matrix::Identity(2, 2)}});
    const auto s = standard_normal_set(2000, 2, 914);
    ConditionOptions opt;
    opt.ground_truth = &gt;
    const auto rep =
        check_deterministic_conditions(s, {all_indices(2000)}, 0.5, 0.1, 4, 20, 914, opt);
    REQUIRE(rep.passed);
}

TEST_CASE("moment_match_counterexample reproduces the degree-4 root") {
    const auto r = moment_match_counterexample(2);
    REQUIRE(r.alpha == Catch::Approx(0.5 - std::sqrt(3.0) / 6.0).epsilon(1e-9));
    REQUIRE(r.alpha == Catch::Approx(0.211).margin(5e-4));
    REQUIRE(r.residual <= 1e-9);

    const auto r3 = moment_match_counterexample(3);
    REQUIRE(r3.alpha > 0.0);
    REQUIRE(r3.alpha < 0.5);
    REQUIRE(r3.residual <= 1e-9);

    REQUIRE_THROWS_AS(moment_match_counterexample(1), PreconditionFailed);
}

TEST_CASE("the matched mixture really does match moments at large separation") {
    const int t = 2;
    const double alpha = moment_match_counterexample(t).alpha;
    const double big = 1e4;
    const double m1 = (1.0 - alpha) * big;   // mean of the heavy component
    const double m2 = -alpha * big;          // mean of the light component
    // one-dimensional Gaussian moments about zero via binomial expansion
    const auto raw_moment = [](double mean, int p) {
        double acc = 0.0;
        for (int j = 0; j <= p; j += 2) {
            // E z^j = (j-1)!!, z ~ N(0,1)
            acc += double(binomial_u64(p, p - j)) * std::pow(mean, p - j) *
                   double(double_factorial(j - 1));
        }
        return acc;
    };
    const double ex2 = alpha * raw_moment(m1, 2) + (1.0 - alpha) * raw_moment(m2, 2);
    const double ex4 = alpha * raw_moment(m1, 4) + (1.0 - alpha) * raw_moment(m2, 4);
    const double ratio = ex4 / (3.0 * ex2 * ex2);
    REQUIRE(ratio == Catch::Approx(1.0).margin(0.01));
}

TEST_CASE("the odd-moment constraint forces the trivial weights") {
    // E x^3 of the limiting mixture is proportional to a(1-a)(1-2a); that
    // factor has no zero inside (0, 1/2), and a = 1/2 fails the even-moment
    // equation outright
    for (int i = 1; i < 500; ++i) {
        const double a = 0.5 * i / 500;
        REQUIRE(std::abs(a * (1.0 - a) * (1.0 - 2.0 * a)) > 0.0);
    }
    const double h_half =
        0.5 * std::pow(0.5, 4) + 0.5 * std::pow(0.5, 4) - 3.0 * std::pow(0.25, 2);
    REQUIRE(std::abs(h_half) > 0.1);
}

TEST_CASE("identifiability_gap reports the variance sandwich quantities") {
    GaussianParams ga{Vector::Zero(2), Matrix::Identity(2, 2)};
    Vector mu_b(2);
    mu_b << 6.0, 0.0;
    GaussianParams gb{mu_b, Matrix::Identity(2, 2)};
    const MixtureModel mix = MixtureModel::uniform({ga, gb});
    const auto s = sample_mixture(mix, 400, 4242, SamplingMode::Stratified);

    Vector v(2);
    v << 1.0, 0.0;

    std::vector<int> only_a, both;
    for (int i = 0; i < s.n(); ++i) {
        if ((*s.labels)[i] == 0) only_a.push_back(i);
        both.push_back(i);
    }

    const auto pure = identifiability_gap(s, only_a, 0, 1, v);
    REQUIRE(pure.overlap_product == 0.0);

    const auto mixed = identifiability_gap(s, both, 0, 1, v);
    REQUIRE(mixed.overlap_product == Catch::Approx(0.25).margin(0.01));
    REQUIRE(mixed.empirical_variance >= 0.2 * 36.0);
    REQUIRE(mixed.mixture_variance >= 0.2 * 36.0);

    const auto single = identifiability_gap(s, {0}, 0, 1, v);
    REQUIRE(single.empirical_variance == 0.0);

    REQUIRE_THROWS_AS(identifiability_gap(s, {}, 0, 1, v), PreconditionFailed);
    SampleSet unlabeled = s;
    unlabeled.labels.reset();
    REQUIRE_THROWS_AS(identifiability_gap(unlabeled, both, 0, 1, v), PreconditionFailed);
}
