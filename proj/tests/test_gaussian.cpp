#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "robustmix/gaussian.hpp"

using namespace robustmix;

namespace {

GaussianParams std_normal(int d) {
    return GaussianParams(Vector::Zero(d), Matrix::Identity(d, d));
}

}  // namespace

TEST_CASE("log_density closed-form values") {
    // standard normal at its mode, d = 1
    auto g1 = std_normal(1);
    Vector x0(1);
    x0 << 0.0;
    REQUIRE(log_density(g1, x0) == Catch::Approx(-0.5 * std::log(2.0 * kPi)).epsilon(1e-14));

    // product of two 1-d modes
    auto g2 = std_normal(2);
    Vector x00 = Vector::Zero(2);
    REQUIRE(log_density(g2, x00) == Catch::Approx(-std::log(2.0 * kPi)).epsilon(1e-14));

    // N(3, 4) at 5: direct scalar evaluation gives -0.5*log(8*pi) - 0.5
    Vector m(1), x5(1);
    m << 3.0;
    x5 << 5.0;
    Matrix c(1, 1);
    c << 4.0;
    GaussianParams g3(m, c);
    REQUIRE(log_density(g3, x5) == Catch::Approx(-2.1120857137646181).epsilon(1e-14));
    REQUIRE(log_density(g3, x5) ==
            Catch::Approx(-0.5 * std::log(8.0 * kPi) - 0.5).epsilon(1e-14));
}

TEST_CASE("GaussianParams validation") {
    // asymmetric covariance rejected
    Matrix bad(2, 2);
    bad << 1.0, 0.5, 0.2, 1.0;
    REQUIRE_THROWS_AS(GaussianParams(Vector::Zero(2), bad), InvalidShape);

    // shape mismatch
    REQUIRE_THROWS_AS(GaussianParams(Vector::Zero(3), Matrix::Identity(2, 2)),
                      DimensionMismatch);

    // indefinite covariance rejected even after ridge
    Matrix indef(2, 2);
    indef << 1.0, 2.0, 2.0, 1.0;
    REQUIRE_THROWS_AS(GaussianParams(Vector::Zero(2), indef), SingularCovariance);

    // dimension mismatch at evaluation
    auto g = std_normal(2);
    Vector x1(1);
    x1 << 0.0;
    REQUIRE_THROWS_AS(log_density(g, x1), DimensionMismatch);
}

TEST_CASE("density integrates to 1 in d <= 2") {
    // d = 1: trapezoid over [-10, 10]
    auto g1 = std_normal(1);
    {
        const int m = 20000;
        const double lo = -10.0, hi = 10.0, h = (hi - lo) / m;
        double acc = 0.0;
        for (int i = 0; i <= m; ++i) {
            Vector x(1);
            x << lo + i * h;
            const double f = std::exp(log_density(g1, x));
            acc += (i == 0 || i == m) ? 0.5 * f : f;
        }
        REQUIRE(acc * h == Catch::Approx(1.0).margin(1e-3));
    }
    // d = 2 with a correlated covariance
    Matrix c(2, 2);
    c << 2.0, 0.6, 0.6, 1.0;
    GaussianParams g2(Vector::Zero(2), c);
    {
        const int m = 400;
        const double lo = -9.0, hi = 9.0, h = (hi - lo) / m;
        double acc = 0.0;
        for (int i = 0; i <= m; ++i) {
            for (int j = 0; j <= m; ++j) {
                Vector x(2);
                x << lo + i * h, lo + j * h;
                double f = std::exp(log_density(g2, x));
                if (i == 0 || i == m) f *= 0.5;
                if (j == 0 || j == m) f *= 0.5;
                acc += f;
            }
        }
        REQUIRE(acc * h * h == Catch::Approx(1.0).margin(1e-3));
    }
}

TEST_CASE("MixtureModel validation") {
    std::vector<GaussianParams> comps{std_normal(2), std_normal(2)};
    REQUIRE_NOTHROW(MixtureModel(comps, {0.5, 0.5}));
    REQUIRE_THROWS_AS(MixtureModel(comps, {0.7, 0.4}), InvalidWeights);
    REQUIRE_THROWS_AS(MixtureModel(comps, {1.2, -0.2}), InvalidWeights);
    REQUIRE_THROWS_AS(MixtureModel(comps, {1.0}), InvalidWeights);
    std::vector<GaussianParams> mixed{std_normal(2), std_normal(3)};
    REQUIRE_THROWS_AS(MixtureModel(mixed, {0.5, 0.5}), DimensionMismatch);
    REQUIRE_THROWS_AS(MixtureModel(std::vector<GaussianParams>{}, std::vector<double>{}),
                      InvalidShape);
}

TEST_CASE("sample_mixture stratified counts") {
    // k = 1: all label 0
    auto one = MixtureModel::uniform({std_normal(2)});
    auto s1 = sample_mixture(one, 100, 7);
    REQUIRE(s1.n() == 100);
    REQUIRE(s1.labels.has_value());
    for (int lab : *s1.labels) REQUIRE(lab == 0);

    // uniform 2-mixture, n = 10: exactly 5 per label
    auto two = MixtureModel::uniform({std_normal(2), std_normal(2)});
    auto s2 = sample_mixture(two, 10, 7);
    int c0 = 0, c1 = 0;
    for (int lab : *s2.labels) (lab == 0 ? c0 : c1)++;
    REQUIRE(c0 == 5);
    REQUIRE(c1 == 5);

    // non-integral stratified counts rejected
    REQUIRE_THROWS_AS(sample_mixture(two, 9, 7), InvalidSampleCount);
    REQUIRE_THROWS_AS(sample_mixture(two, 1, 7), InvalidSampleCount);

    // (2/3, 1/3) weights with n divisible by 3
    MixtureModel w23({std_normal(1), std_normal(1)}, {2.0 / 3.0, 1.0 / 3.0});
    auto s3 = sample_mixture(w23, 9, 7);
    int d0 = 0;
    for (int lab : *s3.labels) d0 += (lab == 0);
    REQUIRE(d0 == 6);
}

TEST_CASE("sample_mixture determinism and law of large numbers") {
    Vector mu(2);
    mu << 1.0, -2.0;
    Matrix c(2, 2);
    c << 2.0, 0.5, 0.5, 1.0;
    GaussianParams g(mu, c);
    auto m = MixtureModel::uniform({g});

    auto a = sample_mixture(m, 1000, 123);
    auto b = sample_mixture(m, 1000, 123);
    REQUIRE((a.points - b.points).cwiseAbs().maxCoeff() == 0.0);  // bitwise

    auto big = sample_mixture(m, 100000, 55);
    Vector emp_mean = big.points.colwise().mean().transpose();
    REQUIRE(std::abs(emp_mean(0) - 1.0) < 0.05);
    REQUIRE(std::abs(emp_mean(1) + 2.0) < 0.05);
}

TEST_CASE("sampling is affine-equivariant at the bit level") {
    // Build a nontrivial SPD covariance in d = 3 (odd, to cross the
    // Box-Muller spare across point boundaries).
    Matrix a(3, 3);
    a << 2.0, 0.3, 0.1,
         0.3, 1.5, -0.2,
         0.1, -0.2, 1.0;
    Vector mu(3);
    mu << 4.0, -1.0, 0.5;
    GaussianParams g(mu, a);

    const std::uint64_t seed = 991;
    const int n = 7;
    Matrix z = sample_gaussian(std_normal(3), n, seed);
    Matrix x = sample_gaussian(g, n, seed);
    for (int i = 0; i < n; ++i) {
        Vector xi = affine_from_standard(g, z.row(i).transpose());
        for (int j = 0; j < 3; ++j) {
            REQUIRE(x(i, j) == xi(j));  // exact
        }
    }
}

TEST_CASE("iid sampling mode follows the weights") {
    MixtureModel m({std_normal(1), std_normal(1)}, {0.8, 0.2});
    auto s = sample_mixture(m, 20000, 31, SamplingMode::Iid);
    double frac0 = 0.0;
    for (int lab : *s.labels) frac0 += (lab == 0);
    frac0 /= s.n();
    REQUIRE(frac0 == Catch::Approx(0.8).margin(0.02));
}
