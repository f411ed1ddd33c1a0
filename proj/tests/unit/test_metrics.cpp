#include <chrono>
#include <cmath>

#include "doctest.h"
#include "sim/metrics.hpp"
#include "sim/oracles.hpp"

using namespace sim;
using namespace sim::metrics;
using oracles::Mat;
using oracles::Vec;

namespace {

Tensor gaussian_draws(Rng& rng, std::size_t n, double mx = 0.0, double my = 0.0) {
    std::vector<double> v(2 * n);
    for (std::size_t i = 0; i < n; ++i) {
        v[2 * i] = mx + rng.normal();
        v[2 * i + 1] = my + rng.normal();
    }
    return Tensor::from({n, 2}, std::move(v));
}

double stddev(const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

} // namespace

TEST_CASE("mmd: biased estimator of a set against itself is zero") {
    Rng rng(1);
    auto x = gaussian_draws(rng, 300);
    MmdOptions o;
    o.unbiased = false;
    CHECK(std::fabs(mmd_rbf(x, x, o)) <= 1e-12);
}

TEST_CASE("mmd: symmetric and parallel equals serial bit-for-bit") {
    Rng rng(2);
    auto x = gaussian_draws(rng, 700);
    auto y = gaussian_draws(rng, 500, 0.3);
    const auto h = bandwidth_ladder(x, y);
    CHECK(mmd_rbf(x, y, h) == mmd_rbf(y, x, h));
    CHECK(mmd_rbf(x, y) == mmd_rbf(y, x));
    CHECK(mmd_rbf(x, y, h) == mmd_rbf_serial(x, y, h));
    CHECK(mmd_rbf(x, y, h, false) == mmd_rbf_serial(x, y, h, false));
}

TEST_CASE("mmd: doubling-ladder fast path matches direct kernel evaluation") {
    Rng rng(3);
    auto x = gaussian_draws(rng, 200);
    auto y = gaussian_draws(rng, 150, 0.5);
    std::vector<double> h{0.3, 0.6, 1.2, 2.4};
    double direct = 0.0;
    for (double b : h) direct += mmd_rbf(x, y, std::vector<double>{b});
    CHECK(mmd_rbf(x, y, h) == doctest::Approx(direct).epsilon(1e-10));
}

TEST_CASE("mmd: degenerate sets use the bandwidth floor") {
    auto x = Tensor::from({3, 2}, std::vector<double>(6, 1.0));
    CHECK(median_distance(x, x) == 1e-6);
    CHECK(std::isfinite(mmd_rbf(x, x)));
    CHECK_THROWS(mmd_rbf(Tensor::from({1, 2}, {0.0, 0.0}), x));
}

TEST_CASE("mmd: separated Gaussians exceed 10x the permutation-null 99th percentile") {
    Rng rng(4);
    auto x = gaussian_draws(rng, 1000);
    auto y = gaussian_draws(rng, 1000, 3.0);
    const auto h = bandwidth_ladder(x, y);
    auto null = mmd_permutation_null(x, y, h, 200, rng);
    CHECK(mmd_rbf(x, y, h) > 10.0 * quantile(null, 0.99));
}

TEST_CASE("mmd: two 10^4 draws from the same Gaussian are within 3 permutation SEs of zero") {
    Rng rng(5);
    auto x = gaussian_draws(rng, 10000);
    auto y = gaussian_draws(rng, 10000);
    const auto h = bandwidth_ladder(x, y);
    auto null = mmd_permutation_null(x, y, h, 20, rng);
    CHECK(std::fabs(mmd_rbf(x, y, h)) <= 3.0 * stddev(null));
}

TEST_CASE("quantile interpolates order statistics") {
    CHECK(quantile({3.0, 1.0, 2.0}, 0.5) == 2.0);
    CHECK(quantile({0.0, 10.0}, 0.25) == 2.5);
    CHECK_THROWS(quantile({}, 0.5));
}

TEST_CASE("gaussian_w2 examples") {
    const Mat i2 = Mat::Identity(2, 2);
    CHECK(gaussian_w2(Vec::Zero(2), i2, Vec::Zero(2), i2) == 0.0);
    CHECK(gaussian_w2(Vec::Zero(2), i2, Vec::Unit(2, 0), i2) == doctest::Approx(1.0).epsilon(1e-14));
    Mat c = Mat::Identity(2, 2);
    c(0, 0) = 4.0;
    CHECK(gaussian_w2(Vec::Zero(2), c, Vec::Zero(2), i2) == doctest::Approx(1.0).epsilon(1e-12));

    Rng rng(6);
    auto x = gaussian_draws(rng, 500);
    CHECK(gaussian_w2(x, x) <= 1e-6);
    CHECK_THROWS(gaussian_w2(Tensor::from({2, 2}, {0, 0, 1, 1}), x));
}

TEST_CASE("gaussian_w2 satisfies the triangle inequality") {
    Rng rng(7);
    for (int k = 0; k < 50; ++k) {
        std::vector<Vec> m;
        std::vector<Mat> c;
        for (int j = 0; j < 3; ++j) {
            Mat a(3, 3);
            for (auto& e : a.reshaped()) e = rng.normal();
            c.push_back(a * a.transpose() + 0.1 * Mat::Identity(3, 3));
            Vec v(3);
            for (auto& e : v) e = rng.normal();
            m.push_back(v);
        }
        const double ab = gaussian_w2(m[0], c[0], m[1], c[1]);
        const double bc = gaussian_w2(m[1], c[1], m[2], c[2]);
        const double ac = gaussian_w2(m[0], c[0], m[2], c[2]);
        CHECK(ac <= ab + bc + 1e-9);
    }
}

TEST_CASE("mode_coverage examples") {
    auto ring = oracles::GmmSpec::ring(8, 4.0, 0.3);
    std::vector<double> v;
    for (int rep = 0; rep < 10; ++rep)
        for (const auto& mu : ring.means) v.insert(v.end(), mu.data(), mu.data() + 2);
    auto all = mode_coverage(Tensor::from({80, 2}, v), ring);
    CHECK(all.covered == 8);
    CHECK(all.fraction == 1.0);

    std::vector<double> one;
    for (int i = 0; i < 50; ++i) one.insert(one.end(), ring.means[3].data(), ring.means[3].data() + 2);
    auto single = mode_coverage(Tensor::from({50, 2}, one), ring);
    CHECK(single.covered == 1);
    CHECK(single.fraction == 0.125);
    CHECK(single.counts[3] == 50);
    CHECK_THROWS(mode_coverage(Tensor::from({50, 2}, one), ring, 0.0));
}

TEST_CASE("mode_coverage on exact ring draws, and permutation invariance") {
    auto ring = oracles::GmmSpec::ring(8, 4.0, 0.3);
    Rng rng(8);
    auto x = oracles::sample(ring, rng, 10000);
    auto c = mode_coverage(x, ring);
    CHECK(c.covered == 8);
    for (auto n : c.counts) CHECK(n >= 1000);

    std::vector<double> rev;
    for (std::size_t i = 10000; i-- > 0;) rev.insert(rev.end(), {x.at(i, 0), x.at(i, 1)});
    auto c2 = mode_coverage(Tensor::from({10000, 2}, rev), ring);
    CHECK(c2.counts == c.counts);
}
