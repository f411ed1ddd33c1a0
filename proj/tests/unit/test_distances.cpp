#include <cmath>

#include "doctest.h"
#include "fd_oracle.hpp"
#include "sim/distances.hpp"
#include "sim/nn/autograd.hpp"
#include "sim/nn/ops.hpp"
#include "sim/rng.hpp"

using namespace sim;
using namespace sim::distances;

namespace {

std::vector<DistanceFn> all_tags() {
    return {DistanceFn::l2(),       DistanceFn::power(4),        DistanceFn::exp_power(2, 0.3),
            DistanceFn::l1(),       DistanceFn::huber(0.7),      DistanceFn::pseudo_huber(1.0),
            DistanceFn::pseudo_huber(0.05)};
}

} // namespace

TEST_CASE("value: zero at the origin and nonnegative") {
    Rng rng(1);
    for (const auto& d : all_tags()) {
        CHECK(value(d, std::vector<double>{0.0, 0.0, 0.0}) == 0.0);
        for (int k = 0; k < 100; ++k) {
            std::vector<double> y{rng.normal(), rng.normal(), rng.normal()};
            CHECK(value(d, y) >= 0.0);
        }
    }
}

TEST_CASE("value and derivative examples") {
    const std::vector<double> y34{3.0, 4.0};
    CHECK(value(DistanceFn::pseudo_huber(1.0), y34) == doctest::Approx(std::sqrt(26.0) - 1.0).epsilon(1e-14));
    CHECK(value(DistanceFn::pseudo_huber(1.0), y34) == doctest::Approx(4.0990).epsilon(1e-4));
    CHECK(value(DistanceFn::exp_power(2, 1.0), std::vector<double>{1.0, 0.0}) ==
          doctest::Approx(std::exp(1.0) - 1.0).epsilon(1e-14));
    CHECK(derivative(DistanceFn::l2(), std::vector<double>{1.0, 2.0}) == std::vector<double>{2.0, 4.0});
    CHECK(derivative(DistanceFn::l1(), std::vector<double>{-2.0, 3.0}) == std::vector<double>{-1.0, 1.0});
    auto ph = derivative(DistanceFn::pseudo_huber(1.0), y34);
    CHECK(ph[0] == doctest::Approx(3.0 / std::sqrt(26.0)).epsilon(1e-14));
    CHECK(ph[1] == doctest::Approx(4.0 / std::sqrt(26.0)).epsilon(1e-14));
    CHECK(ph[0] == doctest::Approx(0.5883).epsilon(1e-4));
    CHECK(ph[1] == doctest::Approx(0.7845).epsilon(1e-4));
}

TEST_CASE("construction rejects invalid parameters") {
    CHECK_THROWS(DistanceFn::power(3));
    CHECK_THROWS(DistanceFn::exp_power(1, 1.0));
    CHECK_THROWS(DistanceFn::pseudo_huber(0.0));
    CHECK_THROWS(DistanceFn::huber(-1.0));
}

TEST_CASE("derivative matches central differences of value away from kinks") {
    Rng rng(2);
    for (const auto& d : all_tags()) {
        for (int k = 0; k < 100; ++k) {
            std::vector<double> y(3);
            for (auto& v : y) {
                v = rng.normal();
                if (std::fabs(v) < 1e-3) v = 0.3;
                if (d.kind == DistanceFn::Kind::huber && std::fabs(std::fabs(v) - d.delta) < 1e-3) v += 0.01;
            }
            auto fd = testing_fd::central_gradient([&](const std::vector<double>& u) { return value(d, u); }, y);
            INFO(d.name());
            CHECK(testing_fd::max_rel_err(derivative(d, y), fd) <= 1e-6);
        }
    }
}

TEST_CASE("tensor derivative agrees with the pointwise derivative and is differentiable") {
    Rng rng(3);
    for (const auto& d : all_tags()) {
        std::vector<double> v(4 * 3);
        for (auto& e : v) e = rng.normal() + 0.01;
        auto y = nn::Tensor::from({4, 3}, v, true);
        auto dt = derivative(d, y);
        for (std::size_t i = 0; i < 4; ++i) {
            auto ref = derivative(d, std::span<const double>(v).subspan(3 * i, 3));
            for (std::size_t j = 0; j < 3; ++j) CHECK(dt.at(i, j) == doctest::Approx(ref[j]).epsilon(1e-14));
        }
        // gradient of <r, d'(y)> against FD
        std::vector<double> r(12);
        for (auto& e : r) e = rng.normal();
        auto proj = [&](const nn::Tensor& yy) {
            return nn::sum(nn::mul(derivative(d, yy), nn::Tensor::from({4, 3}, r)));
        };
        auto g = nn::backward(proj(y)).of(y);
        auto fd = testing_fd::central_gradient(
            [&](const std::vector<double>& u) { return proj(nn::Tensor::from({4, 3}, u)).item(); }, v);
        INFO(d.name());
        CHECK(testing_fd::max_rel_err(g, fd) <= 1e-6);
    }
}

TEST_CASE("pseudo-Huber: bounded gradient, sub-linear value, linear asymptote") {
    Rng rng(4);
    for (double c : {0.05, 0.5, 2.0}) {
        auto d = DistanceFn::pseudo_huber(c);
        for (int k = 0; k < 200; ++k) {
            const double s = std::exp(4.0 * rng.normal());
            std::vector<double> y{s * rng.normal(), s * rng.normal()};
            auto g = derivative(d, y);
            CHECK(std::hypot(g[0], g[1]) < 1.0);
            CHECK(value(d, y) <= std::hypot(y[0], y[1]));
        }
        std::vector<double> big{0.6e6 * c, 0.8e6 * c};
        CHECK(std::fabs(value(d, big) / (1e6 * c) - 1.0) <= 1e-5);
    }
    CHECK(DistanceFn::pseudo_huber_for_dim(2).c == doctest::Approx(0.1 * std::sqrt(2.0)));
}

TEST_CASE("power(2) coincides with l2") {
    Rng rng(5);
    for (int k = 0; k < 50; ++k) {
        std::vector<double> y{rng.normal(), rng.normal(), rng.normal()};
        CHECK(value(DistanceFn::power(2), y) == value(DistanceFn::l2(), y));
        CHECK(derivative(DistanceFn::power(2), y) == derivative(DistanceFn::l2(), y));
    }
}

TEST_CASE("subgradient convention at zero") {
    std::vector<double> z{0.0, 0.0};
    for (const auto& d : all_tags())
        for (double v : derivative(d, z)) CHECK(v == 0.0);
}
