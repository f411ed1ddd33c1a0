#include <cmath>

#include "doctest.h"
#include "sim/nn/ops.hpp"
#include "sim/verify.hpp"

using namespace sim;
using namespace sim::verify;
using distances::DistanceFn;
using oracles::Mat;
using oracles::Vec;

namespace {

oracles::LinearGenerator diag_gen(double a0, double a1, double b0, double b1) {
    Mat a = Mat::Zero(2, 2);
    a(0, 0) = a0;
    a(1, 1) = a1;
    return {a, Vec(Eigen::Vector2d(b0, b1))};
}

oracles::GmmSpec two_component() {
    return {{0.4, 0.6}, {Vec(Eigen::Vector2d(-1.0, 0.5)), Vec(Eigen::Vector2d(1.5, -0.5))}, {0.6, 0.9}};
}

const std::vector<double> kGrid{0.5, 1.0, 2.0};

} // namespace

TEST_CASE("score projection: constant test function on N(0,I)") {
    auto r = check_score_projection(oracles::GaussianSpec::standard(2), TestFunction::constant_vector({1.0, -2.0}), 1.0,
                                    100000, Rng(1));
    CHECK(r.pass);
    CHECK(r.estimate.size() == 2);
    CHECK(r.samples == 100000);
}

TEST_CASE("score projection: identity on N(0,I) at t=1 with 10^6 draws") {
    auto r = check_score_projection(oracles::GaussianSpec::standard(2), TestFunction::identity(), 1.0, 1000000, Rng(2));
    INFO(to_json(r).dump());
    CHECK(r.pass);
    for (double se : r.std_error) CHECK(se > 0.0);
}

TEST_CASE("score projection: frozen random net on a linear generator at t=0.5") {
    auto r = check_score_projection(diag_gen(2.0, 1.0, 1.0, 0.0), TestFunction::random_net(32, 11), 0.5, 1000000,
                                    Rng(3));
    INFO(to_json(r).dump());
    CHECK(r.pass);
}

TEST_CASE("score projection: input validation and reproducibility") {
    CHECK_THROWS(check_score_projection(oracles::GaussianSpec::standard(2), TestFunction::identity(), 1.0, 999, Rng(1)));
    CHECK_THROWS(check_score_projection(oracles::GaussianSpec::standard(2), TestFunction::constant_vector({1.0}), 1.0,
                                        1000, Rng(1)));
    auto a = check_score_projection(oracles::GaussianSpec::standard(2), TestFunction::identity(), 0.7, 5000, Rng(4));
    auto b = check_score_projection(oracles::GaussianSpec::standard(2), TestFunction::identity(), 0.7, 5000, Rng(4));
    CHECK(to_json(a).dump() == to_json(b).dump());
    CHECK(a.rng_algorithm == std::string(Rng::kAlgorithm));
}

TEST_CASE("theorem1: p equal to q gives zero gradients") {
    auto r = check_theorem1(diag_gen(1.0, 1.0, 0.0, 0.0), oracles::GaussianSpec::standard(2), DistanceFn::l2(), kGrid,
                            5000, 1e-4, Rng(5));
    INFO(to_json(r).dump());
    CHECK(r.pass);
    for (double g : r.target) CHECK(g == 0.0);
    CHECK(r.inconclusive);
}

TEST_CASE("theorem1: l2 mean shift, single t=1") {
    const std::vector<double> t1{1.0};
    auto r = check_theorem1(diag_gen(1.0, 1.0, 1.0, 0.0), oracles::GaussianSpec::standard(2), DistanceFn::l2(), t1,
                            20000, 1e-4, Rng(6));
    INFO(to_json(r).dump());
    CHECK(r.pass);
    // D = |b|^2 / (1 + t^2)^2, so dD/db = (0.5, 0): descent points along -b
    CHECK(r.estimate[4] == doctest::Approx(0.5).epsilon(1e-6));
    CHECK(r.target[4] == doctest::Approx(0.5).epsilon(1e-6));
    CHECK(std::fabs(r.target[5]) < 1e-9);
}

TEST_CASE("theorem1: pseudo-Huber, anisotropic generator against a two-component mixture") {
    auto r = check_theorem1(diag_gen(1.5, 0.7, 0.3, -0.2), two_component(), DistanceFn::pseudo_huber(0.5), kGrid, 20000,
                            1e-4, Rng(7));
    INFO(to_json(r).dump());
    CHECK(r.pass);
    CHECK(r.estimate.size() == 6);
}

TEST_CASE("theorem1: quadrupling n_mc halves the standard error") {
    auto p = diag_gen(1.2, 0.8, 0.4, 0.1);
    auto a = check_theorem1(p, two_component(), DistanceFn::pseudo_huber(0.5), kGrid, 5000, 1e-4, Rng(8));
    auto b = check_theorem1(p, two_component(), DistanceFn::pseudo_huber(0.5), kGrid, 20000, 1e-4, Rng(8));
    double ra = 0.0, rb = 0.0;
    for (std::size_t k = 0; k < a.std_error.size(); ++k) {
        ra += a.std_error[k];
        rb += b.std_error[k];
    }
    CHECK(ra / rb == doctest::Approx(2.0).epsilon(0.2));
}

TEST_CASE("theorem1: argument validation") {
    auto p = diag_gen(1.0, 1.0, 0.0, 0.0);
    auto q = oracles::GaussianSpec::standard(2);
    CHECK_THROWS(check_theorem1(p, q, DistanceFn::l2(), kGrid, 5000, 1e-2, Rng(1)));
    CHECK_THROWS(check_theorem1(p, q, DistanceFn::l2(), {}, 5000, 1e-4, Rng(1)));
    CHECK_THROWS(check_theorem1(p, q, DistanceFn::l2(), kGrid, 5001, 1e-4, Rng(1)));
}

TEST_CASE("gradcheck suite passes on every primitive and distance tag") {
    auto reports = gradcheck_suite(Rng(9));
    CHECK(reports.size() == primitive_cases().size() + distance_cases().size());
    for (const auto& r : reports) {
        INFO(r.detail);
        CHECK(r.pass);
        CHECK(r.samples == 100);
        CHECK(r.estimate[0] <= 1e-6);
    }
}

TEST_CASE("gradcheck: zero vectors pass at the subgradient convention") {
    auto cases = distance_cases();
    std::vector<GradcheckCase> zero;
    for (auto c : cases) {
        if (c.name.rfind("distance:", 0) != 0) continue;
        c.draw = [n = c.input_size](Rng&) { return std::vector<double>(n, 0.0); };
        zero.push_back(c);
    }
    CHECK(zero.size() == 6);
    for (const auto& r : gradcheck_suite(Rng(10), zero, 3)) {
        INFO(r.detail);
        CHECK(r.pass);
        CHECK(r.estimate[0] == 0.0);
    }
}

TEST_CASE("gradcheck: a corrupted derivative fails and is named") {
    GradcheckCase bad;
    bad.name = "corrupted_square";
    bad.input_size = 3;
    bad.draw = [](Rng& r) { return std::vector<double>{r.normal(), r.normal(), r.normal()}; };
    bad.fn = [](const nn::Tensor& x) {
        std::vector<double> v(x.data().begin(), x.data().end());
        for (auto& e : v) e *= e;
        return nn::make_result("corrupted_square", x.shape(), v, {x},
                               [](const nn::Node& self, std::span<const double> go, std::span<std::vector<double>* const> gi) {
                                   const auto& in = self.inputs[0]->value;
                                   for (std::size_t i = 0; i < go.size(); ++i) (*gi[0])[i] += 2.1 * in[i] * go[i];
                               });
    };
    auto cases = primitive_cases();
    cases.push_back(bad);
    auto reports = gradcheck_suite(Rng(11), cases, 10);
    bool all = true;
    std::string failed;
    for (const auto& r : reports)
        if (!r.pass) {
            all = false;
            failed = r.check;
        }
    CHECK_FALSE(all);
    CHECK(failed == "gradcheck:corrupted_square");
    CHECK(reports.back().detail.find("corrupted_square") != std::string::npos);
}
