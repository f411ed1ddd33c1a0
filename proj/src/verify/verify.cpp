#include "sim/verify.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "sim/distill.hpp"
#include "sim/nn/autograd.hpp"
#include "sim/nn/mlp.hpp"
#include "sim/nn/ops.hpp"

namespace sim::verify {

using nn::Tensor;

nlohmann::json to_json(const VerificationReport& r) {
    nlohmann::json j;
    j["check"] = r.check;
    j["estimate"] = r.estimate;
    j["std_error"] = r.std_error;
    j["target"] = r.target;
    j["allowance"] = r.allowance;
    j["samples"] = r.samples;
    j["pass"] = r.pass;
    j["inconclusive"] = r.inconclusive;
    j["seed"] = r.seed;
    j["rng"] = r.rng_algorithm;
    j["config"] = r.config;
    j["detail"] = r.detail;
    return j;
}

bool within_tolerance(const VerificationReport& r, std::size_t coord) {
    const double diff = std::fabs(r.estimate.at(coord) - r.target.at(coord));
    const double allow = r.allowance.empty() ? 0.0 : r.allowance.at(coord);
    const double se = r.std_error.empty() ? 0.0 : r.std_error.at(coord);
    return diff <= 3.0 * se + allow;
}

bool all_within_tolerance(const VerificationReport& r) {
    for (std::size_t i = 0; i < r.estimate.size(); ++i)
        if (!within_tolerance(r, i)) return false;
    return true;
}

std::string to_string(TestFunction::Kind k) {
    switch (k) {
        case TestFunction::Kind::identity: return "identity";
        case TestFunction::Kind::constant: return "constant";
        case TestFunction::Kind::random_net: return "random_net";
    }
    return "?";
}

namespace {

struct Welford {
    std::size_t n = 0;
    double mean = 0.0, m2 = 0.0;
    void add(double v) {
        ++n;
        const double d = v - mean;
        mean += d / static_cast<double>(n);
        m2 += d * (v - mean);
    }
    double se() const { return n > 1 ? std::sqrt(m2 / static_cast<double>(n - 1) / static_cast<double>(n)) : 0.0; }
};

void fill_rng(VerificationReport& r, const Rng& rng) {
    r.seed = rng.seed();
    r.rng_algorithm = std::string(Rng::kAlgorithm);
}

nlohmann::json law_json(const ProjectionLaw& p) {
    return std::visit(
        [](const auto& l) -> nlohmann::json {
            using L = std::decay_t<decltype(l)>;
            nlohmann::json j;
            if constexpr (std::is_same_v<L, oracles::GaussianSpec>) {
                j["kind"] = "gaussian";
                j["mean"] = std::vector<double>(l.mean.data(), l.mean.data() + l.mean.size());
                j["cov"] = std::vector<double>(l.cov.data(), l.cov.data() + l.cov.size());
            } else {
                j["kind"] = "linear";
                j["theta"] = l.theta();
                j["dim"] = l.dim();
                j["latent"] = l.latent_dim();
            }
            return j;
        },
        p);
}

nlohmann::json target_json(const oracles::TargetSpec& q) {
    return std::visit(
        [](const auto& l) -> nlohmann::json {
            using L = std::decay_t<decltype(l)>;
            nlohmann::json j;
            if constexpr (std::is_same_v<L, oracles::GaussianSpec>) {
                j["kind"] = "gaussian";
                j["mean"] = std::vector<double>(l.mean.data(), l.mean.data() + l.mean.size());
                j["cov"] = std::vector<double>(l.cov.data(), l.cov.data() + l.cov.size());
            } else {
                j["kind"] = "gmm";
                j["weights"] = l.weights;
                j["stds"] = l.stds;
                std::vector<std::vector<double>> m;
                for (const auto& mu : l.means) m.emplace_back(mu.data(), mu.data() + mu.size());
                j["means"] = m;
            }
            return j;
        },
        q);
}

nlohmann::json distance_json(const distances::DistanceFn& d) {
    return {{"kind", distances::to_string(d.kind)}, {"alpha", d.alpha}, {"beta", d.beta}, {"delta", d.delta}, {"c", d.c}};
}

} // namespace

VerificationReport check_score_projection(const ProjectionLaw& p, const TestFunction& u, double t, std::size_t n_mc,
                                          Rng rng) {
    if (n_mc < 1000) throw std::invalid_argument("check_score_projection: n_mc must be >= 1000");
    if (!(t > 0.0)) throw std::invalid_argument("check_score_projection: t must be positive");
    const std::size_t dim = std::visit([](const auto& l) { return l.dim(); }, p);
    if (u.kind == TestFunction::Kind::constant && u.constant.size() != dim)
        throw std::invalid_argument("check_score_projection: constant test vector has the wrong dimension");

    VerificationReport r;
    r.check = "score_projection";
    fill_rng(r, rng);
    r.config = {{"law", law_json(p)}, {"u", to_string(u.kind)}, {"t", t}, {"n_mc", n_mc}};
    if (u.kind == TestFunction::Kind::constant) r.config["u_constant"] = u.constant;
    if (u.kind == TestFunction::Kind::random_net) r.config["u_net"] = {{"hidden", u.hidden}, {"seed", u.net_seed}};

    nn::MlpNet net;
    if (u.kind == TestFunction::Kind::random_net) {
        Rng nr(u.net_seed);
        net = nn::MlpNet({{dim, u.hidden, dim}, nn::Activation::tanh}, nr);
    }
    std::vector<Welford> acc(dim);
    const std::size_t chunk = 10000;
    std::vector<double> tv;
    for (std::size_t done = 0; done < n_mc; done += chunk) {
        const std::size_t m = std::min(chunk, n_mc - done);
        const Tensor x0 = std::visit([&](const auto& l) { return oracles::sample(l, rng, m); }, p);
        std::vector<double> eps(m * dim), xt(m * dim);
        for (std::size_t i = 0; i < m * dim; ++i) {
            eps[i] = rng.normal();
            xt[i] = x0.at(i) + t * eps[i];
        }
        const Tensor xt_t = Tensor::from({m, dim}, xt);
        tv.assign(m, t);
        const Tensor s = std::visit(
            [&](const auto& l) -> Tensor {
                using L = std::decay_t<decltype(l)>;
                if constexpr (std::is_same_v<L, oracles::GaussianSpec>)
                    return oracles::gaussian_score(l, xt_t, tv);
                else
                    return oracles::linear_gen_score(l, xt_t, tv);
            },
            p);
        Tensor uv;
        if (u.kind == TestFunction::Kind::random_net) uv = net.forward(xt_t, {}, false);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < dim; ++j) {
                const std::size_t k = i * dim + j;
                double uj = 0.0;
                switch (u.kind) {
                    case TestFunction::Kind::identity: uj = xt[k]; break;
                    case TestFunction::Kind::constant: uj = u.constant[j]; break;
                    case TestFunction::Kind::random_net: uj = uv.at(k); break;
                }
                acc[j].add(uj * (s.at(k) + eps[k] / t));
            }
    }
    for (const auto& a : acc) {
        r.estimate.push_back(a.mean);
        r.std_error.push_back(a.se());
        r.target.push_back(0.0);
        r.allowance.push_back(0.0);
    }
    r.samples = n_mc;
    r.pass = all_within_tolerance(r);
    return r;
}

VerificationReport check_theorem1(const oracles::LinearGenerator& p, const oracles::TargetSpec& q,
                                  const distances::DistanceFn& d, std::span<const double> time_grid, std::size_t n_mc,
                                  double fd_step, Rng rng, const Theorem1Options& opts) {
    if (!(fd_step >= 1e-5 && fd_step <= 1e-3)) throw std::invalid_argument("check_theorem1: fd_step must lie in [1e-5, 1e-3]");
    if (time_grid.empty()) throw std::invalid_argument("check_theorem1: empty time grid");
    if (opts.chunks < 2 || n_mc < opts.chunks || n_mc % opts.chunks != 0)
        throw std::invalid_argument("check_theorem1: n_mc must be a positive multiple of the chunk count (>= 2)");
    d.validate();

    VerificationReport r;
    r.check = "theorem1";
    fill_rng(r, rng);
    r.config = {{"p", law_json(p)},
                {"q", target_json(q)},
                {"distance", distance_json(d)},
                {"time_grid", std::vector<double>(time_grid.begin(), time_grid.end())},
                {"n_mc", n_mc},
                {"fd_step", fd_step},
                {"chunks", opts.chunks},
                {"weighting", diffusion::to_string(opts.weighting.kind)}};

    const auto theta0 = p.theta();
    const std::size_t dim = p.dim(), latent = p.latent_dim();
    const Rng fd_rng = rng.split(1);

    // finite differences with the sampling law frozen at p
    auto terms = [&](const std::vector<double>& th) {
        return oracles::divergence_terms(oracles::LinearGenerator::from_theta(th, dim, latent), q, d, opts.weighting,
                                         time_grid, n_mc, fd_rng, opts.spec, &p);
    };
    auto fd_at = [&](std::size_t k, double h) {
        auto th = theta0;
        th[k] += h;
        const auto plus = terms(th);
        th[k] = theta0[k] - h;
        const auto minus = terms(th);
        std::vector<double> diff(plus.size());
        double mag = 0.0;
        for (std::size_t i = 0; i < diff.size(); ++i) {
            diff[i] = (plus[i] - minus[i]) / (2.0 * h);
            mag += std::fabs(plus[i]) + std::fabs(minus[i]);
        }
        // cancellation in plus - minus, a few ulps of the integrand per draw
        const double roundoff = 4.0 * std::numeric_limits<double>::epsilon() * mag / static_cast<double>(diff.size()) / (2.0 * h);
        return std::pair{oracles::grid_mean(diff, time_grid.size()), roundoff};
    };

    // autodiff through the SIM loss on analytic scores
    distill::LinearGeneratorModel gen(p);
    const distill::AnalyticModel online(p);
    const distill::AnalyticModel teacher = std::visit([](const auto& l) { return distill::AnalyticModel(l); }, q);
    const std::size_t per_chunk = n_mc / opts.chunks;
    std::vector<double> t;
    for (std::size_t i = 0; i < per_chunk; ++i) t.insert(t.end(), time_grid.begin(), time_grid.end());
    Rng ad_rng = rng.split(2);
    std::vector<Welford> ad(theta0.size());
    for (std::size_t c = 0; c < opts.chunks; ++c) {
        auto batch = distill::draw_generator_batch(gen, t, ad_rng);
        auto gl = distill::sim_generator_loss(batch, online, teacher, d, opts.weighting, opts.spec,
                                              {distill::Form::score, false});
        const auto g = gen.theta_gradient(nn::backward(gl.loss));
        for (std::size_t k = 0; k < g.size(); ++k) ad[k].add(g[k]);
    }

    for (std::size_t k = 0; k < theta0.size(); ++k) {
        const auto [fd, roundoff] = fd_at(k, fd_step);
        const auto fd2 = fd_at(k, 2.0 * fd_step).first;
        const double se = std::hypot(fd.std_error, ad[k].se());
        r.estimate.push_back(fd.value);
        r.target.push_back(ad[k].mean);
        r.std_error.push_back(se);
        // central differences: error(2h) ~ 4 error(h)
        r.allowance.push_back(std::fabs(fd2.value - fd.value) / 3.0 + roundoff);
        if (se > std::fabs(ad[k].mean) / 2.0) r.inconclusive = true;
    }
    r.samples = n_mc * time_grid.size();
    r.pass = all_within_tolerance(r);
    return r;
}

} // namespace sim::verify
