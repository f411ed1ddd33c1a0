#include "sim/diffusion.hpp"

#include <algorithm>
#include <boost/math/distributions/normal.hpp>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "sim/log.hpp"
#include "sim/nn/ops.hpp"

namespace sim::diffusion {

void DiffusionSpec::validate() const {
    if (!(sigma_min > 0.0) || !(sigma_min < sigma_max))
        throw std::invalid_argument("diffusion: require 0 < sigma_min < sigma_max");
    if (grid_size < 2) throw std::invalid_argument("diffusion: grid size K must be >= 2");
    if (!(rho > 0.0)) throw std::invalid_argument("diffusion: rho must be positive");
    if (!(sigma_data > 0.0)) throw std::invalid_argument("diffusion: sigma_data must be positive");
    if (!(t_max > 0.0)) throw std::invalid_argument("diffusion: T must be positive");
}

double karras_sigma(std::size_t k, const DiffusionSpec& spec) {
    if (k >= spec.grid_size)
        throw std::out_of_range("karras_sigma: index " + std::to_string(k) + " outside [0, " +
                                std::to_string(spec.grid_size - 1) + "]");
    if (k == 0) return spec.sigma_max;
    if (k + 1 == spec.grid_size) return spec.sigma_min;
    const double inv_rho = 1.0 / spec.rho;
    const double hi = std::pow(spec.sigma_max, inv_rho);
    const double lo = std::pow(spec.sigma_min, inv_rho);
    const double frac = static_cast<double>(k) / static_cast<double>(spec.grid_size - 1);
    return std::pow(hi + frac * (lo - hi), spec.rho);
}

std::vector<double> karras_schedule(const DiffusionSpec& spec) {
    std::vector<double> s(spec.grid_size);
    for (std::size_t k = 0; k < spec.grid_size; ++k) s[k] = karras_sigma(k, spec);
    return s;
}

void validate(const TimeDistribution& dist, const DiffusionSpec& spec) {
    std::visit(
        [&](const auto& d) {
            using D = std::decay_t<decltype(d)>;
            if constexpr (std::is_same_v<D, LogNormal>) {
                if (!(d.p_std > 0.0) || !std::isfinite(d.p_mean))
                    throw std::invalid_argument("log-normal time distribution needs finite mean and p_std > 0");
            } else if constexpr (std::is_same_v<D, KarrUniform>) {
                if (d.k_max >= spec.grid_size)
                    throw std::invalid_argument("karr-uniform k_max " + std::to_string(d.k_max) +
                                                " exceeds schedule size");
            } else {
                if (d.values.empty()) throw std::invalid_argument("fixed time grid is empty");
                for (double v : d.values)
                    if (!(v > 0.0)) throw std::invalid_argument("fixed time grid values must be positive");
            }
        },
        dist);
}

std::string describe(const TimeDistribution& dist) {
    std::ostringstream os;
    std::visit(
        [&](const auto& d) {
            using D = std::decay_t<decltype(d)>;
            if constexpr (std::is_same_v<D, LogNormal>)
                os << "log-normal(" << d.p_mean << "," << d.p_std << ")";
            else if constexpr (std::is_same_v<D, KarrUniform>)
                os << "karr-uniform(" << d.k_max << ")";
            else
                os << "fixed-grid(" << d.values.size() << ")";
        },
        dist);
    return os.str();
}

double sample_time(const TimeDistribution& dist, const DiffusionSpec& spec, Rng& rng) {
    return std::visit(
        [&](const auto& d) -> double {
            using D = std::decay_t<decltype(d)>;
            if constexpr (std::is_same_v<D, LogNormal>) {
                return std::exp(d.p_mean + d.p_std * rng.normal());
            } else if constexpr (std::is_same_v<D, KarrUniform>) {
                return karras_sigma(rng.uniform_index(d.k_max + 1), spec);
            } else {
                return d.values.size() == 1 ? d.values[0] : d.values[rng.uniform_index(d.values.size())];
            }
        },
        dist);
}

std::vector<double> sample_times(const TimeDistribution& dist, const DiffusionSpec& spec, Rng& rng,
                                 std::size_t n) {
    std::vector<double> t(n);
    for (auto& v : t) v = sample_time(dist, spec, rng);
    return t;
}

std::vector<double> quantile_grid(const TimeDistribution& dist, const DiffusionSpec& spec, std::size_t n) {
    if (n == 0) throw std::invalid_argument("quantile_grid: n must be positive");
    std::vector<double> grid(n);
    std::visit(
        [&](const auto& d) {
            using D = std::decay_t<decltype(d)>;
            for (std::size_t i = 0; i < n; ++i) {
                const double p = (static_cast<double>(i) + 0.5) / static_cast<double>(n);
                if constexpr (std::is_same_v<D, LogNormal>) {
                    boost::math::normal_distribution<double> z(d.p_mean, d.p_std);
                    grid[i] = std::exp(boost::math::quantile(z, p));
                } else if constexpr (std::is_same_v<D, KarrUniform>) {
                    // ascending sigma <=> descending k
                    const auto rank = static_cast<std::size_t>(p * static_cast<double>(d.k_max + 1));
                    grid[i] = karras_sigma(d.k_max - std::min(rank, d.k_max), spec);
                } else {
                    std::vector<double> sorted = d.values;
                    std::sort(sorted.begin(), sorted.end());
                    const auto idx = static_cast<std::size_t>(p * static_cast<double>(sorted.size()));
                    grid[i] = sorted[std::min(idx, sorted.size() - 1)];
                }
            }
        },
        dist);
    return grid;
}

std::string to_string(WeightingFn::Kind k) {
    switch (k) {
        case WeightingFn::Kind::edm: return "edm";
        case WeightingFn::Kind::sid: return "sid";
        case WeightingFn::Kind::one: return "one";
    }
    return "?";
}

WeightingFn::Kind weighting_from_string(const std::string& s) {
    if (s == "edm") return WeightingFn::Kind::edm;
    if (s == "sid") return WeightingFn::Kind::sid;
    if (s == "one") return WeightingFn::Kind::one;
    throw std::invalid_argument("unknown weighting '" + s + "'");
}

double weight(const WeightingFn& fn, double t, const DiffusionSpec& spec, std::span<const double> x0,
              std::span<const double> denoised) {
    if (!(t > 0.0)) throw std::invalid_argument("weight: t must be positive");
    switch (fn.kind) {
        case WeightingFn::Kind::one: return 1.0;
        case WeightingFn::Kind::edm: {
            const double sd = spec.sigma_data;
            return (t * t + sd * sd) / ((t * sd) * (t * sd));
        }
        case WeightingFn::Kind::sid: {
            if (x0.empty() || x0.size() != denoised.size())
                throw std::invalid_argument("sid weighting requires x0 and denoised of equal size");
            double l1 = 0.0;
            for (std::size_t i = 0; i < x0.size(); ++i) l1 += std::fabs(x0[i] - denoised[i]);
            const double t4 = t * t * t * t;
            if (l1 == 0.0 || fn.dim_factor * t4 / l1 > kSidWeightCap) {
                warn("sid weighting: L1 denominator " + std::to_string(l1) + " at t=" + std::to_string(t) +
                     "; weight capped at 1e6");
                return kSidWeightCap;
            }
            return fn.dim_factor * t4 / l1;
        }
    }
    return 1.0;
}

std::vector<double> weights(const WeightingFn& fn, std::span<const double> t, const DiffusionSpec& spec,
                            const Tensor* x0, const Tensor* denoised) {
    std::vector<double> w(t.size());
    if (fn.kind != WeightingFn::Kind::sid) {
        for (std::size_t i = 0; i < t.size(); ++i) w[i] = weight(fn, t[i], spec);
        return w;
    }
    if (!x0 || !denoised || x0->shape() != denoised->shape() || x0->rank() != 2 || x0->dim(0) != t.size())
        throw std::invalid_argument("sid weighting requires x0 and denoised batches matching the time vector");
    const std::size_t d = x0->dim(1);
    for (std::size_t i = 0; i < t.size(); ++i)
        w[i] = weight(fn, t[i], spec, x0->data().subspan(i * d, d), denoised->data().subspan(i * d, d));
    return w;
}

namespace {

void require_rows(const Tensor& x, std::span<const double> t, const char* op) {
    if (x.rank() != 2 || x.dim(0) != t.size())
        throw nn::TensorError(std::string(op) + ": " + std::to_string(t.size()) + " times for batch " +
                              nn::shape_str(x.shape()));
    for (double v : t)
        if (!(v > 0.0)) throw nn::TensorError(std::string(op) + ": t must be positive, got " + std::to_string(v));
}

std::vector<double> inv_sq(std::span<const double> t) {
    std::vector<double> r(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) r[i] = 1.0 / (t[i] * t[i]);
    return r;
}

} // namespace

Tensor perturb(const Tensor& x0, std::span<const double> t, const Tensor& eps) {
    require_rows(x0, t, "perturb");
    if (eps.shape() != x0.shape())
        throw nn::TensorError("perturb: noise shape " + nn::shape_str(eps.shape()) + " != " +
                              nn::shape_str(x0.shape()));
    return nn::add(x0, nn::scale_rows(eps, t));
}

Tensor perturb(const Tensor& x0, double t, const Tensor& eps) {
    return perturb(x0, std::vector<double>(x0.rank() == 2 ? x0.dim(0) : 0, t), eps);
}

Tensor cond_score(const Tensor& x0, const Tensor& xt, std::span<const double> t) {
    require_rows(xt, t, "cond_score");
    auto f = inv_sq(t);
    for (auto& v : f) v = -v;
    return nn::scale_rows(nn::sub(xt, x0), f);
}

Tensor cond_score(const Tensor& x0, const Tensor& xt, double t) {
    return cond_score(x0, xt, std::vector<double>(xt.rank() == 2 ? xt.dim(0) : 0, t));
}

Tensor score_from_denoiser(const Tensor& denoised, const Tensor& xt, std::span<const double> t) {
    require_rows(xt, t, "score_from_denoiser");
    return nn::scale_rows(nn::sub(denoised, xt), inv_sq(t));
}

Tensor score_from_denoiser(const Tensor& denoised, const Tensor& xt, double t) {
    return score_from_denoiser(denoised, xt, std::vector<double>(xt.rank() == 2 ? xt.dim(0) : 0, t));
}

Tensor denoiser_from_score(const Tensor& score, const Tensor& xt, std::span<const double> t) {
    require_rows(xt, t, "denoiser_from_score");
    std::vector<double> t2(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) t2[i] = t[i] * t[i];
    return nn::add(xt, nn::scale_rows(score, t2));
}

} // namespace sim::diffusion
