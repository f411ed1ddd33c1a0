#pragma once

// Variance-exploding forward process x_t = x_0 + t*eps (time and noise level
// identified), its schedules, time distributions and loss weightings.

#include <span>
#include <string>
#include <variant>
#include <vector>

#include "sim/nn/tensor.hpp"
#include "sim/rng.hpp"

namespace sim::diffusion {

using nn::Tensor;

struct DiffusionSpec {
    double sigma_min = 0.002;
    double sigma_max = 80.0;
    double rho = 7.0;
    std::size_t grid_size = 1000;  // K
    double sigma_data = 0.5;
    double t_max = 80.0;           // T; defaults to sigma_max

    void validate() const;
};

/// sigma_k = (smax^(1/rho) + k/(K-1) * (smin^(1/rho) - smax^(1/rho)))^rho,
/// strictly decreasing from sigma_max (k=0) to sigma_min (k=K-1).
double karras_sigma(std::size_t k, const DiffusionSpec& spec);
std::vector<double> karras_schedule(const DiffusionSpec& spec);

struct LogNormal {
    double p_mean = -1.2;
    double p_std = 1.2;
};
/// t = sigma_k with k uniform on {0, ..., k_max}.
struct KarrUniform {
    std::size_t k_max = 800;
};
struct FixedGrid {
    std::vector<double> values;
};
using TimeDistribution = std::variant<LogNormal, KarrUniform, FixedGrid>;

/// Score/denoiser-phase default (EDM training distribution).
inline TimeDistribution edm_time() { return LogNormal{-1.2, 1.2}; }
/// Generator-phase default.
inline TimeDistribution sim_time() { return LogNormal{-3.5, 2.5}; }

void validate(const TimeDistribution& dist, const DiffusionSpec& spec);
std::string describe(const TimeDistribution& dist);

double sample_time(const TimeDistribution& dist, const DiffusionSpec& spec, Rng& rng);
std::vector<double> sample_times(const TimeDistribution& dist, const DiffusionSpec& spec, Rng& rng,
                                 std::size_t n);
/// n-point grid at the (i+0.5)/n quantiles, ascending.
std::vector<double> quantile_grid(const TimeDistribution& dist, const DiffusionSpec& spec, std::size_t n);

struct WeightingFn {
    enum class Kind { edm, sid, one };
    Kind kind = Kind::one;
    double dim_factor = 1.0;  // C for the sid weighting (data dimension)

    static WeightingFn edm() { return {Kind::edm, 1.0}; }
    static WeightingFn one() { return {Kind::one, 1.0}; }
    static WeightingFn sid(double c) { return {Kind::sid, c}; }
};

std::string to_string(WeightingFn::Kind k);
WeightingFn::Kind weighting_from_string(const std::string& s);

/// Cap applied to the sid weighting when its L1 denominator vanishes.
inline constexpr double kSidWeightCap = 1e6;

/// edm: (t^2 + sd^2) / (t*sd)^2; one: 1; sid: C t^4 / ||x0 - denoised||_1
/// (denominator treated as a constant, capped at kSidWeightCap).
double weight(const WeightingFn& fn, double t, const DiffusionSpec& spec, std::span<const double> x0 = {},
              std::span<const double> denoised = {});
/// Per-row weights; x0/denoised are [B,D] and only read for sid.
std::vector<double> weights(const WeightingFn& fn, std::span<const double> t, const DiffusionSpec& spec,
                            const Tensor* x0 = nullptr, const Tensor* denoised = nullptr);

/// x_t = x0 + t*eps, one t per row (differentiable in x0 and eps).
Tensor perturb(const Tensor& x0, std::span<const double> t, const Tensor& eps);
Tensor perturb(const Tensor& x0, double t, const Tensor& eps);

/// grad log q(x_t | x0) = -(x_t - x0) / t^2
Tensor cond_score(const Tensor& x0, const Tensor& xt, std::span<const double> t);
Tensor cond_score(const Tensor& x0, const Tensor& xt, double t);

/// s = (d - x_t) / t^2
Tensor score_from_denoiser(const Tensor& denoised, const Tensor& xt, std::span<const double> t);
Tensor score_from_denoiser(const Tensor& denoised, const Tensor& xt, double t);
/// d = x_t + t^2 s
Tensor denoiser_from_score(const Tensor& score, const Tensor& xt, std::span<const double> t);

} // namespace sim::diffusion
