#pragma once

// Closed-form distributions under the VE forward process: Gaussians,
// isotropic Gaussian mixtures and linear push-forward generators. Their
// diffused scores, posterior denoisers and log-densities are exact and serve
// as ground truth for the verifiers and as analytic teachers.

#include <Eigen/Dense>
#include <span>
#include <variant>
#include <vector>

#include "sim/diffusion.hpp"
#include "sim/distances.hpp"
#include "sim/nn/tensor.hpp"
#include "sim/rng.hpp"

namespace sim::oracles {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using nn::Tensor;

struct GaussianSpec {
    Vec mean;
    Mat cov;

    std::size_t dim() const { return static_cast<std::size_t>(mean.size()); }
    void validate() const;
    static GaussianSpec standard(std::size_t dim);
};

/// Mixture of isotropic Gaussians N(mu_i, s_i^2 I).
struct GmmSpec {
    std::vector<double> weights;
    std::vector<Vec> means;
    std::vector<double> stds;

    std::size_t dim() const { return means.empty() ? 0 : static_cast<std::size_t>(means.front().size()); }
    std::size_t components() const { return means.size(); }
    void validate() const;
    /// n equal-weight modes evenly spaced on a circle of the given radius.
    static GmmSpec ring(std::size_t n, double radius, double std);
};

/// x = A z + b with z ~ N(0, I_latent).
struct LinearGenerator {
    Mat A;
    Vec b;

    std::size_t dim() const { return static_cast<std::size_t>(b.size()); }
    std::size_t latent_dim() const { return static_cast<std::size_t>(A.cols()); }
    /// Covariance of the diffused push-forward: A A^T + t^2 I.
    Mat covariance(double t) const;
    /// Flattened parameters (A row-major, then b).
    std::vector<double> theta() const;
    static LinearGenerator from_theta(std::span<const double> theta, std::size_t dim, std::size_t latent);
};

// Point evaluations at a single x and noise level t.

Vec gaussian_score(const GaussianSpec& q, const Vec& x, double t);
double gaussian_log_density(const GaussianSpec& q, const Vec& x, double t);

Vec gmm_score(const GmmSpec& q, const Vec& x, double t);
Vec gmm_denoiser(const GmmSpec& q, const Vec& x, double t);
double gmm_log_density(const GmmSpec& q, const Vec& x, double t);
/// Posterior component probabilities of x under the diffused mixture.
Vec gmm_responsibilities(const GmmSpec& q, const Vec& x, double t);
/// Jacobian of gmm_score in x (the Hessian of the log-density).
Mat gmm_score_jacobian(const GmmSpec& q, const Vec& x, double t);

Vec linear_gen_score(const LinearGenerator& g, const Vec& x, double t);
double linear_gen_log_density(const LinearGenerator& g, const Vec& x, double t);

// Batched fields over [B,D] tensors, one t per row. The distribution
// parameters are constants; gradients flow into x through the exact
// Jacobian.

Tensor gaussian_score(const GaussianSpec& q, const Tensor& x, std::span<const double> t);
Tensor gmm_score(const GmmSpec& q, const Tensor& x, std::span<const double> t);
Tensor gmm_denoiser(const GmmSpec& q, const Tensor& x, std::span<const double> t);
Tensor linear_gen_score(const LinearGenerator& g, const Tensor& x, std::span<const double> t);

// Exact sampling.

Tensor sample(const GaussianSpec& q, Rng& rng, std::size_t n);
Tensor sample(const GmmSpec& q, Rng& rng, std::size_t n);
Tensor sample(const LinearGenerator& g, Rng& rng, std::size_t n);

using TargetSpec = std::variant<GaussianSpec, GmmSpec>;

Vec target_score(const TargetSpec& q, const Vec& x, double t);
Tensor target_score(const TargetSpec& q, const Tensor& x, std::span<const double> t);

struct Estimate {
    double value = 0.0;
    double std_error = 0.0;
    std::size_t samples = 0;
};

/// Time-integrated score divergence between the diffused push-forward of p
/// and the diffused target q:
///   (1/|grid|) sum_t w(t) E_{x_t ~ pi_t} d(s_p(x_t) - s_q(x_t)),
/// with x_t drawn from the diffused `sampler` (p itself when null). Passing
/// a fixed sampler while varying p holds the sampling law fixed, which is
/// what finite differences against the stop-gradient objective need. The rng
/// is taken by value: repeated calls with the same rng reuse the same draws.
Estimate divergence_value(const LinearGenerator& p, const TargetSpec& q, const distances::DistanceFn& d,
                          const diffusion::WeightingFn& w, std::span<const double> time_grid, std::size_t n_mc,
                          Rng rng, const diffusion::DiffusionSpec& spec = {},
                          const LinearGenerator* sampler = nullptr);

/// The per-draw integrands behind divergence_value, grouped by time point
/// (n_mc consecutive values per grid entry). Paired differences of two calls
/// with the same rng give common-random-number estimates.
std::vector<double> divergence_terms(const LinearGenerator& p, const TargetSpec& q, const distances::DistanceFn& d,
                                     const diffusion::WeightingFn& w, std::span<const double> time_grid,
                                     std::size_t n_mc, Rng rng, const diffusion::DiffusionSpec& spec = {},
                                     const LinearGenerator* sampler = nullptr);

/// Mean over the grid of per-time-point means, with the standard error of
/// that stratified estimate.
Estimate grid_mean(std::span<const double> terms, std::size_t grid_size);

} // namespace sim::oracles
