#pragma once

// Sample-based distribution metrics for low-dimensional runs: RBF-kernel
// MMD, the W2 distance between moment-matched Gaussians and mode coverage
// against a known mixture. Sample sets are [n, d] tensors.

#include <cstddef>
#include <span>
#include <vector>

#include "sim/nn/tensor.hpp"
#include "sim/oracles.hpp"
#include "sim/rng.hpp"

namespace sim::metrics {

using nn::Tensor;

struct MmdOptions {
    /// Bandwidths are these multiples of the median pairwise distance.
    std::vector<double> multipliers{0.25, 0.5, 1.0, 2.0, 4.0};
    bool unbiased = true;
    double bandwidth_floor = 1e-6;
    /// Points per set used for the median heuristic (leading rows).
    std::size_t median_subsample = 1000;
};

/// Median pairwise distance over the pooled leading rows of X and Y,
/// floored at opts.bandwidth_floor.
double median_distance(const Tensor& x, const Tensor& y, const MmdOptions& opts = {});
std::vector<double> bandwidth_ladder(const Tensor& x, const Tensor& y, const MmdOptions& opts = {});

/// MMD^2 with the summed kernel sum_b exp(-|a-b|^2 / (2 h_b^2)).
double mmd_rbf(const Tensor& x, const Tensor& y, std::span<const double> bandwidths, bool unbiased = true);
double mmd_rbf_serial(const Tensor& x, const Tensor& y, std::span<const double> bandwidths, bool unbiased = true);
/// Ladder from the median heuristic, then mmd_rbf.
double mmd_rbf(const Tensor& x, const Tensor& y, const MmdOptions& opts = {});

/// MMD^2 of random relabelings of the pooled sample (fixed bandwidths).
std::vector<double> mmd_permutation_null(const Tensor& x, const Tensor& y, std::span<const double> bandwidths,
                                         std::size_t permutations, Rng& rng, bool unbiased = true);

/// Empirical quantile (linear interpolation between order statistics).
double quantile(std::vector<double> values, double p);

double gaussian_w2(const oracles::Vec& mean_x, const oracles::Mat& cov_x, const oracles::Vec& mean_y,
                   const oracles::Mat& cov_y);
/// W2 between Gaussians fitted to X and Y (ridge 1e-9 on the covariances).
double gaussian_w2(const Tensor& x, const Tensor& y);

struct Coverage {
    double fraction = 0.0;
    std::size_t covered = 0;
    std::vector<std::size_t> counts;
};

/// A mode is covered when at least min_fraction of X lies within
/// radius_multiplier * s_i of mu_i.
Coverage mode_coverage(const Tensor& x, const oracles::GmmSpec& gmm, double radius_multiplier = 3.0,
                       double min_fraction = 0.02);

struct MetricRow {
    std::size_t step = 0;
    double phase1_loss = 0.0;
    double phase2_loss = 0.0;
    double mmd = 0.0;
    double w2_gauss = 0.0;
    double mode_coverage = 0.0;
    double seconds = 0.0;
};

} // namespace sim::metrics
