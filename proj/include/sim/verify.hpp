#pragma once

// Statistical checks of the score-projection identity and of the gradient
// equivalence between the score divergence and the SIM loss, plus the
// finite-difference gradcheck battery.

#include <cstdint>
#include <functional>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "sim/distances.hpp"
#include "sim/nn/tensor.hpp"
#include "sim/oracles.hpp"
#include "sim/rng.hpp"

namespace sim::verify {

struct VerificationReport {
    std::string check;
    /// Per-coordinate estimates, their Monte-Carlo standard errors and targets.
    std::vector<double> estimate;
    std::vector<double> std_error;
    std::vector<double> target;
    /// Extra per-coordinate allowance added to 3 SE (finite-difference bias),
    /// or the deterministic tolerance when std_error is empty.
    std::vector<double> allowance;
    std::size_t samples = 0;
    bool pass = false;
    /// Some coordinate is noise-dominated (SE > |signal| / 2).
    bool inconclusive = false;
    std::uint64_t seed = 0;
    std::string rng_algorithm;
    nlohmann::json config;
    std::string detail;
};

nlohmann::json to_json(const VerificationReport& r);

/// Per coordinate: |estimate - target| <= 3 SE + allowance (or <= allowance
/// for deterministic checks).
bool within_tolerance(const VerificationReport& r, std::size_t coord);
bool all_within_tolerance(const VerificationReport& r);

// ---------------------------------------------------------------------------

struct TestFunction {
    enum class Kind { identity, constant, random_net };
    Kind kind = Kind::identity;
    std::vector<double> constant;  // Kind::constant
    std::size_t hidden = 32;       // Kind::random_net
    std::uint64_t net_seed = 0;

    static TestFunction identity() { return {}; }
    static TestFunction constant_vector(std::vector<double> c) { return {Kind::constant, std::move(c), 32, 0}; }
    static TestFunction random_net(std::size_t hidden, std::uint64_t seed) { return {Kind::random_net, {}, hidden, seed}; }
};

std::string to_string(TestFunction::Kind k);

using ProjectionLaw = std::variant<oracles::GaussianSpec, oracles::LinearGenerator>;

/// Monte-Carlo estimate of E[u_j(x_t) (s_pt(x_t) - grad log q_t(x_t|x0))_j] per
/// coordinate j, with x0 ~ p and x_t = x0 + t eps; the target is 0.
/// Requires n_mc >= 1000.
VerificationReport check_score_projection(const ProjectionLaw& p, const TestFunction& u, double t, std::size_t n_mc,
                                          Rng rng);

struct Theorem1Options {
    diffusion::WeightingFn weighting = diffusion::WeightingFn::one();
    diffusion::DiffusionSpec spec{};
    /// The autodiff side is averaged over this many independent chunks; the
    /// spread of chunk means gives its standard error.
    std::size_t chunks = 50;
};

/// Gradient of the score divergence with respect to theta = (A, b),
/// computed two ways: central finite differences of divergence_value with
/// the sampling law frozen at p and common random numbers, and autodiff
/// through the SIM generator loss on analytic scores. Each coordinate must
/// agree within 3 combined SEs plus a Richardson estimate of the FD bias.
/// estimate holds the FD side, target the autodiff side.
VerificationReport check_theorem1(const oracles::LinearGenerator& p, const oracles::TargetSpec& q,
                                  const distances::DistanceFn& d, std::span<const double> time_grid, std::size_t n_mc,
                                  double fd_step, Rng rng, const Theorem1Options& opts = {});

// ---------------------------------------------------------------------------

/// A differentiable function under test: maps a flat input (already drawn in
/// its domain) to a scalar tensor.
struct GradcheckCase {
    std::string name;
    std::size_t input_size = 0;
    /// Draws one probe point.
    std::function<std::vector<double>(Rng&)> draw;
    std::function<nn::Tensor(const nn::Tensor& flat)> fn;
    /// Probe 0 is the zero vector instead of a draw.
    bool zero_first = false;
};

/// Every autodiff primitive, the network and analytic-field compositions.
std::vector<GradcheckCase> primitive_cases();
/// One case per distance tag; checks the closed-form derivative against FD
/// of the value. The first probe of each is the zero vector.
std::vector<GradcheckCase> distance_cases();

/// Central FD (h = 1e-5) against autodiff, |a-b| / max(1,|a|,|b|) <= 1e-6 on
/// every probe. One report per case.
std::vector<VerificationReport> gradcheck_suite(Rng rng, const std::vector<GradcheckCase>& cases,
                                                std::size_t probes = 100);
std::vector<VerificationReport> gradcheck_suite(Rng rng, std::size_t probes = 100);

} // namespace sim::verify
