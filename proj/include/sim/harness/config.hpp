#pragma once

// Run configuration: one JSON document per experiment. Parsing is strict
// (unknown keys and wrong types are rejected with the offending key path),
// and serialization is lossless, so an echoed config reproduces a run.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "sim/diffusion.hpp"
#include "sim/distill.hpp"
#include "sim/nn/mlp.hpp"
#include "sim/oracles.hpp"

namespace sim::harness {

using json = nlohmann::json;

/// Malformed or invalid configuration; path() is the dotted key path.
class ConfigError : public std::runtime_error {
public:
    ConfigError(std::string path, const std::string& message);
    const std::string& path() const { return path_; }

private:
    std::string path_;
};

struct GeneratorSpec {
    enum class Kind { mlp, denoiser };
    Kind kind = Kind::mlp;
    std::size_t latent_dim = 2;
    std::vector<std::size_t> hidden{64, 64};
    nn::Activation activation = nn::Activation::silu;
    /// Noise level of the denoiser-as-generator, z ~ N(0, t*^2 I).
    double t_star = 2.5;
};

/// Architecture of a time-conditioned denoiser network (teacher or online).
struct DenoiserSpec {
    std::vector<std::size_t> hidden{64, 64};
    nn::Activation activation = nn::Activation::silu;
    distill::Preconditioning preconditioning = distill::Preconditioning::edm;
};

/// Distillation target: an analytic mixture or a trained checkpoint.
struct TeacherSpec {
    enum class Kind { gmm, checkpoint };
    Kind kind = Kind::gmm;
    oracles::GmmSpec gmm = oracles::GmmSpec::ring(8, 4.0, 0.3);
    std::string checkpoint;
};

/// Reference data: a mixture, a Gaussian or a CSV file of points.
struct DataSpec {
    enum class Kind { gmm, gaussian, csv };
    Kind kind = Kind::gmm;
    oracles::GmmSpec gmm = oracles::GmmSpec::ring(8, 4.0, 0.3);
    oracles::GaussianSpec gaussian = oracles::GaussianSpec::standard(2);
    std::string path;
};

struct TeacherTraining {
    enum class Schedule { constant, cosine };
    std::size_t steps = 20000;
    double lr = 1e-3;
    /// cosine: lr * (1 + cos(pi * (step - 1) / steps)) / 2.
    Schedule schedule = Schedule::cosine;
    std::size_t batch = 512;
    std::size_t validation_size = 4096;
};

struct EvalSpec {
    /// Metric rows every `interval` generator steps (0: final row only).
    std::size_t interval = 1000;
    /// Generator samples per intermediate metric row.
    std::size_t samples = 2000;
    /// Generator and reference samples for the final report.
    std::size_t final_samples = 10000;
    /// Mode-coverage radius in component standard deviations.
    double coverage_radius = 3.0;
    double coverage_min_fraction = 0.02;
};

struct RunConfig {
    std::string experiment = "run";
    std::string preset = "desk-2d";
    std::uint64_t seed = 0;
    diffusion::DiffusionSpec diffusion;
    GeneratorSpec generator;
    DenoiserSpec online;
    distill::DistillConfig distill = distill::DistillConfig::desk_2d();
    TeacherSpec teacher;
    DenoiserSpec teacher_net;
    TeacherTraining teacher_training;
    DataSpec data;
    EvalSpec eval;
    std::string output_dir = "runs/run";

    std::size_t dim() const;
    /// Semantic checks; throws ConfigError naming the key.
    void validate() const;
};

/// Defaults of a named preset: "desk-2d" or "paper-table3".
RunConfig preset(const std::string& name);

/// Starts from the preset named by the document's "preset" key (desk-2d when
/// absent) and applies every other key on top.
RunConfig from_json(const json& j);
json to_json(const RunConfig& c);
RunConfig load_config(const std::string& path);

/// FNV-1a over the canonical JSON dump, output_dir excluded.
std::string config_hash(const RunConfig& c);

// Pieces shared with checkpoint headers and reports.
json to_json(const oracles::GmmSpec& g);
json to_json(const distances::DistanceFn& d);
json to_json(const diffusion::TimeDistribution& t);
oracles::GmmSpec gmm_from_json(const json& j, const std::string& path);

std::string to_string(GeneratorSpec::Kind k);
std::string to_string(TeacherTraining::Schedule s);
std::string to_string(TeacherSpec::Kind k);
std::string to_string(DataSpec::Kind k);

} // namespace sim::harness
