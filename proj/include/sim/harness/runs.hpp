#pragma once

// Experiment drivers behind the CLI subcommands. Each takes a validated
// RunConfig, derives all randomness from its seed and writes its artifacts
// into an output directory.

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "sim/distill.hpp"
#include "sim/harness/config.hpp"
#include "sim/verify.hpp"

namespace sim::harness {

/// Training data: exact draws from a mixture or Gaussian, or rows resampled
/// with replacement from a CSV point file.
class DataSampler {
public:
    explicit DataSampler(const DataSpec& spec);
    nn::Tensor sample(Rng& rng, std::size_t n) const;
    std::size_t dim() const;
    /// The mixture behind the data, when there is one.
    const oracles::GmmSpec* gmm() const;

private:
    DataSpec spec_;
    nn::Tensor points_;
};

// Teacher training ---------------------------------------------------------

struct TeacherRow {
    std::size_t step = 0;
    double train_loss = 0.0;
    double validation_loss = 0.0;
};

struct TeacherResult {
    distill::NetDenoiser model;
    double validation_loss = 0.0;
    std::vector<TeacherRow> rows;
};

distill::NetDenoiser make_denoiser(const DenoiserSpec& spec, std::size_t dim, double sigma_data, Rng& rng);

/// Held-out DSM loss on validation_size data points with (t, eps) drawn from
/// a fixed stream of `seed`; the same model and config give the same value.
double teacher_validation_loss(const distill::ScoreModel& model, const RunConfig& cfg);

/// DSM training of cfg.teacher_net on the data (EDM time distribution and
/// weighting, Adam with first-moment decay 0.9, step size on the configured
/// schedule).
TeacherResult train_teacher(const RunConfig& cfg, const std::function<void(const TeacherRow&)>& on_row = {});

// Distillation --------------------------------------------------------------

struct RunOutputs {
    /// Warm start from a previous run directory (generator.ckpt, online.ckpt).
    std::string resume_dir;
    /// Accept checkpoints written under a different config.
    bool force = false;
    bool plots = true;
    bool checkpoints = true;
    /// Record wall-clock seconds in metrics.csv (breaks byte reproducibility).
    bool wall_clock = false;
};

/// Final evaluation of a generator against the reference law.
struct FinalMetrics {
    double mmd = 0.0;
    double w2_gauss = 0.0;
    double mode_coverage = 0.0;
    std::size_t modes_covered = 0;
    std::vector<std::size_t> mode_counts;
    std::size_t samples = 0;
};

struct DistillRun {
    distill::DistillResult result;
    FinalMetrics final;
    nlohmann::json report;
};

/// Runs the distillation of cfg and writes config.json, metrics.csv,
/// reports.json, checkpoints, sample CSVs and SVG plots under out_dir.
DistillRun run_distill(const RunConfig& cfg, const std::string& out_dir, const RunOutputs& outputs = {});

/// Evaluates a generator on cfg.eval.final_samples draws against a fresh
/// reference sample (streams 1 and 2 of rng).
FinalMetrics evaluate_generator(const distill::Generator& gen, const RunConfig& cfg, Rng rng);
nlohmann::json to_json(const FinalMetrics& m);

/// Regenerates the SVG plots of a run directory from its CSV files.
void write_plots(const std::string& run_dir);

/// Reference law of a run: the analytic teacher's mixture, otherwise the data.
nn::Tensor sample_reference(const RunConfig& cfg, Rng& rng, std::size_t n);
const oracles::GmmSpec* coverage_mixture(const RunConfig& cfg);

// Self-null of the MMD statistic ---------------------------------------------

struct SelfNull {
    std::vector<double> values;
    double median = 0.0, q95 = 0.0, q99 = 0.0, max = 0.0;
    std::size_t pairs = 0, samples = 0;
    std::uint64_t seed = 0;
};

/// Unbiased MMD^2 between pairs of independent n-sample reference draws;
/// pair p uses streams 2p and 2p+1 of Rng(seed).
SelfNull self_null(const RunConfig& cfg, std::size_t pairs, std::size_t n, std::uint64_t seed);
nlohmann::json to_json(const SelfNull& s);

// Verification battery -------------------------------------------------------

enum class Check { gradcheck, score_projection, theorem1 };
std::string to_string(Check c);
Check check_from_string(const std::string& s);

struct VerifyOptions {
    std::size_t probes = 100;
    std::size_t projection_samples = 1000000;
    std::size_t theorem1_samples = 20000;
    std::size_t theorem1_thetas = 5;
};

/// The standard configurations for one check, all seeded from `seed`.
std::vector<verify::VerificationReport> run_check(Check c, std::uint64_t seed, const VerifyOptions& opts = {});

} // namespace sim::harness
