#pragma once

// Score implicit matching: an online denoiser tracks the generator's
// diffused distribution (phase 1, denoising score matching) and the
// generator follows the gradient-equivalent loss of the score divergence
// against a frozen teacher (phase 2). Diff-Instruct and SiD delta losses
// are provided as baseline generator updates.

#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "sim/diffusion.hpp"
#include "sim/distances.hpp"
#include "sim/metrics.hpp"
#include "sim/nn/adam.hpp"
#include "sim/nn/mlp.hpp"
#include "sim/oracles.hpp"
#include "sim/rng.hpp"

namespace sim::distill {

using nn::Tensor;

// ---------------------------------------------------------------------------
// Score models

/// A (possibly trainable) model of a diffused distribution, queried either
/// as a denoiser d(x_t, t) or as a score s(x_t, t) = (d - x_t) / t^2.
/// Subclasses override at least one of the two.
class ScoreModel {
public:
    virtual ~ScoreModel() = default;
    /// With track_params=false the parameters enter as constants (a frozen
    /// model); gradients still flow into x_t.
    virtual Tensor denoise(const Tensor& xt, std::span<const double> t, bool track_params = true) const;
    virtual Tensor score(const Tensor& xt, std::span<const double> t, bool track_params = true) const;
    virtual std::vector<Tensor> parameters() const { return {}; }
    virtual std::vector<std::string> parameter_names() const { return {}; }
    virtual std::unique_ptr<ScoreModel> clone() const = 0;
    virtual std::string describe() const = 0;
};

enum class Preconditioning { none, edm };
std::string to_string(Preconditioning p);
Preconditioning preconditioning_from_string(const std::string& s);

/// MLP denoiser. With edm preconditioning
///   d(x, t) = c_skip(t) x + c_out(t) F(c_in(t) x, t),
/// c_skip = sd^2/(t^2+sd^2), c_out = t sd/sqrt(t^2+sd^2), c_in = 1/sqrt(t^2+sd^2);
/// without it d = F(x, t). F must be time-conditioned.
class NetDenoiser final : public ScoreModel {
public:
    NetDenoiser(nn::MlpConfig cfg, Preconditioning pre, double sigma_data, Rng& rng);
    NetDenoiser(nn::MlpNet net, Preconditioning pre, double sigma_data);

    Tensor denoise(const Tensor& xt, std::span<const double> t, bool track_params = true) const override;
    std::vector<Tensor> parameters() const override { return net_.parameters(); }
    std::vector<std::string> parameter_names() const override { return net_.parameter_names(); }
    std::unique_ptr<ScoreModel> clone() const override;
    std::string describe() const override;

    const nn::MlpNet& net() const { return net_; }
    nn::MlpNet& net() { return net_; }
    Preconditioning preconditioning() const { return pre_; }
    double sigma_data() const { return sigma_data_; }

private:
    nn::MlpNet net_;
    Preconditioning pre_;
    double sigma_data_;
};

/// Closed-form diffused Gaussian, mixture or linear push-forward.
class AnalyticModel final : public ScoreModel {
public:
    using Law = std::variant<oracles::GaussianSpec, oracles::GmmSpec, oracles::LinearGenerator>;
    explicit AnalyticModel(Law law);

    Tensor denoise(const Tensor& xt, std::span<const double> t, bool track_params = true) const override;
    Tensor score(const Tensor& xt, std::span<const double> t, bool track_params = true) const override;
    std::unique_ptr<ScoreModel> clone() const override;
    std::string describe() const override;
    const Law& law() const { return law_; }

private:
    Law law_;
};

// ---------------------------------------------------------------------------
// Generators

class Generator {
public:
    virtual ~Generator() = default;
    virtual Tensor sample_latent(Rng& rng, std::size_t n) const = 0;
    virtual Tensor generate(const Tensor& z, bool track_params = true) const = 0;
    virtual std::vector<Tensor> parameters() const = 0;
    virtual std::vector<std::string> parameter_names() const = 0;
    virtual std::unique_ptr<Generator> clone() const = 0;
    virtual std::string describe() const = 0;
    virtual std::size_t output_dim() const = 0;
    /// Draw n latents and map them (no parameter tracking).
    Tensor sample(Rng& rng, std::size_t n) const { return generate(sample_latent(rng, n), false); }
};

/// x = MLP(z), z ~ N(0, I).
class MlpGenerator final : public Generator {
public:
    MlpGenerator(nn::MlpConfig cfg, Rng& rng);
    explicit MlpGenerator(nn::MlpNet net);

    Tensor sample_latent(Rng& rng, std::size_t n) const override;
    Tensor generate(const Tensor& z, bool track_params = true) const override;
    std::vector<Tensor> parameters() const override { return net_.parameters(); }
    std::vector<std::string> parameter_names() const override { return net_.parameter_names(); }
    std::unique_ptr<Generator> clone() const override;
    std::string describe() const override;
    std::size_t output_dim() const override { return net_.output_width(); }
    const nn::MlpNet& net() const { return net_; }

private:
    nn::MlpNet net_;
};

/// x = d(z, t*), z ~ N(0, t*^2 I): a denoiser evaluated at one fixed noise
/// level, typically initialized from the teacher.
class DenoiserGenerator final : public Generator {
public:
    DenoiserGenerator(NetDenoiser denoiser, double t_star);

    Tensor sample_latent(Rng& rng, std::size_t n) const override;
    Tensor generate(const Tensor& z, bool track_params = true) const override;
    std::vector<Tensor> parameters() const override { return den_.parameters(); }
    std::vector<std::string> parameter_names() const override { return den_.parameter_names(); }
    std::unique_ptr<Generator> clone() const override;
    std::string describe() const override;
    std::size_t output_dim() const override { return den_.net().output_width(); }
    double t_star() const { return t_star_; }
    const NetDenoiser& denoiser() const { return den_; }

private:
    NetDenoiser den_;
    double t_star_;
};

/// x = A z + b with trainable (A, b).
class LinearGeneratorModel final : public Generator {
public:
    explicit LinearGeneratorModel(const oracles::LinearGenerator& init);

    Tensor sample_latent(Rng& rng, std::size_t n) const override;
    Tensor generate(const Tensor& z, bool track_params = true) const override;
    /// {A^T stored [latent, dim], b}
    std::vector<Tensor> parameters() const override { return {at_, b_}; }
    std::vector<std::string> parameter_names() const override { return {"A", "b"}; }
    std::unique_ptr<Generator> clone() const override;
    std::string describe() const override;
    std::size_t output_dim() const override { return b_.size(); }

    oracles::LinearGenerator current() const;
    /// Gradient in oracles::LinearGenerator::theta() order.
    std::vector<double> theta_gradient(const nn::Gradients& g) const;

private:
    Tensor at_, b_;
};

// ---------------------------------------------------------------------------
// Losses

/// Whether a loss is built on denoiser outputs or on scores.
enum class Form { denoiser, score };
std::string to_string(Form f);
Form form_from_string(const std::string& s);

/// One generator draw with its forward-diffused copy. x0 and xt carry the
/// generator's graph when drawn with tracking.
struct GeneratorBatch {
    Tensor z, x0, eps, xt;
    std::vector<double> t;
};

GeneratorBatch draw_generator_batch(const Generator& gen, const diffusion::DiffusionSpec& spec,
                                    const diffusion::TimeDistribution& td, std::size_t n, Rng& rng,
                                    bool track_params = true);
/// Same, with the noise level of each row given.
GeneratorBatch draw_generator_batch(const Generator& gen, std::span<const double> t, Rng& rng,
                                    bool track_params = true);

/// Weighted denoising score matching, one (t, eps) per row of x0:
///   mean_i lambda(t_i) |d(x_t,i) - x0_i|^2        (denoiser form)
///   mean_i lambda(t_i) t_i^4 |s(x_t,i) + eps_i/t_i|^2  (score form)
/// The two forms coincide when s = (d - x_t)/t^2.
Tensor dsm_loss(const ScoreModel& model, const Tensor& x0, const diffusion::DiffusionSpec& spec,
                const diffusion::TimeDistribution& td, const diffusion::WeightingFn& weighting, Rng& rng,
                Form form = Form::denoiser);

struct GeneratorLoss {
    Tensor loss;
    /// Batch mean of w(t) |u| where u is the second factor (d_phi - x0, or
    /// s_phi - cond_score); bounds |loss| whenever |d'(y)| <= 1.
    double envelope = 0.0;
    /// Largest per-row |d'(y)|.
    double max_first_factor = 0.0;
};

struct SimOptions {
    Form form = Form::denoiser;
    /// Treat d'(y) as a constant coefficient.
    bool detach_first_factor = false;
};

/// Score implicit matching generator loss, per row
///   -w(t) d'(y)^T (s_phi(x_t) - cond_score(x0, x_t))  with y = s_phi - s_q   (score form)
///   -w(t) d'(y)^T (d_phi(x_t) - x0)                    with y = d_phi - d_q   (denoiser form)
/// averaged over the batch. online and teacher are frozen; gradients reach
/// the generator through x0 and x_t in every factor.
GeneratorLoss sim_generator_loss(const GeneratorBatch& batch, const ScoreModel& online, const ScoreModel& teacher,
                                 const distances::DistanceFn& d, const diffusion::WeightingFn& w,
                                 const diffusion::DiffusionSpec& spec, const SimOptions& opts = {});

/// Dedicated squared-L2 path: -w(t) y^T u per row, with y and u as above.
/// The generic l2 loss is exactly twice this.
Tensor sid_delta_loss(const GeneratorBatch& batch, const ScoreModel& online, const ScoreModel& teacher,
                      const diffusion::WeightingFn& w, const diffusion::DiffusionSpec& spec,
                      Form form = Form::denoiser);

/// Diff-Instruct: w(t) (s_phi - s_q)_detached^T x_t per row.
Tensor di_generator_loss(const GeneratorBatch& batch, const ScoreModel& online, const ScoreModel& teacher,
                         const diffusion::WeightingFn& w, const diffusion::DiffusionSpec& spec);

// ---------------------------------------------------------------------------
// Training loop

enum class Objective { sim, sid, di };
std::string to_string(Objective o);
Objective objective_from_string(const std::string& s);

struct DistillConfig {
    double score_lr = 1e-3;
    double gen_lr = 1e-3;
    double adam_beta1 = 0.0;
    double adam_beta2 = 0.999;
    std::size_t batch = 512;
    /// Online-denoiser updates per generator update.
    std::size_t ratio = 2;
    diffusion::TimeDistribution score_time = diffusion::edm_time();
    diffusion::TimeDistribution gen_time = diffusion::sim_time();
    diffusion::WeightingFn score_weighting = diffusion::WeightingFn::edm();
    diffusion::WeightingFn gen_weighting = diffusion::WeightingFn::one();
    distances::DistanceFn distance = distances::DistanceFn::pseudo_huber_for_dim(2);
    Objective objective = Objective::sim;
    Form form = Form::denoiser;
    bool detach_first_factor = false;
    std::size_t steps = 20000;
    /// Metric rows every eval_interval generator steps (0: only at the end).
    std::size_t eval_interval = 1000;
    /// Halt when |generator loss| exceeds this or turns non-finite.
    double halt_threshold = 1e6;

    void validate(const diffusion::DiffusionSpec& spec) const;
    /// Small 2-D problems.
    static DistillConfig desk_2d();
    /// Image-scale hyperparameters from the reference CIFAR-10 runs.
    static DistillConfig paper_table3();
};

/// Evaluates a frozen generator snapshot; fills mmd, w2_gauss and
/// mode_coverage of the row.
using Evaluator = std::function<void(const Generator& gen, metrics::MetricRow& row)>;

struct Halt {
    std::size_t step = 0;
    double loss = 0.0;
    std::string reason;
    std::vector<double> generator_param_norms;
};

struct DistillResult {
    std::unique_ptr<Generator> generator;
    std::unique_ptr<ScoreModel> online;
    std::vector<metrics::MetricRow> rows;
    std::optional<Halt> halt;
    std::size_t steps_done = 0;
    /// Batches whose |loss| exceeded the envelope (checked for distances
    /// with |d'| < 1).
    std::size_t envelope_violations = 0;
    double max_abs_gen_loss = 0.0;
    double max_first_factor = 0.0;
};

struct DistillOptions {
    /// Record wall-clock seconds in metric rows; off keeps logs
    /// byte-reproducible.
    bool wall_clock = false;
    /// Called with every metric row as soon as it is produced.
    std::function<void(const metrics::MetricRow&)> on_row;
};

/// Alternates cfg.ratio phase-1 updates of the online denoiser with one
/// phase-2 generator update. The online model starts as a copy of the
/// teacher when the teacher is a network of the same architecture as
/// online_init, otherwise from online_init. Deterministic given rng.
DistillResult run_distillation(const DistillConfig& cfg, const diffusion::DiffusionSpec& spec,
                               const ScoreModel& teacher, const Generator& gen_init, const ScoreModel& online_init,
                               Rng rng, const Evaluator& evaluate = {}, const DistillOptions& opts = {});

/// Thrown when a parameter outside the active phase changes.
class PhaseIsolationError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Hash of parameter values (bit patterns), for phase-isolation checks.
std::uint64_t parameter_hash(const std::vector<Tensor>& params);

} // namespace sim::distill
