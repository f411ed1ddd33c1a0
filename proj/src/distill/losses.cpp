#include <cmath>
#include <stdexcept>

#include "sim/distill.hpp"
#include "sim/nn/ops.hpp"

namespace sim::distill {

std::string to_string(Form f) { return f == Form::score ? "score" : "denoiser"; }

Form form_from_string(const std::string& s) {
    if (s == "denoiser") return Form::denoiser;
    if (s == "score") return Form::score;
    throw std::invalid_argument("unknown loss form '" + s + "'");
}

namespace {

Tensor normal_like(Rng& rng, const Tensor& x) {
    std::vector<double> v(x.size());
    for (auto& e : v) e = rng.normal();
    return Tensor::from(x.shape(), std::move(v));
}

Tensor row_vector(std::vector<double> v) {
    const std::size_t n = v.size();
    return Tensor::from({n}, std::move(v));
}

void check_finite(const Tensor& loss, const char* what) {
    if (!std::isfinite(loss.item())) throw nn::NonFiniteError(std::string(what) + ": loss is not finite");
}

std::vector<double> generator_weights(const GeneratorBatch& b, const diffusion::WeightingFn& w,
                                      const diffusion::DiffusionSpec& spec, const ScoreModel& teacher) {
    if (w.kind != diffusion::WeightingFn::Kind::sid) return diffusion::weights(w, b.t, spec);
    const Tensor x0 = b.x0.detach();
    const Tensor dq = teacher.denoise(b.xt.detach(), b.t, false).detach();
    return diffusion::weights(w, b.t, spec, &x0, &dq);
}

// The pair (y, u) shared by the SIM and SiD losses.
struct Factors {
    Tensor y, u;
};

Factors factors(const GeneratorBatch& b, const ScoreModel& online, const ScoreModel& teacher, Form form) {
    if (form == Form::denoiser) {
        auto dphi = online.denoise(b.xt, b.t, false);
        auto dq = teacher.denoise(b.xt, b.t, false);
        return {nn::sub(dphi, dq), nn::sub(dphi, b.x0)};
    }
    auto sphi = online.score(b.xt, b.t, false);
    auto sq = teacher.score(b.xt, b.t, false);
    return {nn::sub(sphi, sq), nn::sub(sphi, diffusion::cond_score(b.x0, b.xt, b.t))};
}

} // namespace

GeneratorBatch draw_generator_batch(const Generator& gen, std::span<const double> t, Rng& rng, bool track_params) {
    GeneratorBatch b;
    b.z = gen.sample_latent(rng, t.size());
    b.x0 = gen.generate(b.z, track_params);
    b.eps = normal_like(rng, b.x0);
    b.t.assign(t.begin(), t.end());
    b.xt = diffusion::perturb(b.x0, b.t, b.eps);
    return b;
}

GeneratorBatch draw_generator_batch(const Generator& gen, const diffusion::DiffusionSpec& spec,
                                    const diffusion::TimeDistribution& td, std::size_t n, Rng& rng,
                                    bool track_params) {
    const auto t = diffusion::sample_times(td, spec, rng, n);
    return draw_generator_batch(gen, t, rng, track_params);
}

Tensor dsm_loss(const ScoreModel& model, const Tensor& x0, const diffusion::DiffusionSpec& spec,
                const diffusion::TimeDistribution& td, const diffusion::WeightingFn& weighting, Rng& rng, Form form) {
    if (x0.rank() != 2 || x0.dim(0) == 0) throw std::invalid_argument("dsm_loss: x0 must be a non-empty [B, D] batch");
    if (x0.requires_grad()) throw std::invalid_argument("dsm_loss: x0 must be detached from the generator");
    if (weighting.kind == diffusion::WeightingFn::Kind::sid)
        throw std::invalid_argument("dsm_loss: sid weighting is a generator-phase weighting");
    const std::size_t n = x0.dim(0);
    const auto t = diffusion::sample_times(td, spec, rng, n);
    const auto eps = normal_like(rng, x0);
    const auto xt = diffusion::perturb(x0, t, eps);
    auto lam = diffusion::weights(weighting, t, spec);
    Tensor resid;
    if (form == Form::denoiser) {
        resid = nn::sub(model.denoise(xt, t, true), x0);
    } else {
        resid = nn::sub(model.score(xt, t, true), diffusion::cond_score(x0, xt, t));
        for (std::size_t i = 0; i < n; ++i) lam[i] *= t[i] * t[i] * t[i] * t[i];
    }
    auto loss = nn::mean(nn::mul(row_vector(std::move(lam)), nn::sum_cols(nn::square(resid))));
    check_finite(loss, "dsm_loss");
    return loss;
}

GeneratorLoss sim_generator_loss(const GeneratorBatch& batch, const ScoreModel& online, const ScoreModel& teacher,
                                 const distances::DistanceFn& d, const diffusion::WeightingFn& w,
                                 const diffusion::DiffusionSpec& spec, const SimOptions& opts) {
    const auto wt = generator_weights(batch, w, spec, teacher);
    auto [y, u] = factors(batch, online, teacher, opts.form);
    const auto dprime = distances::derivative(d, opts.detach_first_factor ? y.detach() : y);
    GeneratorLoss out;
    out.loss = nn::neg(nn::mean(nn::mul(row_vector(wt), nn::dot_rows(dprime, u))));
    check_finite(out.loss, "sim_generator_loss");

    const std::size_t n = u.dim(0), dim = u.dim(1);
    for (std::size_t i = 0; i < n; ++i) {
        double uu = 0.0, gg = 0.0;
        for (std::size_t j = 0; j < dim; ++j) {
            uu += u.at(i, j) * u.at(i, j);
            gg += dprime.at(i, j) * dprime.at(i, j);
        }
        out.envelope += wt[i] * std::sqrt(uu);
        out.max_first_factor = std::max(out.max_first_factor, std::sqrt(gg));
    }
    out.envelope /= static_cast<double>(n);
    return out;
}

Tensor sid_delta_loss(const GeneratorBatch& batch, const ScoreModel& online, const ScoreModel& teacher,
                      const diffusion::WeightingFn& w, const diffusion::DiffusionSpec& spec, Form form) {
    const auto wt = generator_weights(batch, w, spec, teacher);
    auto [y, u] = factors(batch, online, teacher, form);
    auto loss = nn::neg(nn::mean(nn::mul(row_vector(wt), nn::dot_rows(y, u))));
    check_finite(loss, "sid_delta_loss");
    return loss;
}

Tensor di_generator_loss(const GeneratorBatch& batch, const ScoreModel& online, const ScoreModel& teacher,
                         const diffusion::WeightingFn& w, const diffusion::DiffusionSpec& spec) {
    const auto wt = generator_weights(batch, w, spec, teacher);
    auto diff = nn::sub(online.score(batch.xt, batch.t, false), teacher.score(batch.xt, batch.t, false)).detach();
    auto loss = nn::mean(nn::mul(row_vector(wt), nn::dot_rows(diff, batch.xt)));
    check_finite(loss, "di_generator_loss");
    return loss;
}

} // namespace sim::distill
