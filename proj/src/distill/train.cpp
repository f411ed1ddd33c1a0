#include <bit>
#include <chrono>
#include <cmath>
#include <stdexcept>

#include "sim/distill.hpp"
#include "sim/nn/autograd.hpp"

namespace sim::distill {

std::string to_string(Objective o) {
    switch (o) {
        case Objective::sim: return "sim";
        case Objective::sid: return "sid";
        case Objective::di: return "di";
    }
    return "?";
}

Objective objective_from_string(const std::string& s) {
    if (s == "sim") return Objective::sim;
    if (s == "sid") return Objective::sid;
    if (s == "di") return Objective::di;
    throw std::invalid_argument("unknown objective '" + s + "'");
}

void DistillConfig::validate(const diffusion::DiffusionSpec& spec) const {
    if (!(score_lr > 0.0) || !(gen_lr > 0.0)) throw std::invalid_argument("distill: learning rates must be positive");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0))
        throw std::invalid_argument("distill: Adam betas must lie in [0, 1)");
    if (batch < 2) throw std::invalid_argument("distill: batch must be >= 2");
    if (ratio < 1) throw std::invalid_argument("distill: ratio must be >= 1");
    if (!(halt_threshold > 0.0)) throw std::invalid_argument("distill: halt threshold must be positive");
    diffusion::validate(score_time, spec);
    diffusion::validate(gen_time, spec);
    distance.validate();
    if (score_weighting.kind == diffusion::WeightingFn::Kind::sid)
        throw std::invalid_argument("distill: sid weighting applies to the generator phase only");
    if (objective == Objective::di && form != Form::score)
        throw std::invalid_argument("distill: the di objective is defined in score form only");
}

DistillConfig DistillConfig::desk_2d() { return DistillConfig{}; }

DistillConfig DistillConfig::paper_table3() {
    DistillConfig c;
    c.score_lr = 1e-5;
    c.gen_lr = 1e-5;
    c.batch = 256;
    return c;
}

std::uint64_t parameter_hash(const std::vector<Tensor>& params) {
    std::uint64_t h = 1469598103934665603ULL;
    for (const auto& p : params)
        for (double v : p.data()) {
            h ^= std::bit_cast<std::uint64_t>(v);
            h *= 1099511628211ULL;
        }
    return h;
}

namespace {

std::vector<std::string> names_or_default(const std::vector<std::string>& names, std::size_t n, const char* prefix) {
    if (names.size() == n) return names;
    std::vector<std::string> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(std::string(prefix) + std::to_string(i));
    return out;
}

bool same_architecture(const ScoreModel& a, const ScoreModel& b) {
    auto* na = dynamic_cast<const NetDenoiser*>(&a);
    auto* nb = dynamic_cast<const NetDenoiser*>(&b);
    if (!na || !nb) return false;
    const auto& ca = na->net().config();
    const auto& cb = nb->net().config();
    return ca.widths == cb.widths && ca.activation == cb.activation && ca.conditioning == cb.conditioning &&
           ca.time_scale == cb.time_scale && na->preconditioning() == nb->preconditioning() &&
           na->sigma_data() == nb->sigma_data();
}

std::vector<double> norms(const std::vector<Tensor>& params) {
    std::vector<double> out;
    for (const auto& p : params) {
        double s = 0.0;
        for (double v : p.data()) s += v * v;
        out.push_back(std::sqrt(s));
    }
    return out;
}

} // namespace

DistillResult run_distillation(const DistillConfig& cfg, const diffusion::DiffusionSpec& spec,
                               const ScoreModel& teacher, const Generator& gen_init, const ScoreModel& online_init,
                               Rng rng, const Evaluator& evaluate, const DistillOptions& opts) {
    spec.validate();
    cfg.validate(spec);
    using clock = std::chrono::steady_clock;
    const auto t_start = clock::now();

    DistillResult res;
    res.generator = gen_init.clone();
    res.online = same_architecture(teacher, online_init) ? teacher.clone() : online_init.clone();
    Generator& gen = *res.generator;
    ScoreModel& online = *res.online;

    const auto gen_params = gen.parameters();
    const auto online_params = online.parameters();
    if (gen_params.empty()) throw std::invalid_argument("distill: generator has no parameters");
    if (online_params.empty()) throw std::invalid_argument("distill: online model has no parameters");
    nn::Adam gen_opt(gen_params, names_or_default(gen.parameter_names(), gen_params.size(), "gen"),
                     {cfg.gen_lr, cfg.adam_beta1, cfg.adam_beta2, 1e-8});
    nn::Adam online_opt(online_params, names_or_default(online.parameter_names(), online_params.size(), "online"),
                        {cfg.score_lr, cfg.adam_beta1, cfg.adam_beta2, 1e-8});
    const std::uint64_t teacher_hash = parameter_hash(teacher.parameters());

    const bool envelope_applies = cfg.objective == Objective::sim &&
                                  cfg.distance.kind == distances::DistanceFn::Kind::pseudo_huber;
    const SimOptions sim_opts{cfg.form, cfg.detach_first_factor};
    double p1_sum = 0.0, p2_sum = 0.0;
    std::size_t p1_n = 0, p2_n = 0;

    auto emit = [&](std::size_t step) {
        metrics::MetricRow row;
        row.step = step;
        row.phase1_loss = p1_n ? p1_sum / static_cast<double>(p1_n) : 0.0;
        row.phase2_loss = p2_n ? p2_sum / static_cast<double>(p2_n) : 0.0;
        if (evaluate) evaluate(gen, row);
        row.seconds = opts.wall_clock ? std::chrono::duration<double>(clock::now() - t_start).count() : 0.0;
        p1_sum = p2_sum = 0.0;
        p1_n = p2_n = 0;
        res.rows.push_back(row);
        if (opts.on_row) opts.on_row(row);
    };
    auto halt = [&](std::size_t step, double loss, std::string reason) {
        res.halt = Halt{step, loss, std::move(reason), norms(gen_params)};
    };

    for (std::size_t step = 1; step <= cfg.steps; ++step) {
        // phase 1: online denoiser on detached generator samples
        const std::uint64_t gen_hash = parameter_hash(gen_params);
        for (std::size_t r = 0; r < cfg.ratio; ++r) {
            const Tensor x0 = gen.sample(rng, cfg.batch);
            try {
                auto loss = dsm_loss(online, x0, spec, cfg.score_time, cfg.score_weighting, rng, cfg.form);
                online_opt.step(nn::backward(loss));
                p1_sum += loss.item();
                ++p1_n;
            } catch (const nn::NonFiniteError& e) {
                halt(step, std::nan(""), std::string("phase 1: ") + e.what());
                break;
            }
        }
        if (res.halt) break;
        if (parameter_hash(gen_params) != gen_hash)
            throw PhaseIsolationError("phase 1 modified generator parameters at step " + std::to_string(step));

        // phase 2: generator against the frozen online model and teacher
        const std::uint64_t online_hash = parameter_hash(online_params);
        auto batch = draw_generator_batch(gen, spec, cfg.gen_time, cfg.batch, rng, true);
        Tensor loss;
        try {
            switch (cfg.objective) {
                case Objective::sim: {
                    auto gl = sim_generator_loss(batch, online, teacher, cfg.distance, cfg.gen_weighting, spec, sim_opts);
                    loss = gl.loss;
                    res.max_first_factor = std::max(res.max_first_factor, gl.max_first_factor);
                    if (envelope_applies && std::fabs(loss.item()) > gl.envelope * (1.0 + 1e-12))
                        ++res.envelope_violations;
                    break;
                }
                case Objective::sid:
                    loss = sid_delta_loss(batch, online, teacher, cfg.gen_weighting, spec, cfg.form);
                    break;
                case Objective::di:
                    loss = di_generator_loss(batch, online, teacher, cfg.gen_weighting, spec);
                    break;
            }
        } catch (const nn::NonFiniteError& e) {
            halt(step, std::nan(""), std::string("phase 2: ") + e.what());
            break;
        }
        const double lv = loss.item();
        res.max_abs_gen_loss = std::max(res.max_abs_gen_loss, std::fabs(lv));
        if (std::fabs(lv) > cfg.halt_threshold) {
            halt(step, lv, "phase 2: generator loss exceeds halt threshold");
            break;
        }
        try {
            gen_opt.step(nn::backward(loss));
        } catch (const nn::NonFiniteError& e) {
            halt(step, lv, std::string("phase 2: ") + e.what());
            break;
        }
        if (parameter_hash(online_params) != online_hash)
            throw PhaseIsolationError("phase 2 modified online parameters at step " + std::to_string(step));
        p2_sum += lv;
        ++p2_n;
        res.steps_done = step;
        if ((cfg.eval_interval && step % cfg.eval_interval == 0) || step == cfg.steps) emit(step);
    }
    if (res.halt && (p1_n || p2_n)) emit(res.steps_done);
    if (parameter_hash(teacher.parameters()) != teacher_hash)
        throw PhaseIsolationError("teacher parameters changed during distillation");
    return res;
}

} // namespace sim::distill
