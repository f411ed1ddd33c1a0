#include "sim/harness/runs.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <limits>
#include <numbers>

#include "sim/harness/checkpoint.hpp"
#include "sim/harness/io.hpp"
#include "sim/harness/svg.hpp"
#include "sim/log.hpp"
#include "sim/metrics.hpp"
#include "sim/nn/adam.hpp"
#include "sim/nn/autograd.hpp"

namespace sim::harness {

using nn::Tensor;

namespace {

// Stream ids under Rng(cfg.seed).
enum Stream : std::uint64_t {
    kTeacherInit = 11,
    kTeacherTrain = 12,
    kValidationData = 13,
    kValidationNoise = 14,
    kModelInit = 21,
    kDistillTrain = 22,
    kEvalReference = 23,
    kEvalSamples = 24,
    kBeforeSamples = 25,
    kFinalEval = 26,
};

constexpr std::size_t kPlotSamples = 2000;

nn::MlpConfig mlp_config(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out, nn::Activation act,
                         nn::TimeConditioning cond) {
    nn::MlpConfig c;
    c.widths.push_back(in);
    c.widths.insert(c.widths.end(), hidden.begin(), hidden.end());
    c.widths.push_back(out);
    c.activation = act;
    c.conditioning = cond;
    return c;
}

std::unique_ptr<distill::ScoreModel> make_teacher(const RunConfig& cfg) {
    if (cfg.teacher.kind == TeacherSpec::Kind::gmm) return std::make_unique<distill::AnalyticModel>(cfg.teacher.gmm);
    auto net = denoiser_from_checkpoint(load_checkpoint(cfg.teacher.checkpoint));
    if (net.net().input_width() != cfg.dim())
        throw ConfigError("teacher.checkpoint", "teacher dimension " + std::to_string(net.net().input_width()) +
                                                    " differs from the data dimension " + std::to_string(cfg.dim()));
    return std::make_unique<distill::NetDenoiser>(std::move(net));
}

std::unique_ptr<distill::Generator> make_generator(const RunConfig& cfg, const distill::ScoreModel& teacher, Rng& rng) {
    const auto& g = cfg.generator;
    if (g.kind == GeneratorSpec::Kind::mlp)
        return std::make_unique<distill::MlpGenerator>(
            mlp_config(g.latent_dim, g.hidden, cfg.dim(), g.activation, nn::TimeConditioning::none), rng);
    if (auto* net = dynamic_cast<const distill::NetDenoiser*>(&teacher))
        return std::make_unique<distill::DenoiserGenerator>(*net, g.t_star);
    return std::make_unique<distill::DenoiserGenerator>(make_denoiser(cfg.online, cfg.dim(), cfg.diffusion.sigma_data, rng),
                                                        g.t_star);
}

std::vector<double> column(const std::vector<metrics::MetricRow>& rows, double metrics::MetricRow::*field) {
    std::vector<double> v;
    for (const auto& r : rows) v.push_back(r.*field);
    return v;
}

} // namespace

// ---------------------------------------------------------------------------

DataSampler::DataSampler(const DataSpec& spec) : spec_(spec) {
    if (spec_.kind == DataSpec::Kind::csv) points_ = read_points_csv(spec_.path);
}

std::size_t DataSampler::dim() const {
    switch (spec_.kind) {
        case DataSpec::Kind::gmm: return spec_.gmm.dim();
        case DataSpec::Kind::gaussian: return spec_.gaussian.dim();
        case DataSpec::Kind::csv: return points_.dim(1);
    }
    return 0;
}

const oracles::GmmSpec* DataSampler::gmm() const { return spec_.kind == DataSpec::Kind::gmm ? &spec_.gmm : nullptr; }

Tensor DataSampler::sample(Rng& rng, std::size_t n) const {
    switch (spec_.kind) {
        case DataSpec::Kind::gmm: return oracles::sample(spec_.gmm, rng, n);
        case DataSpec::Kind::gaussian: return oracles::sample(spec_.gaussian, rng, n);
        case DataSpec::Kind::csv: break;
    }
    const std::size_t d = points_.dim(1), rows = points_.dim(0);
    std::vector<double> out(n * d);
    const auto src = points_.data();
    for (std::size_t i = 0; i < n; ++i) {
        const auto r = rng.uniform_index(rows);
        std::copy(src.begin() + static_cast<std::ptrdiff_t>(r * d), src.begin() + static_cast<std::ptrdiff_t>((r + 1) * d),
                  out.begin() + static_cast<std::ptrdiff_t>(i * d));
    }
    return Tensor::from({n, d}, std::move(out));
}

// ---------------------------------------------------------------------------

distill::NetDenoiser make_denoiser(const DenoiserSpec& spec, std::size_t dim, double sigma_data, Rng& rng) {
    return distill::NetDenoiser(mlp_config(dim, spec.hidden, dim, spec.activation, nn::TimeConditioning::log_t),
                                spec.preconditioning, sigma_data, rng);
}

double teacher_validation_loss(const distill::ScoreModel& model, const RunConfig& cfg) {
    const Rng root(cfg.seed);
    Rng data_rng = root.split(kValidationData);
    Rng noise_rng = root.split(kValidationNoise);
    const DataSampler data(cfg.data);
    const Tensor x0 = data.sample(data_rng, cfg.teacher_training.validation_size);
    return distill::dsm_loss(model, x0, cfg.diffusion, cfg.distill.score_time, cfg.distill.score_weighting, noise_rng)
        .item();
}

TeacherResult train_teacher(const RunConfig& cfg, const std::function<void(const TeacherRow&)>& on_row) {
    const Rng root(cfg.seed);
    Rng init = root.split(kTeacherInit);
    Rng rng = root.split(kTeacherTrain);
    const DataSampler data(cfg.data);
    if (data.dim() != cfg.dim())
        throw ConfigError("data", "data dimension " + std::to_string(data.dim()) + " differs from " +
                                      std::to_string(cfg.dim()));

    TeacherResult res{make_denoiser(cfg.teacher_net, data.dim(), cfg.diffusion.sigma_data, init), 0.0, {}};
    nn::Adam adam(res.model.parameters(), res.model.parameter_names(), {cfg.teacher_training.lr, 0.9, 0.999, 1e-8});
    const auto& tt = cfg.teacher_training;
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t step = 1; step <= tt.steps; ++step) {
        if (tt.schedule == TeacherTraining::Schedule::cosine)
            adam.set_lr(tt.lr * 0.5 *
                        (1.0 + std::cos(std::numbers::pi * static_cast<double>(step - 1) / static_cast<double>(tt.steps))));
        const Tensor x0 = data.sample(rng, tt.batch);
        const Tensor loss = distill::dsm_loss(res.model, x0, cfg.diffusion, cfg.distill.score_time,
                                              cfg.distill.score_weighting, rng);
        const double v = loss.item();
        if (!std::isfinite(v)) throw nn::NonFiniteError("teacher training: DSM loss is " + std::to_string(v) +
                                                        " at step " + std::to_string(step));
        adam.step(nn::backward(loss));
        sum += v;
        ++n;
        const bool log = (cfg.eval.interval > 0 && step % cfg.eval.interval == 0) || step == tt.steps;
        if (log) {
            TeacherRow row{step, sum / static_cast<double>(n), teacher_validation_loss(res.model, cfg)};
            res.rows.push_back(row);
            if (on_row) on_row(row);
            sum = 0.0;
            n = 0;
        }
    }
    res.validation_loss = teacher_validation_loss(res.model, cfg);
    return res;
}

// ---------------------------------------------------------------------------

Tensor sample_reference(const RunConfig& cfg, Rng& rng, std::size_t n) {
    if (cfg.teacher.kind == TeacherSpec::Kind::gmm) return oracles::sample(cfg.teacher.gmm, rng, n);
    return DataSampler(cfg.data).sample(rng, n);
}

const oracles::GmmSpec* coverage_mixture(const RunConfig& cfg) {
    if (cfg.teacher.kind == TeacherSpec::Kind::gmm) return &cfg.teacher.gmm;
    if (cfg.data.kind == DataSpec::Kind::gmm) return &cfg.data.gmm;
    return nullptr;
}

FinalMetrics evaluate_generator(const distill::Generator& gen, const RunConfig& cfg, Rng rng) {
    FinalMetrics m;
    m.samples = cfg.eval.final_samples;
    Rng gen_rng = rng.split(1), ref_rng = rng.split(2);
    const Tensor x = gen.sample(gen_rng, m.samples);
    const Tensor ref = sample_reference(cfg, ref_rng, m.samples);
    m.mmd = metrics::mmd_rbf(x, ref);
    m.w2_gauss = metrics::gaussian_w2(x, ref);
    if (const auto* mix = coverage_mixture(cfg)) {
        const auto cov = metrics::mode_coverage(x, *mix, cfg.eval.coverage_radius, cfg.eval.coverage_min_fraction);
        m.mode_coverage = cov.fraction;
        m.modes_covered = cov.covered;
        m.mode_counts = cov.counts;
    } else {
        m.mode_coverage = std::numeric_limits<double>::quiet_NaN();
    }
    return m;
}

nlohmann::json to_json(const FinalMetrics& m) {
    return {{"mmd", m.mmd},
            {"w2_gauss", m.w2_gauss},
            {"mode_coverage", m.mode_coverage},
            {"modes_covered", m.modes_covered},
            {"mode_counts", m.mode_counts},
            {"samples", m.samples}};
}

void write_plots(const std::string& dir) {
    const auto rows = read_metrics_csv(join_path(dir, "metrics.csv"));
    std::vector<double> x;
    for (const auto& r : rows) x.push_back(static_cast<double>(r.step));
    svg::write(join_path(dir, "mmd.svg"),
               svg::line_chart("MMD^2 to the reference", "generator step", "MMD^2",
                               {{"mmd", x, column(rows, &metrics::MetricRow::mmd)}}, true));
    svg::write(join_path(dir, "w2.svg"),
               svg::line_chart("Gaussian W2 to the reference", "generator step", "W2",
                               {{"w2_gauss", x, column(rows, &metrics::MetricRow::w2_gauss)}}));
    svg::write(join_path(dir, "losses.svg"),
               svg::line_chart("Training losses", "generator step", "loss",
                               {{"phase1 (DSM)", x, column(rows, &metrics::MetricRow::phase1_loss)},
                                {"phase2 (generator)", x, column(rows, &metrics::MetricRow::phase2_loss)}}));
    svg::write(join_path(dir, "coverage.svg"),
               svg::line_chart("Mode coverage", "generator step", "fraction of modes",
                               {{"coverage", x, column(rows, &metrics::MetricRow::mode_coverage)}}));

    std::vector<svg::PointSet> sets;
    for (const auto& [file, name] : {std::pair{"reference.csv", "reference"}, std::pair{"samples_before.csv", "before"},
                                     std::pair{"samples_after.csv", "after"}}) {
        const auto path = join_path(dir, file);
        if (std::filesystem::exists(path)) sets.push_back({name, read_points_csv(path)});
    }
    if (!sets.empty() && sets.front().points.dim(1) >= 2)
        svg::write(join_path(dir, "samples.svg"), svg::scatter("Samples before and after distillation", sets));
}

DistillRun run_distill(const RunConfig& cfg, const std::string& out_dir, const RunOutputs& outputs) {
    cfg.validate();
    ensure_directory(out_dir);
    auto echo = to_json(cfg);
    echo["output_dir"] = out_dir;
    write_json(join_path(out_dir, "config.json"), echo);

    const Rng root(cfg.seed);
    Rng init = root.split(kModelInit);
    const auto teacher = make_teacher(cfg);
    auto online = make_denoiser(cfg.online, cfg.dim(), cfg.diffusion.sigma_data, init);
    auto gen = make_generator(cfg, *teacher, init);
    const std::string hash = config_hash(cfg);

    if (!outputs.resume_dir.empty()) {
        const auto gck = load_checkpoint(join_path(outputs.resume_dir, "generator.ckpt"));
        const auto ock = load_checkpoint(join_path(outputs.resume_dir, "online.ckpt"));
        require_config_match(gck, hash, outputs.force);
        require_config_match(ock, hash, outputs.force);
        gen = generator_from_checkpoint(gck);
        online = denoiser_from_checkpoint(ock);
    }

    Rng before_rng = root.split(kBeforeSamples);
    const Tensor before = gen->sample(before_rng, kPlotSamples);

    Rng ref_rng = root.split(kEvalReference);
    const Tensor ref = sample_reference(cfg, ref_rng, cfg.eval.samples);
    const auto* mix = coverage_mixture(cfg);
    const Rng eval_root = root.split(kEvalSamples);
    auto evaluate = [&](const distill::Generator& g, metrics::MetricRow& row) {
        Rng r = eval_root.split(row.step);
        const Tensor x = g.sample(r, cfg.eval.samples);
        row.mmd = metrics::mmd_rbf(x, ref);
        row.w2_gauss = metrics::gaussian_w2(x, ref);
        row.mode_coverage = mix ? metrics::mode_coverage(x, *mix, cfg.eval.coverage_radius,
                                                         cfg.eval.coverage_min_fraction).fraction
                                : std::numeric_limits<double>::quiet_NaN();
    };

    MetricsCsv csv(join_path(out_dir, "metrics.csv"));
    distill::DistillOptions opts;
    opts.wall_clock = outputs.wall_clock;
    opts.on_row = [&](const metrics::MetricRow& r) { csv.append(r); };

    set_warning_handler([](const std::string& m) { std::fprintf(stderr, "warning: %s\n", m.c_str()); });
    DistillRun run;
    run.result = distill::run_distillation(cfg.distill, cfg.diffusion, *teacher, *gen, online, root.split(kDistillTrain),
                                           evaluate, opts);
    run.final = evaluate_generator(*run.result.generator, cfg, root.split(kFinalEval));

    nlohmann::json halt = nullptr;
    if (run.result.halt)
        halt = {{"step", run.result.halt->step},
                {"loss", run.result.halt->loss},
                {"reason", run.result.halt->reason},
                {"generator_param_norms", run.result.halt->generator_param_norms}};
    run.report = {{"check", "distill"},
                  {"experiment", cfg.experiment},
                  {"seed", cfg.seed},
                  {"rng_algorithm", std::string(Rng::kAlgorithm)},
                  {"config_hash", hash},
                  {"objective", distill::to_string(cfg.distill.objective)},
                  {"distance", to_json(cfg.distill.distance)},
                  {"steps_requested", cfg.distill.steps},
                  {"steps_done", run.result.steps_done},
                  {"halt", halt},
                  {"envelope_violations", run.result.envelope_violations},
                  {"max_abs_gen_loss", run.result.max_abs_gen_loss},
                  {"max_first_factor", run.result.max_first_factor},
                  {"final", to_json(run.final)}};
    write_json(join_path(out_dir, "reports.json"), {{"reports", nlohmann::json::array({run.report})}});

    if (outputs.checkpoints) {
        auto gck = to_checkpoint(*run.result.generator);
        auto ock = to_checkpoint(dynamic_cast<const distill::NetDenoiser&>(*run.result.online));
        for (auto* c : {&gck, &ock}) {
            c->step = run.result.steps_done;
            c->rng = root.split(kDistillTrain).state();
            c->config_hash = hash;
        }
        save_checkpoint(join_path(out_dir, "generator.ckpt"), gck);
        save_checkpoint(join_path(out_dir, "online.ckpt"), ock);
    }

    write_points_csv(join_path(out_dir, "samples_before.csv"), before);
    Rng after_rng = root.split(kBeforeSamples);
    write_points_csv(join_path(out_dir, "samples_after.csv"), run.result.generator->sample(after_rng, kPlotSamples));
    Rng plot_ref_rng = root.split(kEvalReference);
    write_points_csv(join_path(out_dir, "reference.csv"), sample_reference(cfg, plot_ref_rng, kPlotSamples));
    if (outputs.plots) write_plots(out_dir);
    return run;
}

// ---------------------------------------------------------------------------

SelfNull self_null(const RunConfig& cfg, std::size_t pairs, std::size_t n, std::uint64_t seed) {
    if (pairs < 2) throw std::invalid_argument("self_null: need at least 2 pairs");
    SelfNull s;
    s.pairs = pairs;
    s.samples = n;
    s.seed = seed;
    const Rng root(seed);
    for (std::size_t p = 0; p < pairs; ++p) {
        Rng a = root.split(2 * p), b = root.split(2 * p + 1);
        const Tensor x = sample_reference(cfg, a, n);
        const Tensor y = sample_reference(cfg, b, n);
        s.values.push_back(metrics::mmd_rbf(x, y));
    }
    s.median = metrics::quantile(s.values, 0.5);
    s.q95 = metrics::quantile(s.values, 0.95);
    s.q99 = metrics::quantile(s.values, 0.99);
    s.max = *std::max_element(s.values.begin(), s.values.end());
    return s;
}

nlohmann::json to_json(const SelfNull& s) {
    return {{"check", "self_null"},     {"pairs", s.pairs},   {"samples", s.samples},
            {"seed", s.seed},           {"rng_algorithm", std::string(Rng::kAlgorithm)},
            {"median", s.median},       {"q95", s.q95},       {"q99", s.q99},
            {"max", s.max},             {"threshold", 2.0 * s.q99}, {"values", s.values}};
}

// ---------------------------------------------------------------------------

std::string to_string(Check c) {
    switch (c) {
        case Check::gradcheck: return "gradcheck";
        case Check::score_projection: return "score_projection";
        case Check::theorem1: return "theorem1";
    }
    return "?";
}

Check check_from_string(const std::string& s) {
    if (s == "gradcheck") return Check::gradcheck;
    if (s == "score_projection") return Check::score_projection;
    if (s == "theorem1") return Check::theorem1;
    throw std::invalid_argument("unknown check '" + s + "' (gradcheck, score_projection, theorem1)");
}

namespace {

oracles::Mat mat2(double a, double b, double c, double d) {
    oracles::Mat m(2, 2);
    m << a, b, c, d;
    return m;
}

oracles::Vec vec2(double a, double b) { return oracles::Vec(Eigen::Vector2d(a, b)); }

std::vector<verify::VerificationReport> projection_battery(std::uint64_t seed, std::size_t n) {
    const Rng root(seed);
    const oracles::GaussianSpec gauss{vec2(0.5, -1.0), mat2(1.5, 0.4, 0.4, 0.7)};
    const oracles::LinearGenerator lin{mat2(2.0, 0.0, 0.0, 1.0), vec2(1.0, 0.0)};
    std::vector<verify::VerificationReport> out;
    out.push_back(verify::check_score_projection(gauss, verify::TestFunction::identity(), 1.0, n, root.split(1)));
    out.back().detail = "gaussian p, u(x) = x, t = 1";
    out.push_back(verify::check_score_projection(lin, verify::TestFunction::identity(), 0.5, n, root.split(2)));
    out.back().detail = "linear generator A = diag(2,1), b = (1,0), u(x) = x, t = 0.5";
    out.push_back(verify::check_score_projection(lin, verify::TestFunction::random_net(32, seed), 0.5, n, root.split(3)));
    out.back().detail = "linear generator A = diag(2,1), b = (1,0), frozen random tanh net u, t = 0.5";
    return out;
}

std::vector<verify::VerificationReport> theorem1_battery(std::uint64_t seed, std::size_t n, std::size_t thetas) {
    const Rng root(seed);
    const std::vector<double> grid{0.25, 0.5, 1.0, 2.0};
    const oracles::GaussianSpec gauss{vec2(0.5, -0.3), mat2(1.2, 0.3, 0.3, 0.8)};
    const oracles::GmmSpec gmm{{0.4, 0.6}, {vec2(-1.0, 0.5), vec2(1.5, -0.5)}, {0.6, 0.9}};
    const std::vector<std::pair<std::string, oracles::TargetSpec>> targets{{"gaussian", gauss}, {"gmm", gmm}};
    const std::vector<distances::DistanceFn> dists{distances::DistanceFn::l2(), distances::DistanceFn::pseudo_huber(0.5)};

    std::vector<verify::VerificationReport> out;
    std::uint64_t stream = 1000;
    for (std::size_t i = 0; i < thetas; ++i) {
        Rng tr = root.split(100 + i);
        oracles::LinearGenerator p{oracles::Mat::Identity(2, 2), oracles::Vec::Zero(2)};
        for (Eigen::Index r = 0; r < 2; ++r) {
            for (Eigen::Index c = 0; c < 2; ++c) p.A(r, c) += 0.3 * tr.normal();
            p.b(r) = 0.5 * tr.normal();
        }
        for (const auto& [tname, q] : targets)
            for (const auto& d : dists) {
                out.push_back(verify::check_theorem1(p, q, d, grid, n, 1e-4, root.split(stream++)));
                out.back().detail = d.name() + " vs " + tname + " target, theta draw " + std::to_string(i);
            }
    }
    return out;
}

} // namespace

std::vector<verify::VerificationReport> run_check(Check c, std::uint64_t seed, const VerifyOptions& opts) {
    switch (c) {
        case Check::gradcheck: return verify::gradcheck_suite(Rng(seed), opts.probes);
        case Check::score_projection: return projection_battery(seed, opts.projection_samples);
        case Check::theorem1: return theorem1_battery(seed, opts.theorem1_samples, opts.theorem1_thetas);
    }
    return {};
}

} // namespace sim::harness
