#include <cmath>

#include "doctest.h"
#include "fd_oracle.hpp"
#include "sim/distill.hpp"
#include "sim/nn/autograd.hpp"
#include "sim/nn/ops.hpp"

using namespace sim;
using namespace sim::distill;
using diffusion::DiffusionSpec;
using diffusion::WeightingFn;
using distances::DistanceFn;
using oracles::Mat;
using oracles::Vec;

namespace {

nn::MlpConfig den_cfg(std::size_t w = 16) {
    return {{2, w, w, 2}, nn::Activation::silu, nn::TimeConditioning::log_t};
}

nn::MlpConfig gen_cfg(std::size_t w = 16) { return {{2, w, w, 2}, nn::Activation::silu}; }

std::vector<DistanceFn> all_distances() {
    return {DistanceFn::l2(),     DistanceFn::power(4),       DistanceFn::exp_power(2, 0.3),
            DistanceFn::l1(),     DistanceFn::huber(0.5),     DistanceFn::pseudo_huber(0.5)};
}

std::vector<double> flat_grad(const nn::Gradients& g, const std::vector<Tensor>& params) {
    std::vector<double> out;
    for (const auto& p : params) {
        auto v = g.of(p);
        out.insert(out.end(), v.begin(), v.end());
    }
    return out;
}

double max_abs(const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::fabs(x));
    return m;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
    return m;
}

// Returns a fixed point for every input row.
class ConstantDenoiser final : public ScoreModel {
public:
    explicit ConstantDenoiser(std::vector<double> v) : v_(std::move(v)) {}
    Tensor denoise(const Tensor& xt, std::span<const double>, bool) const override {
        std::vector<double> out;
        for (std::size_t i = 0; i < xt.dim(0); ++i) out.insert(out.end(), v_.begin(), v_.end());
        return Tensor::from(xt.shape(), out);
    }
    std::unique_ptr<ScoreModel> clone() const override { return std::make_unique<ConstantDenoiser>(v_); }
    std::string describe() const override { return "constant"; }

private:
    std::vector<double> v_;
};

// Exact mixture denoiser plus a trainable offset.
class OffsetDenoiser final : public ScoreModel {
public:
    explicit OffsetDenoiser(oracles::GmmSpec g) : g_(std::move(g)), b_(Tensor::zeros({g_.dim()}, true)) {}
    Tensor denoise(const Tensor& xt, std::span<const double> t, bool track) const override {
        return nn::add(oracles::gmm_denoiser(g_, xt, t), nn::broadcast_rows(track ? b_ : b_.detach(), xt.dim(0)));
    }
    std::vector<Tensor> parameters() const override { return {b_}; }
    std::unique_ptr<ScoreModel> clone() const override { return std::make_unique<OffsetDenoiser>(g_); }
    std::string describe() const override { return "offset"; }
    const Tensor& offset() const { return b_; }

private:
    oracles::GmmSpec g_;
    Tensor b_;
};

// A model whose outputs enter as constants (no gradient into x_t).
class FrozenOutput final : public ScoreModel {
public:
    explicit FrozenOutput(const ScoreModel& m) : m_(m) {}
    Tensor denoise(const Tensor& xt, std::span<const double> t, bool) const override {
        return m_.denoise(xt, t, false).detach();
    }
    Tensor score(const Tensor& xt, std::span<const double> t, bool) const override {
        return m_.score(xt, t, false).detach();
    }
    std::unique_ptr<ScoreModel> clone() const override { return std::make_unique<FrozenOutput>(m_); }
    std::string describe() const override { return "frozen"; }

private:
    const ScoreModel& m_;
};

// tr Cov(x0 | x_t) under the diffused isotropic mixture
double posterior_trace(const oracles::GmmSpec& g, const Vec& x, double t) {
    const Vec gam = oracles::gmm_responsibilities(g, x, t);
    const double d = static_cast<double>(x.size());
    Vec mean = Vec::Zero(x.size());
    double second = 0.0;
    for (std::size_t i = 0; i < g.components(); ++i) {
        const double s2 = g.stds[i] * g.stds[i], t2 = t * t;
        const Vec m = (s2 * x + t2 * g.means[i]) / (s2 + t2);
        second += gam(static_cast<Eigen::Index>(i)) * (d * s2 * t2 / (s2 + t2) + m.squaredNorm());
        mean += gam(static_cast<Eigen::Index>(i)) * m;
    }
    return second - mean.squaredNorm();
}

struct MeanSe {
    double mean = 0.0, se = 0.0;
};

MeanSe mean_se(const std::vector<double>& v) {
    MeanSe r;
    for (double x : v) r.mean += x;
    r.mean /= static_cast<double>(v.size());
    double s = 0.0;
    for (double x : v) s += (x - r.mean) * (x - r.mean);
    r.se = std::sqrt(s / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
    return r;
}

} // namespace

TEST_CASE("NetDenoiser: edm preconditioning with a zero output layer is the c_skip shrinkage") {
    Rng rng(1);
    auto cfg = den_cfg();
    cfg.zero_final = true;
    NetDenoiser d(cfg, Preconditioning::edm, 0.5, rng);
    auto x = Tensor::matrix({{1.0, -2.0}, {0.5, 3.0}});
    std::vector<double> t{0.5, 2.0};
    auto out = d.denoise(x, t);
    CHECK(out.at(0, 0) == doctest::Approx(0.25 / 0.5 * 1.0));
    CHECK(out.at(1, 1) == doctest::Approx(0.25 / 4.25 * 3.0));
    auto s = d.score(x, t);
    CHECK(s.at(0, 0) == doctest::Approx((0.5 - 1.0) / 0.25));

    nn::MlpConfig bad{{2, 8, 2}, nn::Activation::silu};
    CHECK_THROWS(NetDenoiser(bad, Preconditioning::edm, 0.5, rng));
    nn::MlpConfig bad_width{{2, 8, 3}, nn::Activation::silu, nn::TimeConditioning::log_t};
    CHECK_THROWS(NetDenoiser(bad_width, Preconditioning::none, 0.5, rng));
}

TEST_CASE("AnalyticModel: score and denoiser agree through Tweedie") {
    auto ring = oracles::GmmSpec::ring(8, 4.0, 0.3);
    AnalyticModel m(ring);
    Rng rng(2);
    auto x = oracles::sample(ring, rng, 20);
    std::vector<double> t(20);
    for (auto& v : t) v = std::exp(rng.normal());
    auto a = m.score(x, t);
    auto b = diffusion::score_from_denoiser(m.denoise(x, t), x, t);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.at(i) == doctest::Approx(b.at(i)).epsilon(1e-10));
}

TEST_CASE("LinearGeneratorModel: theta gradient ordering matches FD over theta") {
    Mat a(2, 3);
    a << 1.0, 0.2, -0.4, 0.3, 0.9, 0.1;
    oracles::LinearGenerator g0{a, Vec(Eigen::Vector2d(0.5, -0.3))};
    LinearGeneratorModel m(g0);
    CHECK(m.current().theta() == g0.theta());
    auto z = Tensor::matrix({{0.3, -1.0, 0.5}, {1.2, 0.4, -0.7}});
    auto r = Tensor::matrix({{0.7, -0.2}, {0.1, 0.9}});
    auto f = [&](const LinearGeneratorModel& mm) { return nn::sum(nn::mul(nn::square(mm.generate(z)), r)); };
    auto grad = m.theta_gradient(nn::backward(f(m)));
    auto fd = testing_fd::central_gradient(
        [&](const std::vector<double>& th) {
            return f(LinearGeneratorModel(oracles::LinearGenerator::from_theta(th, 2, 3))).item();
        },
        g0.theta());
    CHECK(testing_fd::max_rel_err(grad, fd) <= 1e-8);
}

TEST_CASE("dsm_loss: constant denoiser at the single datum gives zero loss") {
    const std::vector<double> datum{0.7, -1.3};
    std::vector<double> rows;
    for (int i = 0; i < 16; ++i) rows.insert(rows.end(), datum.begin(), datum.end());
    Rng rng(3);
    auto loss = dsm_loss(ConstantDenoiser(datum), Tensor::from({16, 2}, rows), DiffusionSpec{},
                         diffusion::edm_time(), WeightingFn::edm(), rng);
    CHECK(loss.item() == 0.0);
}

TEST_CASE("dsm_loss: rejects undetached data and sid weighting") {
    Rng rng(4);
    NetDenoiser d(den_cfg(), Preconditioning::edm, 0.5, rng);
    auto live = Tensor::from({2, 2}, {1, 2, 3, 4}, true);
    CHECK_THROWS(dsm_loss(d, live, {}, diffusion::edm_time(), WeightingFn::edm(), rng));
    CHECK_THROWS(dsm_loss(d, live.detach(), {}, diffusion::edm_time(), WeightingFn::sid(2), rng));
}

TEST_CASE("dsm_loss: the exact posterior mean attains the irreducible posterior variance") {
    auto ring = oracles::GmmSpec::ring(8, 4.0, 0.3);
    OffsetDenoiser model(ring);
    const DiffusionSpec spec;
    const auto td = diffusion::edm_time();
    Rng rng(5);
    std::vector<double> losses, g0, g1;
    for (int k = 0; k < 400; ++k) {
        auto x0 = oracles::sample(ring, rng, 256);
        auto loss = dsm_loss(model, x0, spec, td, WeightingFn::one(), rng);
        auto g = nn::backward(loss).of(model.offset());
        losses.push_back(loss.item());
        g0.push_back(g[0]);
        g1.push_back(g[1]);
    }
    // independent estimate of E tr Cov(x0 | x_t)
    std::vector<double> oracle;
    for (int k = 0; k < 100000; ++k) {
        auto x0 = oracles::sample(ring, rng, 1);
        const double t = diffusion::sample_time(td, spec, rng);
        Vec xt(2);
        xt << x0.at(0, 0) + t * rng.normal(), x0.at(0, 1) + t * rng.normal();
        oracle.push_back(posterior_trace(ring, xt, t));
    }
    const auto l = mean_se(losses), o = mean_se(oracle);
    CHECK(std::fabs(l.mean - o.mean) <= 3.0 * std::hypot(l.se, o.se));
    for (const auto& g : {g0, g1}) {
        const auto s = mean_se(g);
        CHECK(std::fabs(s.mean) <= 3.0 * s.se);
    }
}

TEST_CASE("dsm_loss: denoiser and score forms agree on identical draws") {
    Rng init(6);
    NetDenoiser d(den_cfg(), Preconditioning::edm, 0.5, init);
    auto x0 = oracles::sample(oracles::GmmSpec::ring(8, 4.0, 0.3), init, 64);
    Rng a(7), b(7);
    auto la = dsm_loss(d, x0, {}, diffusion::edm_time(), WeightingFn::edm(), a, Form::denoiser);
    auto lb = dsm_loss(d, x0, {}, diffusion::edm_time(), WeightingFn::edm(), b, Form::score);
    CHECK(la.item() == doctest::Approx(lb.item()).epsilon(1e-9));
}

TEST_CASE("sim_generator_loss: fixed point when the online model is the teacher") {
    Rng rng(8);
    MlpGenerator gen(gen_cfg(), rng);
    NetDenoiser net_teacher(den_cfg(), Preconditioning::edm, 0.5, rng);
    AnalyticModel gmm_teacher(oracles::GmmSpec::ring(8, 4.0, 0.3));
    const DiffusionSpec spec;
    for (const ScoreModel* teacher : std::vector<const ScoreModel*>{&net_teacher, &gmm_teacher}) {
        auto online = teacher->clone();
        for (const auto& d : all_distances())
            for (Form form : {Form::denoiser, Form::score})
                for (bool detach : {false, true}) {
                    INFO(teacher->describe(), " ", distances::to_string(d.kind), " ", to_string(form), " ", detach);
                    auto batch = draw_generator_batch(gen, spec, diffusion::sim_time(), 64, rng);
                    auto gl = sim_generator_loss(batch, *online, *teacher, d, WeightingFn::one(), spec,
                                                 {form, detach});
                    CHECK(gl.loss.item() == 0.0);
                    auto g = flat_grad(nn::backward(gl.loss), gen.parameters());
                    // the two cancelling score paths carry this much gradient each
                    FrozenOutput frozen(*teacher);
                    auto one_path = sim_generator_loss(batch, *online, frozen, d, WeightingFn::one(), spec,
                                                       {form, detach});
                    const double scale = max_abs(flat_grad(nn::backward(one_path.loss), gen.parameters()));
                    CHECK(max_abs(g) <= 1e-12 * std::max(1.0, scale));
                }
    }
}

TEST_CASE("sim_generator_loss: generic l2 equals twice the dedicated delta loss") {
    Rng rng(9);
    MlpGenerator gen(gen_cfg(), rng);
    NetDenoiser teacher(den_cfg(), Preconditioning::edm, 0.5, rng);
    NetDenoiser online(den_cfg(), Preconditioning::edm, 0.5, rng);
    const DiffusionSpec spec;
    for (Form form : {Form::denoiser, Form::score})
        for (auto w : {WeightingFn::one(), WeightingFn::edm(), WeightingFn::sid(2)})
            for (int rep = 0; rep < 5; ++rep) {
                Rng a = rng.split(static_cast<std::uint64_t>(rep));
                auto batch = draw_generator_batch(gen, spec, diffusion::edm_time(), 128, a);
                auto generic = sim_generator_loss(batch, online, teacher, DistanceFn::l2(), w, spec, {form, false});
                auto delta = sid_delta_loss(batch, online, teacher, w, spec, form);
                CHECK(generic.loss.item() == doctest::Approx(2.0 * delta.item()).epsilon(1e-12));
                auto ga = flat_grad(nn::backward(generic.loss), gen.parameters());
                auto gb = flat_grad(nn::backward(delta), gen.parameters());
                for (auto& v : gb) v *= 2.0;
                CHECK(max_abs_diff(ga, gb) <= 1e-12 * max_abs(ga));
            }
}

TEST_CASE("sim_generator_loss: pseudo-Huber loss is bounded by the envelope") {
    Rng rng(10);
    MlpGenerator gen(gen_cfg(), rng);
    NetDenoiser online(den_cfg(), Preconditioning::edm, 0.5, rng);
    AnalyticModel teacher(oracles::GmmSpec::ring(8, 4.0, 0.3));
    for (Form form : {Form::denoiser, Form::score})
        for (int rep = 0; rep < 20; ++rep) {
            auto batch = draw_generator_batch(gen, {}, diffusion::sim_time(), 64, rng);
            auto gl = sim_generator_loss(batch, online, teacher, DistanceFn::pseudo_huber(0.1), WeightingFn::one(), {},
                                         {form, false});
            CHECK(gl.max_first_factor < 1.0);
            CHECK(std::fabs(gl.loss.item()) <= gl.envelope);
        }
}

TEST_CASE("sim_generator_loss: linear-Gaussian gradient matches CRN finite differences of the divergence") {
    Mat a(2, 2);
    a << 1.2, 0.1, -0.2, 0.8;
    const oracles::LinearGenerator p0{a, Vec(Eigen::Vector2d(0.6, -0.4))};
    const oracles::TargetSpec q = oracles::GaussianSpec::standard(2);
    const std::vector<double> grid{0.5, 1.0, 2.0};
    const DiffusionSpec spec;
    for (const auto& d : {DistanceFn::l2(), DistanceFn::pseudo_huber(0.5)}) {
        INFO(distances::to_string(d.kind));
        LinearGeneratorModel gen(p0);
        AnalyticModel online(p0), teacher(std::get<oracles::GaussianSpec>(q));
        // autodiff side: chunk means over draws cycling through the grid
        const std::size_t chunks = 40, per = 1500;
        std::vector<std::vector<double>> g(6);
        Rng rng(11);
        for (std::size_t c = 0; c < chunks; ++c) {
            std::vector<double> t(per);
            for (std::size_t i = 0; i < per; ++i) t[i] = grid[i % grid.size()];
            auto batch = draw_generator_batch(gen, t, rng);
            auto gl = sim_generator_loss(batch, online, teacher, d, WeightingFn::one(), spec, {Form::score, false});
            auto th = gen.theta_gradient(nn::backward(gl.loss));
            for (std::size_t k = 0; k < 6; ++k) g[k].push_back(th[k]);
        }
        // FD side: the sampling law stays at p0, common random numbers
        const double h = 1e-4;
        const std::size_t n_mc = 20000;
        for (std::size_t k = 0; k < 6; ++k) {
            auto th = p0.theta();
            th[k] += h;
            auto plus = oracles::divergence_terms(oracles::LinearGenerator::from_theta(th, 2, 2), q, d,
                                                  WeightingFn::one(), grid, n_mc, Rng(12), spec, &p0);
            th[k] -= 2 * h;
            auto minus = oracles::divergence_terms(oracles::LinearGenerator::from_theta(th, 2, 2), q, d,
                                                   WeightingFn::one(), grid, n_mc, Rng(12), spec, &p0);
            std::vector<double> diff(plus.size());
            for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = (plus[i] - minus[i]) / (2 * h);
            const auto fd = oracles::grid_mean(diff, grid.size());
            const auto ad = mean_se(g[k]);
            INFO("coord ", k, " fd ", fd.value, " +- ", fd.std_error, " ad ", ad.mean, " +- ", ad.se);
            CHECK(std::fabs(fd.value - ad.mean) <= 3.0 * std::hypot(ad.se, fd.std_error));
        }
    }
}

TEST_CASE("di_generator_loss: zero when the online score is the teacher's, and pulls p toward q in 1-D") {
    Rng rng(13);
    MlpGenerator gen(gen_cfg(), rng);
    AnalyticModel teacher(oracles::GmmSpec::ring(8, 4.0, 0.3));
    auto batch = draw_generator_batch(gen, {}, diffusion::sim_time(), 64, rng);
    auto loss = di_generator_loss(batch, teacher, teacher, WeightingFn::one(), {});
    CHECK(max_abs(flat_grad(nn::backward(loss), gen.parameters())) == 0.0);

    for (double theta : {-1.5, -0.3, 0.4, 2.0}) {
        oracles::LinearGenerator p{Mat::Identity(1, 1), Vec::Constant(1, theta)};
        LinearGeneratorModel g1(p);
        AnalyticModel online(p), q(oracles::GaussianSpec::standard(1));
        auto b = draw_generator_batch(g1, {}, diffusion::edm_time(), 256, rng);
        auto th = g1.theta_gradient(nn::backward(di_generator_loss(b, online, q, WeightingFn::one(), {})));
        CHECK(th[1] * theta > 0.0);
    }
}

TEST_CASE("DistillConfig presets and validation") {
    const DiffusionSpec spec;
    auto desk = DistillConfig::desk_2d();
    CHECK_NOTHROW(desk.validate(spec));
    CHECK(desk.batch == 512);
    CHECK(desk.ratio == 2);
    CHECK(desk.distance.kind == DistanceFn::Kind::pseudo_huber);
    CHECK(desk.distance.c == doctest::Approx(0.1 * std::sqrt(2.0)));
    auto paper = DistillConfig::paper_table3();
    CHECK(paper.gen_lr == 1e-5);
    CHECK(paper.score_lr == 1e-5);
    CHECK(paper.batch == 256);
    CHECK(paper.adam_beta1 == 0.0);
    CHECK(paper.adam_beta2 == 0.999);

    auto bad = desk;
    bad.ratio = 0;
    CHECK_THROWS(bad.validate(spec));
    bad = desk;
    bad.batch = 1;
    CHECK_THROWS(bad.validate(spec));
    bad = desk;
    bad.gen_lr = 0.0;
    CHECK_THROWS(bad.validate(spec));
    bad = desk;
    bad.objective = Objective::di;
    CHECK_THROWS(bad.validate(spec));
    bad.form = Form::score;
    CHECK_NOTHROW(bad.validate(spec));
}

namespace {

struct Setup {
    Rng rng{14};
    AnalyticModel teacher{oracles::GmmSpec::ring(8, 4.0, 0.3)};
    MlpGenerator gen{gen_cfg(), rng};
    NetDenoiser online{den_cfg(), Preconditioning::edm, 0.5, rng};
    DistillConfig cfg = [] {
        auto c = DistillConfig::desk_2d();
        c.batch = 64;
        c.steps = 20;
        c.eval_interval = 5;
        return c;
    }();
};

} // namespace

TEST_CASE("run_distillation: zero steps leaves the generator unchanged") {
    Setup s;
    s.cfg.steps = 0;
    auto res = run_distillation(s.cfg, {}, s.teacher, s.gen, s.online, Rng(1));
    CHECK(parameter_hash(res.generator->parameters()) == parameter_hash(s.gen.parameters()));
    CHECK(res.rows.empty());
    CHECK(res.steps_done == 0);
}

TEST_CASE("run_distillation: deterministic given the seed, and phases touch only their own parameters") {
    Setup s;
    auto eval = [](const Generator& g, metrics::MetricRow& row) {
        Rng r(row.step);
        row.mmd = g.sample(r, 4).at(0, 0);
    };
    auto a = run_distillation(s.cfg, {}, s.teacher, s.gen, s.online, Rng(2), eval);
    auto b = run_distillation(s.cfg, {}, s.teacher, s.gen, s.online, Rng(2), eval);
    REQUIRE(a.rows.size() == 4);
    for (std::size_t i = 0; i < a.rows.size(); ++i) {
        CHECK(a.rows[i].step == 5 * (i + 1));
        CHECK(a.rows[i].phase1_loss == b.rows[i].phase1_loss);
        CHECK(a.rows[i].phase2_loss == b.rows[i].phase2_loss);
        CHECK(a.rows[i].mmd == b.rows[i].mmd);
        CHECK(a.rows[i].seconds == 0.0);
    }
    CHECK(parameter_hash(a.generator->parameters()) == parameter_hash(b.generator->parameters()));
    CHECK(parameter_hash(a.online->parameters()) == parameter_hash(b.online->parameters()));
    CHECK(parameter_hash(a.generator->parameters()) != parameter_hash(s.gen.parameters()));
    // inputs are not mutated
    auto c = run_distillation(s.cfg, {}, s.teacher, s.gen, s.online, Rng(2), eval);
    CHECK(parameter_hash(c.generator->parameters()) == parameter_hash(a.generator->parameters()));
    CHECK(a.envelope_violations == 0);
}

TEST_CASE("run_distillation: online model starts from a matching network teacher") {
    Setup s;
    NetDenoiser net_teacher(den_cfg(), Preconditioning::edm, 0.5, s.rng);
    s.cfg.steps = 0;
    auto res = run_distillation(s.cfg, {}, net_teacher, s.gen, s.online, Rng(3));
    CHECK(parameter_hash(res.online->parameters()) == parameter_hash(net_teacher.parameters()));
    auto res2 = run_distillation(s.cfg, {}, s.teacher, s.gen, s.online, Rng(3));
    CHECK(parameter_hash(res2.online->parameters()) == parameter_hash(s.online.parameters()));
}

TEST_CASE("run_distillation: divergence halt records a snapshot") {
    Setup s;
    s.cfg.halt_threshold = 1e-9;
    auto res = run_distillation(s.cfg, {}, s.teacher, s.gen, s.online, Rng(4));
    REQUIRE(res.halt.has_value());
    CHECK(res.halt->step == 1);
    CHECK(res.halt->reason.find("halt threshold") != std::string::npos);
    CHECK(res.halt->generator_param_norms.size() == s.gen.parameters().size());
    CHECK(res.steps_done == 0);
}

TEST_CASE("run_distillation: sid and di objectives run") {
    Setup s;
    s.cfg.objective = Objective::sid;
    CHECK_FALSE(run_distillation(s.cfg, {}, s.teacher, s.gen, s.online, Rng(5)).halt);
    s.cfg.objective = Objective::di;
    s.cfg.form = Form::score;
    CHECK_FALSE(run_distillation(s.cfg, {}, s.teacher, s.gen, s.online, Rng(5)).halt);
}
