// Acceptance battery: one PASS/FAIL line per criterion. Each criterion can be
// run alone (--criterion N); artifacts and a JSON summary go to --out.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "sim/distill.hpp"
#include "sim/harness/config.hpp"
#include "sim/harness/io.hpp"
#include "sim/harness/runs.hpp"
#include "sim/log.hpp"
#include "sim/nn/autograd.hpp"
#include "sim/verify.hpp"

using namespace sim;
using namespace sim::harness;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances.
constexpr double kGradcheckTol = 1e-6;       // enforced inside gradcheck_suite
constexpr double kSidRelTol = 1e-12;
constexpr double kDsmMaxError = 0.05;
constexpr double kFixedPointRelTol = 1e-12;
// Self-null of unbiased MMD^2 between two independent 10^4-sample draws of
// the 8-mode ring (200 pairs, seed 2024; see fixtures/ring8_self_null.json).
constexpr double kRingNullQ99 = 1.0120034746694871e-03;
constexpr double kRingThreshold = 2.0 * kRingNullQ99;
constexpr double kMinModeFraction = 0.02;
// Same statistic for N(0, I) in 2-D (fixtures/gaussian_self_null.json).
constexpr double kGaussianNullQ99 = 5.797393996283419e-04;
constexpr double kGaussianThreshold = 2.0 * kGaussianNullQ99;

struct Outcome {
    bool pass = false;
    std::string summary;
    nlohmann::json detail = nlohmann::json::object();
};

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<double> flat_grad(const nn::Gradients& g, const std::vector<nn::Tensor>& params) {
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

Outcome battery(Check c, std::uint64_t seed, const VerifyOptions& opts) {
    const auto reports = run_check(c, seed, opts);
    Outcome o;
    std::size_t passed = 0, inconclusive = 0;
    nlohmann::json arr = nlohmann::json::array();
    std::string failed;
    double max_z = 0.0;
    std::size_t comparisons = 0;
    for (const auto& r : reports) {
        passed += r.pass;
        inconclusive += r.inconclusive;
        arr.push_back(verify::to_json(r));
        if (!r.pass) failed += (failed.empty() ? "" : "; ") + r.check + " " + r.detail;
        for (std::size_t i = 0; i < r.estimate.size() && i < r.std_error.size(); ++i)
            if (r.std_error[i] > 0.0) max_z = std::max(max_z, std::fabs(r.estimate[i] - r.target[i]) / r.std_error[i]);
        comparisons += r.estimate.size();
    }
    o.pass = passed == reports.size() && !reports.empty();
    o.summary = std::to_string(passed) + "/" + std::to_string(reports.size()) + " pass";
    if (inconclusive) o.summary += ", " + std::to_string(inconclusive) + " inconclusive";
    if (c == Check::theorem1)
        o.summary += ", max |z| " + fmt("%.2f", max_z) + " over " + std::to_string(comparisons) + " coordinates";
    if (!failed.empty()) o.summary += "; failed: " + failed;
    o.detail["reports"] = arr;
    o.detail["max_abs_z"] = max_z;
    return o;
}

// 1. every primitive and distance against central differences
Outcome criterion1() {
    VerifyOptions v;
    v.probes = 100;
    auto o = battery(Check::gradcheck, 1, v);
    o.summary += " (rel. err <= " + fmt("%.0e", kGradcheckTol) + ", 100 probes)";
    return o;
}

// 2. score-projection identity, three configurations at n = 10^6
Outcome criterion2() {
    VerifyOptions v;
    v.projection_samples = 1000000;
    return battery(Check::score_projection, 2, v);
}

// 3. Theorem 1 on 5 random theta x {l2, pseudo_huber(0.5)} x {gaussian, gmm}
Outcome criterion3() {
    VerifyOptions v;
    v.theorem1_samples = 20000;
    v.theorem1_thetas = 5;
    return battery(Check::theorem1, 3, v);
}

// 4. generic l2 path vs dedicated delta loss
Outcome criterion4() {
    Rng rng(4);
    const diffusion::DiffusionSpec spec;
    const nn::MlpConfig den{{2, 32, 32, 2}, nn::Activation::silu, nn::TimeConditioning::log_t};
    distill::MlpGenerator gen(nn::MlpConfig{{2, 32, 32, 2}, nn::Activation::silu}, rng);
    distill::NetDenoiser teacher(den, distill::Preconditioning::edm, 0.5, rng);
    distill::NetDenoiser online(den, distill::Preconditioning::edm, 0.5, rng);
    // Large sampled t saturates the sid weight cap; count instead of printing.
    std::size_t capped = 0;
    set_warning_handler([&](const std::string&) { ++capped; });
    double worst = 0.0;
    std::size_t cases = 0;
    for (auto form : {distill::Form::denoiser, distill::Form::score})
        for (auto w : {diffusion::WeightingFn::one(), diffusion::WeightingFn::edm(), diffusion::WeightingFn::sid(2)})
            for (std::uint64_t rep = 0; rep < 10; ++rep) {
                Rng r = rng.split(rep);
                const auto batch = distill::draw_generator_batch(gen, spec, diffusion::sim_time(), 256, r);
                const auto generic = distill::sim_generator_loss(batch, online, teacher, distances::DistanceFn::l2(), w,
                                                                 spec, {form, false});
                const auto delta = distill::sid_delta_loss(batch, online, teacher, w, spec, form);
                const auto ga = flat_grad(nn::backward(generic.loss), gen.parameters());
                auto gb = flat_grad(nn::backward(delta), gen.parameters());
                double diff = 0.0;
                for (std::size_t i = 0; i < ga.size(); ++i) diff = std::max(diff, std::fabs(ga[i] - 2.0 * gb[i]));
                worst = std::max(worst, diff / std::max(max_abs(ga), std::numeric_limits<double>::min()));
                ++cases;
            }
    set_warning_handler(nullptr);
    Outcome o;
    o.pass = worst <= kSidRelTol;
    o.summary = "max rel. err " + fmt("%.2e", worst) + " over " + std::to_string(cases) + " batches (tol " +
                fmt("%.0e", kSidRelTol) + ")";
    o.detail = {{"max_rel_err", worst}, {"batches", cases}, {"sid_weight_capped", capped}};
    return o;
}

// 5. DSM-trained denoiser vs the Gaussian posterior mean
Outcome criterion5(const fs::path& out) {
    RunConfig c = preset("desk-2d");
    c.experiment = "dsm_fidelity";
    c.seed = 5;
    c.data.kind = DataSpec::Kind::gaussian;
    c.teacher_training.steps = 20000;
    c.eval.interval = 5000;
    const auto res = train_teacher(c);

    std::vector<double> pts;
    const int n = 25;
    for (int i = 0; i < n; ++i)
        for (int k = 0; k < n; ++k) {
            pts.push_back(-3.0 + 6.0 * i / (n - 1));
            pts.push_back(-3.0 + 6.0 * k / (n - 1));
        }
    const auto x = nn::Tensor::from({static_cast<std::size_t>(n * n), 2}, pts);
    nlohmann::json per_t;
    double worst = 0.0;
    for (double t : {0.5, 1.0, 2.0}) {
        const std::vector<double> tv(x.dim(0), t);
        const auto d = res.model.denoise(x, tv, false);
        double err = 0.0;
        for (std::size_t i = 0; i < pts.size(); ++i) err = std::max(err, std::fabs(d.data()[i] - pts[i] / (1 + t * t)));
        per_t[fmt("%.1f", t)] = err;
        worst = std::max(worst, err);
    }
    ensure_directory(out.string());
    write_json((out / "dsm_fidelity.json").string(),
               {{"max_abs_error", per_t}, {"validation_loss", res.validation_loss}, {"grid", n}});
    Outcome o;
    o.pass = worst <= kDsmMaxError;
    o.summary = "max |d - x/(1+t^2)| = " + fmt("%.4f", worst) + " on [-3,3]^2 at t in {0.5,1,2} (tol " +
                fmt("%.2f", kDsmMaxError) + ")";
    o.detail = {{"max_abs_error", per_t}};
    return o;
}

RunConfig ring_run(const std::string& name, std::uint64_t seed) {
    RunConfig c = preset("desk-2d");
    c.experiment = name;
    c.seed = seed;
    c.teacher.gmm = oracles::GmmSpec::ring(8, 4.0, 0.3);
    c.data.gmm = c.teacher.gmm;
    // Chosen from pilot runs at another seed: the narrower generator jitters
    // less around the optimum at the pinned step size.
    c.generator.hidden = {32, 32};
    c.distill.steps = 20000;
    c.eval.final_samples = 10000;
    return c;
}

// 6. end-to-end distillation of the ring
Outcome criterion6(const fs::path& out) {
    const RunConfig c = ring_run("ring8_sim", 6);
    const auto run = run_distill(c, (out / "ring8_sim").string());
    const auto& f = run.final;
    std::size_t min_count = f.mode_counts.empty() ? 0 : *std::min_element(f.mode_counts.begin(), f.mode_counts.end());
    const bool cover = f.modes_covered == 8 &&
                       static_cast<double>(min_count) >= kMinModeFraction * static_cast<double>(f.samples);
    Outcome o;
    o.pass = cover && f.mmd <= kRingThreshold && !run.result.halt;
    o.summary = "modes " + std::to_string(f.modes_covered) + "/8 (min count " + std::to_string(min_count) + "), MMD^2 " +
                fmt("%.3e", f.mmd) + " vs threshold " + fmt("%.3e", kRingThreshold);
    o.detail = run.report;
    return o;
}

// 8. large generator learning rate: pseudo-Huber vs l2
Outcome criterion8(const fs::path& out) {
    auto cfg = [](const std::string& name, distances::DistanceFn d) {
        RunConfig c = ring_run(name, 8);
        c.distill.gen_lr = 10.0 * preset("desk-2d").distill.gen_lr;
        c.distill.distance = d;
        return c;
    };
    const auto ph = run_distill(cfg("lr10x_pseudo_huber", distances::DistanceFn::pseudo_huber_for_dim(2)),
                                (out / "lr10x_pseudo_huber").string());
    const auto l2 = run_distill(cfg("lr10x_l2", distances::DistanceFn::l2()), (out / "lr10x_l2").string());
    auto final_mmd = [](const DistillRun& r) {
        return std::isfinite(r.final.mmd) ? r.final.mmd : std::numeric_limits<double>::infinity();
    };
    const double m_ph = final_mmd(ph), m_l2 = final_mmd(l2);
    const bool bounded = ph.result.envelope_violations == 0 && ph.result.max_first_factor < 1.0;
    const bool no_halt = !ph.result.halt;
    Outcome o;
    o.pass = bounded && no_halt && m_ph <= m_l2;
    o.summary = std::string("pseudo_huber: envelope ") + (bounded ? "held" : "VIOLATED") + ", " +
                (no_halt ? "no halt" : "HALTED") + ", MMD^2 " + fmt("%.3e", m_ph) + "; l2: " +
                (l2.result.halt ? "halted at step " + std::to_string(l2.result.halt->step) : std::string("no halt")) +
                ", MMD^2 " + fmt("%.3e", m_l2);
    o.detail = {{"pseudo_huber", ph.report}, {"l2", l2.report}, {"mmd_pseudo_huber_le_l2", m_ph <= m_l2}};
    write_json((out / "lr10x_comparison.json").string(), o.detail);
    return o;
}

// 7. online model wired to the teacher: zero generator gradient
class FrozenOutput final : public distill::ScoreModel {
public:
    explicit FrozenOutput(const distill::ScoreModel& m) : m_(m) {}
    nn::Tensor denoise(const nn::Tensor& xt, std::span<const double> t, bool) const override {
        return m_.denoise(xt, t, false).detach();
    }
    nn::Tensor score(const nn::Tensor& xt, std::span<const double> t, bool) const override {
        return m_.score(xt, t, false).detach();
    }
    std::unique_ptr<distill::ScoreModel> clone() const override { return std::make_unique<FrozenOutput>(m_); }
    std::string describe() const override { return "frozen"; }

private:
    const distill::ScoreModel& m_;
};

Outcome criterion7() {
    Rng rng(7);
    const diffusion::DiffusionSpec spec;
    distill::MlpGenerator gen(nn::MlpConfig{{2, 32, 32, 2}, nn::Activation::silu}, rng);
    const distill::NetDenoiser net(nn::MlpConfig{{2, 32, 32, 2}, nn::Activation::silu, nn::TimeConditioning::log_t},
                                   distill::Preconditioning::edm, 0.5, rng);
    const distill::AnalyticModel gmm(oracles::GmmSpec::ring(8, 4.0, 0.3));
    const std::vector<distances::DistanceFn> tags{distances::DistanceFn::l2(),          distances::DistanceFn::power(4),
                                                  distances::DistanceFn::exp_power(2, 0.3), distances::DistanceFn::l1(),
                                                  distances::DistanceFn::huber(0.5),
                                                  distances::DistanceFn::pseudo_huber(0.5)};
    double worst = 0.0;
    nlohmann::json per_tag;
    for (const auto& d : tags) {
        double tag_worst = 0.0;
        for (const distill::ScoreModel* teacher : {static_cast<const distill::ScoreModel*>(&net),
                                                   static_cast<const distill::ScoreModel*>(&gmm)})
            for (auto form : {distill::Form::denoiser, distill::Form::score}) {
                Rng r = rng.split(11);
                const auto batch = distill::draw_generator_batch(gen, spec, diffusion::sim_time(), 256, r);
                const auto gl = distill::sim_generator_loss(batch, *teacher, *teacher, d, diffusion::WeightingFn::one(),
                                                            spec, {form, false});
                const double g = max_abs(flat_grad(nn::backward(gl.loss), gen.parameters()));
                FrozenOutput frozen(*teacher);
                const auto one = distill::sim_generator_loss(batch, *teacher, frozen, d, diffusion::WeightingFn::one(),
                                                             spec, {form, false});
                const double scale = max_abs(flat_grad(nn::backward(one.loss), gen.parameters()));
                tag_worst = std::max(tag_worst, g / std::max(1.0, scale));
            }
        per_tag[d.name()] = tag_worst;
        worst = std::max(worst, tag_worst);
    }
    Outcome o;
    o.pass = worst <= kFixedPointRelTol;
    o.summary = "max |grad| / max(1, single-path scale) = " + fmt("%.2e", worst) + " over 6 tags (tol " +
                fmt("%.0e", kFixedPointRelTol) + ")";
    o.detail = {{"per_tag", per_tag}};
    return o;
}

// 9. repeated runs and verification reports are byte-identical
Outcome criterion9(const fs::path& out) {
    RunConfig c = ring_run("determinism", 9);
    c.distill.steps = 300;
    c.eval.interval = 100;
    c.eval.samples = 500;
    c.eval.final_samples = 1000;
    run_distill(c, (out / "determinism_a").string());
    run_distill(c, (out / "determinism_b").string());
    bool same = true;
    nlohmann::json files;
    for (const char* f : {"metrics.csv", "reports.json"}) {
        const bool eq = slurp(out / "determinism_a" / f) == slurp(out / "determinism_b" / f);
        files[f] = eq;
        same = same && eq;
    }
    VerifyOptions v;
    v.theorem1_thetas = 1;
    v.theorem1_samples = 5000;
    auto dump = [&] {
        std::string s;
        for (const auto& r : run_check(Check::theorem1, 9, v)) s += verify::to_json(r).dump();
        return s;
    };
    const bool verify_same = dump() == dump();
    files["verify_reports"] = verify_same;
    Outcome o;
    o.pass = same && verify_same;
    o.summary = std::string("metrics.csv ") + (files["metrics.csv"].get<bool>() ? "identical" : "DIFFER") +
                ", reports.json " + (files["reports.json"].get<bool>() ? "identical" : "DIFFER") + ", verify reports " +
                (verify_same ? "identical" : "DIFFER");
    o.detail = files;
    return o;
}

// A distillation run whose teacher is a trained checkpoint, produced by the
// CLI (see tests/CMakeLists.txt); judged on its reports.json.
Outcome checkpoint_run(const fs::path& run) {
    const auto j = read_json((run / "reports.json").string()).at("reports").at(0);
    const double mmd = j.at("final").at("mmd").get<double>();
    const bool halted = !j.at("halt").is_null();
    Outcome o;
    o.pass = !halted && std::isfinite(mmd) && mmd <= kGaussianThreshold;
    o.summary = "MMD^2 " + fmt("%.3e", mmd) + " vs threshold " + fmt("%.3e", kGaussianThreshold) +
                (halted ? ", HALTED" : "");
    o.detail = j;
    return o;
}

const std::map<int, std::string> kNames{
    {1, "gradcheck battery"},          {2, "score-projection identity"},
    {3, "gradient equivalence"},       {4, "SiD as the l2 special case"},
    {5, "DSM fidelity"},               {6, "end-to-end ring distillation"},
    {7, "fixed point"},                {8, "large learning rate robustness"},
    {9, "determinism"},
};

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance battery"};
    std::vector<int> only;
    std::string out = "acceptance_out";
    app.add_option("-c,--criterion", only, "Criteria to run (default: all)")->check(CLI::Range(1, 9));
    app.add_option("-o,--out", out, "Artifact directory");
    std::string teacher_run;
    app.add_option("--checkpoint-run", teacher_run, "Judge a distill run that used a trained teacher checkpoint")
        ->check(CLI::ExistingDirectory);
    CLI11_PARSE(app, argc, argv);
    if (!teacher_run.empty()) {
        Outcome o;
        try {
            o = checkpoint_run(teacher_run);
        } catch (const std::exception& e) {
            o.summary = std::string("error: ") + e.what();
        }
        std::printf("checkpoint teacher %-31s %s  %s\n", "end-to-end distillation", o.pass ? "PASS" : "FAIL",
                    o.summary.c_str());
        return o.pass ? 0 : 1;
    }
    if (only.empty())
        for (int i = 1; i <= 9; ++i) only.push_back(i);

    const fs::path dir(out);
    ensure_directory(out);
    nlohmann::json summary = nlohmann::json::object();
    bool all = true;
    for (int k : only) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            switch (k) {
                case 1: o = criterion1(); break;
                case 2: o = criterion2(); break;
                case 3: o = criterion3(); break;
                case 4: o = criterion4(); break;
                case 5: o = criterion5(dir); break;
                case 6: o = criterion6(dir); break;
                case 7: o = criterion7(); break;
                case 8: o = criterion8(dir); break;
                case 9: o = criterion9(dir); break;
            }
        } catch (const std::exception& e) {
            o.pass = false;
            o.summary = std::string("error: ") + e.what();
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("criterion %d %-32s %s  %s  [%.1fs]\n", k, kNames.at(k).c_str(), o.pass ? "PASS" : "FAIL",
                    o.summary.c_str(), secs);
        std::fflush(stdout);
        summary[std::to_string(k)] = {{"name", kNames.at(k)}, {"pass", o.pass}, {"summary", o.summary},
                                      {"seconds", secs}, {"detail", o.detail}};
        write_json((dir / ("criterion" + std::to_string(k) + ".json")).string(), summary[std::to_string(k)]);
        all = all && o.pass;
    }
    return all ? 0 : 1;
}
