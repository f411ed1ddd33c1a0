// simctl: command-line front end for teacher training, distillation,
// verification, evaluation and plotting.
//
// Exit codes: 0 success, 1 invalid configuration or arguments, 2 runtime
// failure (including failed verification checks).

#include <cstdio>
#include <exception>
#include <string>

#include "CLI11.hpp"
#include "sim/harness/checkpoint.hpp"
#include "sim/harness/config.hpp"
#include "sim/harness/io.hpp"
#include "sim/harness/runs.hpp"
#include "sim/harness/svg.hpp"
#include "sim/nn/adam.hpp"

using namespace sim;
using namespace sim::harness;

namespace {

struct Common {
    std::string config;
    std::string out;
    std::uint64_t seed = 0;
    bool seed_set = false;
};

RunConfig resolve(const Common& c) {
    RunConfig cfg = c.config.empty() ? preset("desk-2d") : load_config(c.config);
    if (c.seed_set) cfg.seed = c.seed;
    if (!c.out.empty()) cfg.output_dir = c.out;
    cfg.validate();
    return cfg;
}

int finish_reports(const std::string& dir, const std::vector<verify::VerificationReport>& reports) {
    nlohmann::json arr = nlohmann::json::array();
    std::size_t passed = 0, inconclusive = 0;
    for (const auto& r : reports) {
        arr.push_back(verify::to_json(r));
        passed += r.pass;
        inconclusive += r.inconclusive;
        std::printf("%-40s %s%s\n", r.check.c_str(), r.pass ? "pass" : "FAIL", r.inconclusive ? " (inconclusive)" : "");
        if (!r.pass && !r.detail.empty()) std::printf("    %s\n", r.detail.c_str());
    }
    ensure_directory(dir);
    write_json(join_path(dir, "reports.json"),
               {{"reports", arr},
                {"summary", {{"total", reports.size()}, {"passed", passed}, {"inconclusive", inconclusive}}}});
    std::printf("%zu/%zu checks passed; reports in %s\n", passed, reports.size(), join_path(dir, "reports.json").c_str());
    return passed == reports.size() ? 0 : 2;
}

int cmd_train_teacher(const Common& c) {
    const RunConfig cfg = resolve(c);
    const std::string dir = cfg.output_dir;
    ensure_directory(dir);
    auto echo = to_json(cfg);
    write_json(join_path(dir, "config.json"), echo);

    std::FILE* log = std::fopen(join_path(dir, "teacher_metrics.csv").c_str(), "w");
    if (!log) throw std::runtime_error("cannot write teacher_metrics.csv in " + dir);
    std::fprintf(log, "step,train_loss,validation_loss\n");
    std::vector<double> steps, train, val;
    auto res = train_teacher(cfg, [&](const TeacherRow& r) {
        std::fprintf(log, "%zu,%.12g,%.12g\n", r.step, r.train_loss, r.validation_loss);
        std::fflush(log);
        std::printf("step %zu  train %.6g  validation %.6g\n", r.step, r.train_loss, r.validation_loss);
        steps.push_back(static_cast<double>(r.step));
        train.push_back(r.train_loss);
        val.push_back(r.validation_loss);
    });
    std::fclose(log);

    auto ck = to_checkpoint(res.model);
    ck.step = cfg.teacher_training.steps;
    ck.rng = Rng(cfg.seed).state();
    ck.config_hash = config_hash(cfg);
    ck.meta = {{"validation_loss", res.validation_loss}, {"validation_size", cfg.teacher_training.validation_size},
               {"seed", cfg.seed}, {"data", to_string(cfg.data.kind)}};
    save_checkpoint(join_path(dir, "teacher.ckpt"), ck);
    const nlohmann::json report{{"check", "train_teacher"},
                                {"seed", cfg.seed},
                                {"rng_algorithm", std::string(Rng::kAlgorithm)},
                                {"config_hash", ck.config_hash},
                                {"steps", cfg.teacher_training.steps},
                                {"validation_loss", res.validation_loss}};
    write_json(join_path(dir, "reports.json"), {{"reports", nlohmann::json::array({report})}});
    svg::write(join_path(dir, "teacher_loss.svg"),
               svg::line_chart("Teacher DSM loss", "step", "loss", {{"train", steps, train}, {"validation", steps, val}},
                               true));
    std::printf("teacher checkpoint: %s (validation loss %.12g)\n", join_path(dir, "teacher.ckpt").c_str(),
                res.validation_loss);
    return 0;
}

int cmd_distill(const Common& c, const RunOutputs& outputs) {
    const RunConfig cfg = resolve(c);
    const auto run = run_distill(cfg, cfg.output_dir, outputs);
    const auto& f = run.final;
    std::printf("steps %zu  final mmd %.6g  w2 %.6g  modes %zu", run.result.steps_done, f.mmd, f.w2_gauss,
                f.modes_covered);
    if (run.result.halt) std::printf("  HALTED at step %zu: %s", run.result.halt->step, run.result.halt->reason.c_str());
    std::printf("\noutputs in %s\n", cfg.output_dir.c_str());
    return 0;
}

int cmd_eval(const Common& c, const std::string& generator, bool null, std::size_t pairs, std::size_t samples,
             std::uint64_t null_seed) {
    const RunConfig cfg = resolve(c);
    const std::string dir = cfg.output_dir;
    ensure_directory(dir);
    nlohmann::json report;
    if (null) {
        const auto s = self_null(cfg, pairs, samples ? samples : cfg.eval.final_samples, null_seed);
        report = to_json(s);
        std::printf("self-null over %zu pairs of %zu samples: median %.6g  q95 %.6g  q99 %.6g  max %.6g  2*q99 %.6g\n",
                    s.pairs, s.samples, s.median, s.q95, s.q99, s.max, 2.0 * s.q99);
    } else {
        if (generator.empty()) throw CLI::ValidationError("eval", "--generator or --self-null is required");
        const auto gen = generator_from_checkpoint(load_checkpoint(generator));
        const auto m = evaluate_generator(*gen, cfg, Rng(cfg.seed).split(26));
        report = to_json(m);
        report["check"] = "eval";
        report["seed"] = cfg.seed;
        report["rng_algorithm"] = std::string(Rng::kAlgorithm);
        std::printf("mmd %.6g  w2 %.6g  modes covered %zu\n", m.mmd, m.w2_gauss, m.modes_covered);
    }
    write_json(join_path(dir, "reports.json"), {{"reports", nlohmann::json::array({report})}});
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Score implicit matching toolkit"};
    app.require_subcommand(1);

    Common common;
    auto add_common = [&](CLI::App* sub, bool config) {
        if (config) sub->add_option("-c,--config", common.config, "Run configuration (JSON)")->check(CLI::ExistingFile);
        sub->add_option("-o,--out", common.out, "Output directory (overrides output_dir)");
        sub->add_option("-s,--seed", common.seed, "Seed (overrides the config)")
            ->each([&](const std::string&) { common.seed_set = true; });
    };

    auto* teacher = app.add_subcommand("train-teacher", "Train a denoiser on the configured data by DSM");
    add_common(teacher, true);

    RunOutputs outputs;
    auto* distill = app.add_subcommand("distill", "Distill a one-step generator from the teacher");
    add_common(distill, true);
    distill->add_option("--resume", outputs.resume_dir, "Warm-start from a previous run directory");
    distill->add_flag("--force", outputs.force, "Accept checkpoints written under another config");
    distill->add_flag("--wall-clock", outputs.wall_clock, "Record elapsed seconds in metrics.csv");
    bool no_plots = false;
    distill->add_flag("--no-plots", no_plots, "Skip the SVG plots");

    std::string check = "all";
    VerifyOptions vopts;
    auto* ver = app.add_subcommand("verify", "Run the statistical verification checks");
    add_common(ver, false);
    ver->add_option("--check", check, "all, gradcheck, score_projection or theorem1");
    ver->add_option("--n-mc", vopts.theorem1_samples, "Monte-Carlo draws per time point for theorem1");
    ver->add_option("--projection-samples", vopts.projection_samples, "Draws for score_projection");
    ver->add_option("--thetas", vopts.theorem1_thetas, "Random generator parameters for theorem1");

    std::string generator;
    bool null = false;
    std::size_t pairs = 200, samples = 0;
    std::uint64_t null_seed = 2024;
    auto* eval = app.add_subcommand("eval", "Evaluate a generator checkpoint, or compute the MMD self-null");
    add_common(eval, true);
    eval->add_option("--generator", generator, "Generator checkpoint")->check(CLI::ExistingFile);
    eval->add_flag("--self-null", null, "MMD^2 between independent reference draws");
    eval->add_option("--pairs", pairs, "Self-null pairs");
    eval->add_option("--samples", samples, "Samples per draw (default eval.final_samples)");
    eval->add_option("--null-seed", null_seed, "Seed of the self-null draws");

    auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of every primitive and distance");
    add_common(grad, false);
    grad->add_option("--probes", vopts.probes, "Random probes per case");

    std::string run_dir;
    auto* plot = app.add_subcommand("plot", "Redraw the SVG plots of a run directory");
    plot->add_option("run", run_dir, "Run directory")->required()->check(CLI::ExistingDirectory);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (teacher->parsed()) return cmd_train_teacher(common);
        if (distill->parsed()) {
            outputs.plots = !no_plots;
            return cmd_distill(common, outputs);
        }
        if (ver->parsed() || grad->parsed()) {
            std::vector<verify::VerificationReport> reports;
            const std::string dir = common.out.empty() ? "." : common.out;
            std::vector<Check> checks;
            if (grad->parsed() || check == "gradcheck")
                checks = {Check::gradcheck};
            else if (check == "all")
                checks = {Check::gradcheck, Check::score_projection, Check::theorem1};
            else
                checks = {check_from_string(check)};
            for (Check k : checks) {
                auto r = run_check(k, common.seed, vopts);
                reports.insert(reports.end(), r.begin(), r.end());
            }
            return finish_reports(dir, reports);
        }
        if (eval->parsed()) return cmd_eval(common, generator, null, pairs, samples, null_seed);
        if (plot->parsed()) {
            write_plots(run_dir);
            std::printf("plots written to %s\n", run_dir.c_str());
            return 0;
        }
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 1;
    } catch (const CLI::Error& e) {
        std::fprintf(stderr, "%s\n", e.what());
        return 1;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "invalid argument: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}
