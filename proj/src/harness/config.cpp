#include "sim/harness/config.hpp"

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

namespace sim::harness {

ConfigError::ConfigError(std::string path, const std::string& message)
    : std::runtime_error((path.empty() ? std::string("<root>") : path) + ": " + message), path_(std::move(path)) {}

namespace {

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

/// Strict view of one JSON object: every key must be consumed exactly by a
/// getter, anything left over is reported by finish().
class Obj {
public:
    Obj(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j.is_object()) throw ConfigError(path_, "expected an object");
    }

    bool has(const std::string& k) const { return j_.contains(k); }
    const std::string& path() const { return path_; }

    const json* take(const std::string& k) {
        seen_.insert(k);
        auto it = j_.find(k);
        return it == j_.end() ? nullptr : &*it;
    }

    void number(const std::string& k, double& out) {
        if (auto* v = take(k)) {
            if (!v->is_number()) throw ConfigError(join(path_, k), "expected a number");
            out = v->get<double>();
            if (!std::isfinite(out)) throw ConfigError(join(path_, k), "must be finite");
        }
    }
    void count(const std::string& k, std::size_t& out) {
        if (auto* v = take(k)) {
            if (!v->is_number_unsigned() && !(v->is_number_integer() && v->get<std::int64_t>() >= 0))
                throw ConfigError(join(path_, k), "expected a non-negative integer");
            out = v->get<std::size_t>();
        }
    }
    void u64(const std::string& k, std::uint64_t& out) {
        if (auto* v = take(k)) {
            if (!v->is_number_unsigned() && !(v->is_number_integer() && v->get<std::int64_t>() >= 0))
                throw ConfigError(join(path_, k), "expected a non-negative integer");
            out = v->get<std::uint64_t>();
        }
    }
    void integer(const std::string& k, int& out) {
        if (auto* v = take(k)) {
            if (!v->is_number_integer()) throw ConfigError(join(path_, k), "expected an integer");
            out = v->get<int>();
        }
    }
    void string(const std::string& k, std::string& out) {
        if (auto* v = take(k)) {
            if (!v->is_string()) throw ConfigError(join(path_, k), "expected a string");
            out = v->get<std::string>();
        }
    }
    void boolean(const std::string& k, bool& out) {
        if (auto* v = take(k)) {
            if (!v->is_boolean()) throw ConfigError(join(path_, k), "expected true or false");
            out = v->get<bool>();
        }
    }
    void numbers(const std::string& k, std::vector<double>& out) {
        if (auto* v = take(k)) out = number_array(*v, join(path_, k));
    }
    void counts(const std::string& k, std::vector<std::size_t>& out) {
        if (auto* v = take(k)) {
            if (!v->is_array()) throw ConfigError(join(path_, k), "expected an array");
            out.clear();
            for (std::size_t i = 0; i < v->size(); ++i) {
                const auto& e = (*v)[i];
                if (!e.is_number_unsigned() && !(e.is_number_integer() && e.get<std::int64_t>() >= 0))
                    throw ConfigError(join(path_, k) + "[" + std::to_string(i) + "]", "expected a non-negative integer");
                out.push_back(e.get<std::size_t>());
            }
        }
    }
    /// Parse a string enum through `conv`, reporting its message at the key.
    template <class T, class F>
    void choice(const std::string& k, T& out, F conv) {
        std::string s;
        string(k, s);
        if (!take(k)) return;
        try {
            out = conv(s);
        } catch (const std::invalid_argument& e) {
            throw ConfigError(join(path_, k), e.what());
        }
    }

    static std::vector<double> number_array(const json& v, const std::string& path) {
        if (!v.is_array()) throw ConfigError(path, "expected an array of numbers");
        std::vector<double> out;
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (!v[i].is_number()) throw ConfigError(path + "[" + std::to_string(i) + "]", "expected a number");
            out.push_back(v[i].get<double>());
        }
        return out;
    }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!seen_.count(it.key())) throw ConfigError(join(path_, it.key()), "unknown key");
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

template <class F>
void with_object(Obj& parent, const std::string& key, F f) {
    if (const json* v = parent.take(key)) {
        Obj o(*v, join(parent.path(), key));
        f(o);
        o.finish();
    }
}

nn::Activation activation_from(const std::string& s) { return nn::activation_from_string(s); }

GeneratorSpec::Kind generator_kind_from(const std::string& s) {
    if (s == "mlp") return GeneratorSpec::Kind::mlp;
    if (s == "denoiser") return GeneratorSpec::Kind::denoiser;
    throw std::invalid_argument("unknown generator kind '" + s + "' (mlp, denoiser)");
}

TeacherTraining::Schedule schedule_from(const std::string& s) {
    if (s == "constant") return TeacherTraining::Schedule::constant;
    if (s == "cosine") return TeacherTraining::Schedule::cosine;
    throw std::invalid_argument("unknown schedule '" + s + "' (constant, cosine)");
}

TeacherSpec::Kind teacher_kind_from(const std::string& s) {
    if (s == "gmm") return TeacherSpec::Kind::gmm;
    if (s == "checkpoint") return TeacherSpec::Kind::checkpoint;
    throw std::invalid_argument("unknown teacher kind '" + s + "' (gmm, checkpoint)");
}

DataSpec::Kind data_kind_from(const std::string& s) {
    if (s == "gmm") return DataSpec::Kind::gmm;
    if (s == "gaussian") return DataSpec::Kind::gaussian;
    if (s == "csv") return DataSpec::Kind::csv;
    throw std::invalid_argument("unknown data kind '" + s + "' (gmm, gaussian, csv)");
}

void read_diffusion(Obj& o, diffusion::DiffusionSpec& s) {
    o.number("sigma_min", s.sigma_min);
    o.number("sigma_max", s.sigma_max);
    o.number("rho", s.rho);
    o.count("grid_size", s.grid_size);
    o.number("sigma_data", s.sigma_data);
    o.number("t_max", s.t_max);
}

diffusion::TimeDistribution time_from(Obj& o) {
    std::string kind;
    o.string("kind", kind);
    if (kind == "log_normal") {
        diffusion::LogNormal d;
        o.number("p_mean", d.p_mean);
        o.number("p_std", d.p_std);
        return d;
    }
    if (kind == "karr_uniform") {
        diffusion::KarrUniform d;
        o.count("k_max", d.k_max);
        return d;
    }
    if (kind == "fixed") {
        diffusion::FixedGrid d;
        o.numbers("values", d.values);
        return d;
    }
    throw ConfigError(join(o.path(), "kind"), "unknown time distribution '" + kind + "' (log_normal, karr_uniform, fixed)");
}

diffusion::WeightingFn weighting_from(Obj& o) {
    diffusion::WeightingFn w;
    o.choice("kind", w.kind, diffusion::weighting_from_string);
    o.number("c", w.dim_factor);
    return w;
}

distances::DistanceFn distance_from(Obj& o) {
    distances::DistanceFn d;
    o.choice("kind", d.kind, distances::distance_kind_from_string);
    o.integer("alpha", d.alpha);
    o.number("beta", d.beta);
    o.number("delta", d.delta);
    o.number("c", d.c);
    return d;
}

void read_gmm(Obj& o, oracles::GmmSpec& g) {
    if (o.has("ring")) {
        std::size_t modes = 8;
        double radius = 4.0, std = 0.3;
        with_object(o, "ring", [&](Obj& r) {
            r.count("modes", modes);
            r.number("radius", radius);
            r.number("std", std);
        });
        if (modes == 0) throw ConfigError(join(o.path(), "ring.modes"), "must be positive");
        g = oracles::GmmSpec::ring(modes, radius, std);
        if (o.has("weights") || o.has("means") || o.has("stds"))
            throw ConfigError(o.path(), "give either ring or weights/means/stds, not both");
        return;
    }
    o.numbers("weights", g.weights);
    o.numbers("stds", g.stds);
    if (const json* m = o.take("means")) {
        const auto path = join(o.path(), "means");
        if (!m->is_array()) throw ConfigError(path, "expected an array of points");
        g.means.clear();
        for (std::size_t i = 0; i < m->size(); ++i) {
            const auto v = Obj::number_array((*m)[i], path + "[" + std::to_string(i) + "]");
            g.means.push_back(Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
        }
    }
}

void read_gaussian(Obj& o, oracles::GaussianSpec& g) {
    if (const json* m = o.take("mean")) {
        const auto v = Obj::number_array(*m, join(o.path(), "mean"));
        g.mean = Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
    }
    if (const json* c = o.take("cov")) {
        const auto path = join(o.path(), "cov");
        if (!c->is_array()) throw ConfigError(path, "expected a square array of rows");
        const auto n = static_cast<Eigen::Index>(c->size());
        g.cov = Eigen::MatrixXd(n, n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const auto row = Obj::number_array((*c)[static_cast<std::size_t>(i)], path + "[" + std::to_string(i) + "]");
            if (static_cast<Eigen::Index>(row.size()) != n) throw ConfigError(path, "covariance must be square");
            for (Eigen::Index k = 0; k < n; ++k) g.cov(i, k) = row[static_cast<std::size_t>(k)];
        }
    }
}

void read_denoiser(Obj& o, DenoiserSpec& d) {
    o.counts("hidden", d.hidden);
    o.choice("activation", d.activation, activation_from);
    o.choice("preconditioning", d.preconditioning, distill::preconditioning_from_string);
}

json denoiser_json(const DenoiserSpec& d) {
    return {{"hidden", d.hidden},
            {"activation", nn::to_string(d.activation)},
            {"preconditioning", distill::to_string(d.preconditioning)}};
}

json gaussian_json(const oracles::GaussianSpec& g) {
    json cov = json::array();
    for (Eigen::Index i = 0; i < g.cov.rows(); ++i) {
        std::vector<double> row(static_cast<std::size_t>(g.cov.cols()));
        for (Eigen::Index k = 0; k < g.cov.cols(); ++k) row[static_cast<std::size_t>(k)] = g.cov(i, k);
        cov.push_back(row);
    }
    return {{"mean", std::vector<double>(g.mean.data(), g.mean.data() + g.mean.size())}, {"cov", cov}};
}

template <class F>
void semantic(const std::string& path, F f) {
    try {
        f();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(path, e.what());
    } catch (const std::out_of_range& e) {
        throw ConfigError(path, e.what());
    }
}

} // namespace

std::string to_string(GeneratorSpec::Kind k) { return k == GeneratorSpec::Kind::mlp ? "mlp" : "denoiser"; }
std::string to_string(TeacherTraining::Schedule s) {
    return s == TeacherTraining::Schedule::constant ? "constant" : "cosine";
}
std::string to_string(TeacherSpec::Kind k) { return k == TeacherSpec::Kind::gmm ? "gmm" : "checkpoint"; }
std::string to_string(DataSpec::Kind k) {
    switch (k) {
        case DataSpec::Kind::gmm: return "gmm";
        case DataSpec::Kind::gaussian: return "gaussian";
        case DataSpec::Kind::csv: return "csv";
    }
    return "?";
}

json to_json(const oracles::GmmSpec& g) {
    json means = json::array();
    for (const auto& m : g.means) means.push_back(std::vector<double>(m.data(), m.data() + m.size()));
    return {{"weights", g.weights}, {"means", means}, {"stds", g.stds}};
}

oracles::GmmSpec gmm_from_json(const json& j, const std::string& path) {
    oracles::GmmSpec g;
    Obj o(j, path);
    read_gmm(o, g);
    o.finish();
    return g;
}

json to_json(const distances::DistanceFn& d) {
    json j{{"kind", distances::to_string(d.kind)}};
    switch (d.kind) {
        case distances::DistanceFn::Kind::power: j["alpha"] = d.alpha; break;
        case distances::DistanceFn::Kind::exp_power:
            j["alpha"] = d.alpha;
            j["beta"] = d.beta;
            break;
        case distances::DistanceFn::Kind::huber: j["delta"] = d.delta; break;
        case distances::DistanceFn::Kind::pseudo_huber: j["c"] = d.c; break;
        default: break;
    }
    return j;
}

json to_json(const diffusion::TimeDistribution& t) {
    return std::visit(
        [](const auto& d) -> json {
            using D = std::decay_t<decltype(d)>;
            if constexpr (std::is_same_v<D, diffusion::LogNormal>)
                return {{"kind", "log_normal"}, {"p_mean", d.p_mean}, {"p_std", d.p_std}};
            else if constexpr (std::is_same_v<D, diffusion::KarrUniform>)
                return {{"kind", "karr_uniform"}, {"k_max", d.k_max}};
            else
                return {{"kind", "fixed"}, {"values", d.values}};
        },
        t);
}

namespace {

json weighting_json(const diffusion::WeightingFn& w) {
    json j{{"kind", diffusion::to_string(w.kind)}};
    if (w.kind == diffusion::WeightingFn::Kind::sid) j["c"] = w.dim_factor;
    return j;
}

} // namespace

std::size_t RunConfig::dim() const {
    switch (data.kind) {
        case DataSpec::Kind::gmm: return data.gmm.dim();
        case DataSpec::Kind::gaussian: return data.gaussian.dim();
        case DataSpec::Kind::csv: break;
    }
    return teacher.kind == TeacherSpec::Kind::gmm ? teacher.gmm.dim() : generator.latent_dim;
}

RunConfig preset(const std::string& name) {
    RunConfig c;
    c.preset = name;
    if (name == "desk-2d") return c;
    if (name == "paper-table3") {
        c.distill = distill::DistillConfig::paper_table3();
        c.generator.kind = GeneratorSpec::Kind::denoiser;
        c.teacher_training.lr = 1e-5;
        c.teacher_training.batch = 256;
        return c;
    }
    throw ConfigError("preset", "unknown preset '" + name + "' (desk-2d, paper-table3)");
}

RunConfig from_json(const json& j) {
    Obj root(j, "");
    std::string name = "desk-2d";
    root.string("preset", name);
    RunConfig c = preset(name);

    root.string("experiment", c.experiment);
    root.u64("seed", c.seed);
    root.string("output_dir", c.output_dir);
    with_object(root, "diffusion", [&](Obj& o) { read_diffusion(o, c.diffusion); });
    with_object(root, "generator", [&](Obj& o) {
        o.choice("kind", c.generator.kind, generator_kind_from);
        o.count("latent_dim", c.generator.latent_dim);
        o.counts("hidden", c.generator.hidden);
        o.choice("activation", c.generator.activation, activation_from);
        o.number("t_star", c.generator.t_star);
    });
    with_object(root, "online", [&](Obj& o) { read_denoiser(o, c.online); });
    with_object(root, "distill", [&](Obj& o) {
        auto& d = c.distill;
        o.number("score_lr", d.score_lr);
        o.number("gen_lr", d.gen_lr);
        o.number("adam_beta1", d.adam_beta1);
        o.number("adam_beta2", d.adam_beta2);
        o.count("batch", d.batch);
        o.count("ratio", d.ratio);
        with_object(o, "score_time", [&](Obj& t) { d.score_time = time_from(t); });
        with_object(o, "gen_time", [&](Obj& t) { d.gen_time = time_from(t); });
        with_object(o, "score_weighting", [&](Obj& w) { d.score_weighting = weighting_from(w); });
        with_object(o, "gen_weighting", [&](Obj& w) { d.gen_weighting = weighting_from(w); });
        with_object(o, "distance", [&](Obj& w) { d.distance = distance_from(w); });
        o.choice("objective", d.objective, distill::objective_from_string);
        o.choice("form", d.form, distill::form_from_string);
        o.boolean("detach_first_factor", d.detach_first_factor);
        o.count("steps", d.steps);
        o.number("halt_threshold", d.halt_threshold);
    });
    with_object(root, "teacher", [&](Obj& o) {
        o.choice("kind", c.teacher.kind, teacher_kind_from);
        with_object(o, "gmm", [&](Obj& g) { read_gmm(g, c.teacher.gmm); });
        o.string("checkpoint", c.teacher.checkpoint);
    });
    with_object(root, "teacher_net", [&](Obj& o) { read_denoiser(o, c.teacher_net); });
    with_object(root, "teacher_training", [&](Obj& o) {
        o.count("steps", c.teacher_training.steps);
        o.number("lr", c.teacher_training.lr);
        o.choice("schedule", c.teacher_training.schedule, schedule_from);
        o.count("batch", c.teacher_training.batch);
        o.count("validation_size", c.teacher_training.validation_size);
    });
    with_object(root, "data", [&](Obj& o) {
        o.choice("kind", c.data.kind, data_kind_from);
        with_object(o, "gmm", [&](Obj& g) { read_gmm(g, c.data.gmm); });
        with_object(o, "gaussian", [&](Obj& g) { read_gaussian(g, c.data.gaussian); });
        o.string("path", c.data.path);
    });
    with_object(root, "eval", [&](Obj& o) {
        o.count("interval", c.eval.interval);
        o.count("samples", c.eval.samples);
        o.count("final_samples", c.eval.final_samples);
        o.number("coverage_radius", c.eval.coverage_radius);
        o.number("coverage_min_fraction", c.eval.coverage_min_fraction);
    });
    root.finish();
    c.distill.eval_interval = c.eval.interval;
    c.validate();
    return c;
}

json to_json(const RunConfig& c) {
    const auto& d = c.distill;
    return {
        {"experiment", c.experiment},
        {"preset", c.preset},
        {"seed", c.seed},
        {"output_dir", c.output_dir},
        {"diffusion",
         {{"sigma_min", c.diffusion.sigma_min},
          {"sigma_max", c.diffusion.sigma_max},
          {"rho", c.diffusion.rho},
          {"grid_size", c.diffusion.grid_size},
          {"sigma_data", c.diffusion.sigma_data},
          {"t_max", c.diffusion.t_max}}},
        {"generator",
         {{"kind", to_string(c.generator.kind)},
          {"latent_dim", c.generator.latent_dim},
          {"hidden", c.generator.hidden},
          {"activation", nn::to_string(c.generator.activation)},
          {"t_star", c.generator.t_star}}},
        {"online", denoiser_json(c.online)},
        {"distill",
         {{"score_lr", d.score_lr},
          {"gen_lr", d.gen_lr},
          {"adam_beta1", d.adam_beta1},
          {"adam_beta2", d.adam_beta2},
          {"batch", d.batch},
          {"ratio", d.ratio},
          {"score_time", to_json(d.score_time)},
          {"gen_time", to_json(d.gen_time)},
          {"score_weighting", weighting_json(d.score_weighting)},
          {"gen_weighting", weighting_json(d.gen_weighting)},
          {"distance", to_json(d.distance)},
          {"objective", distill::to_string(d.objective)},
          {"form", distill::to_string(d.form)},
          {"detach_first_factor", d.detach_first_factor},
          {"steps", d.steps},
          {"halt_threshold", d.halt_threshold}}},
        {"teacher",
         {{"kind", to_string(c.teacher.kind)}, {"gmm", to_json(c.teacher.gmm)}, {"checkpoint", c.teacher.checkpoint}}},
        {"teacher_net", denoiser_json(c.teacher_net)},
        {"teacher_training",
         {{"steps", c.teacher_training.steps},
          {"lr", c.teacher_training.lr},
          {"schedule", to_string(c.teacher_training.schedule)},
          {"batch", c.teacher_training.batch},
          {"validation_size", c.teacher_training.validation_size}}},
        {"data",
         {{"kind", to_string(c.data.kind)},
          {"gmm", to_json(c.data.gmm)},
          {"gaussian", gaussian_json(c.data.gaussian)},
          {"path", c.data.path}}},
        {"eval",
         {{"interval", c.eval.interval},
          {"samples", c.eval.samples},
          {"final_samples", c.eval.final_samples},
          {"coverage_radius", c.eval.coverage_radius},
          {"coverage_min_fraction", c.eval.coverage_min_fraction}}},
    };
}

void RunConfig::validate() const {
    semantic("diffusion", [&] { diffusion.validate(); });
    semantic("distill.score_time", [&] { diffusion::validate(distill.score_time, diffusion); });
    semantic("distill.gen_time", [&] { diffusion::validate(distill.gen_time, diffusion); });
    semantic("distill.distance", [&] { distill.distance.validate(); });
    semantic("distill", [&] { distill.validate(diffusion); });

    if (generator.latent_dim == 0) throw ConfigError("generator.latent_dim", "must be positive");
    for (std::size_t w : generator.hidden)
        if (w == 0) throw ConfigError("generator.hidden", "layer widths must be positive");
    if (generator.kind == GeneratorSpec::Kind::denoiser &&
        !(generator.t_star >= diffusion.sigma_min && generator.t_star <= diffusion.sigma_max))
        throw ConfigError("generator.t_star", "must lie within [sigma_min, sigma_max]");
    for (const auto* d : {&online, &teacher_net})
        for (std::size_t w : d->hidden)
            if (w == 0) throw ConfigError(d == &online ? "online.hidden" : "teacher_net.hidden", "layer widths must be positive");

    if (teacher.kind == TeacherSpec::Kind::gmm)
        semantic("teacher.gmm", [&] { teacher.gmm.validate(); });
    else if (teacher.checkpoint.empty())
        throw ConfigError("teacher.checkpoint", "required when teacher.kind is checkpoint");

    switch (data.kind) {
        case DataSpec::Kind::gmm: semantic("data.gmm", [&] { data.gmm.validate(); }); break;
        case DataSpec::Kind::gaussian: semantic("data.gaussian", [&] { data.gaussian.validate(); }); break;
        case DataSpec::Kind::csv:
            if (data.path.empty()) throw ConfigError("data.path", "required when data.kind is csv");
            break;
    }
    if (teacher.kind == TeacherSpec::Kind::gmm && data.kind != DataSpec::Kind::csv && teacher.gmm.dim() != dim())
        throw ConfigError("teacher.gmm", "dimension " + std::to_string(teacher.gmm.dim()) +
                                             " differs from the data dimension " + std::to_string(dim()));
    if (generator.kind == GeneratorSpec::Kind::denoiser && generator.latent_dim != dim())
        throw ConfigError("generator.latent_dim", "a denoiser generator needs latent_dim equal to the data dimension");

    if (teacher_training.batch < 2) throw ConfigError("teacher_training.batch", "must be >= 2");
    if (!(teacher_training.lr > 0.0)) throw ConfigError("teacher_training.lr", "must be positive");
    if (teacher_training.validation_size < 2) throw ConfigError("teacher_training.validation_size", "must be >= 2");
    if (eval.samples < dim() + 2) throw ConfigError("eval.samples", "too few samples for the metrics");
    if (eval.final_samples < dim() + 2) throw ConfigError("eval.final_samples", "too few samples for the metrics");
    if (!(eval.coverage_radius > 0.0)) throw ConfigError("eval.coverage_radius", "must be positive");
    if (!(eval.coverage_min_fraction >= 0.0 && eval.coverage_min_fraction < 1.0))
        throw ConfigError("eval.coverage_min_fraction", "must lie in [0, 1)");
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("", "cannot open config file '" + path + "'");
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("", "'" + path + "' is not valid JSON: " + e.what());
    }
    return from_json(j);
}

std::string config_hash(const RunConfig& c) {
    // the output location does not change what a run computes
    auto j = to_json(c);
    j.erase("output_dir");
    const std::string s = j.dump();
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016" PRIx64, h);
    return buf;
}

} // namespace sim::harness
