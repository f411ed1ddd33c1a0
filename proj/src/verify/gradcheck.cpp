#include <cmath>
#include <sstream>

#include "sim/nn/autograd.hpp"
#include "sim/nn/mlp.hpp"
#include "sim/nn/ops.hpp"
#include "sim/verify.hpp"

namespace sim::verify {

namespace {

using nn::Tensor;
using Inputs = std::vector<Tensor>;

// Values drawn per probe, one vector per input tensor.
struct MultiCase {
    std::string name;
    std::vector<nn::Shape> shapes;
    std::function<double(Rng&)> draw;  // elementwise
    std::function<Tensor(const Inputs&)> fn;
};

double normal(Rng& r) { return r.normal(); }

// Normal draws kept at least `gap` away from each kink.
std::function<double(Rng&)> away_from(std::vector<double> kinks, double gap = 1e-3) {
    return [kinks = std::move(kinks), gap](Rng& r) {
        for (;;) {
            const double v = r.normal();
            bool ok = true;
            for (double k : kinks) ok = ok && std::fabs(v - k) > gap;
            if (ok) return v;
        }
    };
}

double positive(Rng& r) { return 0.2 + 2.8 * r.uniform(); }

double nonzero(Rng& r) { return (r.uniform() < 0.5 ? -1.0 : 1.0) * (0.5 + 1.5 * r.uniform()); }

std::vector<MultiCase> multi_primitives() {
    using S = nn::Shape;
    const S m{3, 4};
    std::vector<MultiCase> c;
    c.push_back({"matmul", {{3, 4}, {4, 2}}, normal, [](const Inputs& x) { return nn::matmul(x[0], x[1]); }});
    c.push_back({"affine", {{3, 4}, {4, 2}, {2}}, normal, [](const Inputs& x) { return nn::affine(x[0], x[1], x[2]); }});
    c.push_back({"add", {m, m}, normal, [](const Inputs& x) { return nn::add(x[0], x[1]); }});
    c.push_back({"sub", {m, m}, normal, [](const Inputs& x) { return nn::sub(x[0], x[1]); }});
    c.push_back({"mul", {m, m}, normal, [](const Inputs& x) { return nn::mul(x[0], x[1]); }});
    c.push_back({"div", {m, m}, nonzero, [](const Inputs& x) { return nn::div(x[0], x[1]); }});
    c.push_back({"neg", {m}, normal, [](const Inputs& x) { return nn::neg(x[0]); }});
    c.push_back({"scale", {m}, normal, [](const Inputs& x) { return nn::scale(x[0], -1.7); }});
    c.push_back({"add_scalar", {m}, normal, [](const Inputs& x) { return nn::add_scalar(x[0], 0.3); }});
    c.push_back({"square", {m}, normal, [](const Inputs& x) { return nn::square(x[0]); }});
    c.push_back({"sqrt", {m}, positive, [](const Inputs& x) { return nn::sqrt(x[0]); }});
    c.push_back({"exp", {m}, normal, [](const Inputs& x) { return nn::exp(x[0]); }});
    c.push_back({"log", {m}, positive, [](const Inputs& x) { return nn::log(x[0]); }});
    c.push_back({"relu", {m}, away_from({0.0}), [](const Inputs& x) { return nn::relu(x[0]); }});
    c.push_back({"silu", {m}, normal, [](const Inputs& x) { return nn::silu(x[0]); }});
    c.push_back({"tanh", {m}, normal, [](const Inputs& x) { return nn::tanh(x[0]); }});
    c.push_back({"powi", {m}, normal, [](const Inputs& x) { return nn::powi(x[0], 3); }});
    c.push_back({"abs", {m}, away_from({0.0}), [](const Inputs& x) { return nn::abs(x[0]); }});
    c.push_back({"clamp", {m}, away_from({-0.5, 0.5}), [](const Inputs& x) { return nn::clamp(x[0], -0.5, 0.5); }});
    c.push_back({"sign", {m}, away_from({0.0}), [](const Inputs& x) { return nn::sign(x[0]); }});
    c.push_back({"sum", {m}, normal, [](const Inputs& x) { return nn::sum(x[0]); }});
    c.push_back({"mean", {m}, normal, [](const Inputs& x) { return nn::mean(x[0]); }});
    c.push_back({"sum_cols", {m}, normal, [](const Inputs& x) { return nn::sum_cols(x[0]); }});
    c.push_back({"dot_rows", {m, m}, normal, [](const Inputs& x) { return nn::dot_rows(x[0], x[1]); }});
    c.push_back({"broadcast_rows", {{4}}, normal, [](const Inputs& x) { return nn::broadcast_rows(x[0], 3); }});
    c.push_back({"broadcast_cols", {{3}}, normal, [](const Inputs& x) { return nn::broadcast_cols(x[0], 4); }});
    c.push_back({"scale_rows", {m}, normal, [](const Inputs& x) {
                     const std::vector<double> s{0.5, -2.0, 3.0};
                     return nn::scale_rows(x[0], s);
                 }});
    c.push_back({"concat_cols", {{3, 2}, {3, 3}}, normal, [](const Inputs& x) { return nn::concat_cols(x[0], x[1]); }});
    c.push_back({"mlp", {{5, 2}}, normal, [](const Inputs& x) {
                     static const nn::MlpNet net = [] {
                         Rng r(7);
                         return nn::MlpNet({{2, 8, 8, 2}, nn::Activation::silu, nn::TimeConditioning::log_t}, r);
                     }();
                     const std::vector<double> t{0.1, 0.5, 1.0, 2.0, 10.0};
                     return net.forward(x[0], t);
                 }});
    const std::vector<double> t4{0.2, 0.7, 1.5, 4.0};
    c.push_back({"gmm_score", {{4, 2}}, normal, [t4](const Inputs& x) {
                     return oracles::gmm_score(oracles::GmmSpec::ring(8, 4.0, 0.3), nn::scale(x[0], 3.0), t4);
                 }});
    c.push_back({"gmm_denoiser", {{4, 2}}, normal, [t4](const Inputs& x) {
                     return oracles::gmm_denoiser(oracles::GmmSpec::ring(8, 4.0, 0.3), nn::scale(x[0], 3.0), t4);
                 }});
    c.push_back({"gaussian_score", {{4, 2}}, normal, [t4](const Inputs& x) {
                     oracles::Mat cov(2, 2);
                     cov << 2.0, 0.3, 0.3, 0.5;
                     return oracles::gaussian_score(oracles::GaussianSpec{oracles::Vec::Ones(2), cov}, x[0], t4);
                 }});
    c.push_back({"linear_gen_score", {{4, 2}}, normal, [t4](const Inputs& x) {
                     oracles::Mat a(2, 2);
                     a << 2.0, 0.0, 0.5, 1.0;
                     return oracles::linear_gen_score(oracles::LinearGenerator{a, oracles::Vec::Zero(2)}, x[0], t4);
                 }});
    return c;
}

std::vector<distances::DistanceFn> distance_tags() {
    using distances::DistanceFn;
    return {DistanceFn::l2(), DistanceFn::power(4), DistanceFn::exp_power(2, 0.3),
            DistanceFn::l1(), DistanceFn::huber(0.5), DistanceFn::pseudo_huber(0.5)};
}

std::string shape_list(const std::vector<nn::Shape>& shapes) {
    std::string s;
    for (const auto& sh : shapes) s += (s.empty() ? "" : ",") + nn::shape_str(sh);
    return s;
}

// Flatten a multi-input case into the public single-input form: the flat
// vector is split into leaf tensors inside fn.
GradcheckCase flatten(MultiCase mc) {
    std::size_t total = 0;
    for (const auto& s : mc.shapes) total += nn::numel(s);
    GradcheckCase g;
    g.name = std::move(mc.name);
    g.input_size = total;
    g.draw = [draw = mc.draw, total](Rng& r) {
        std::vector<double> v(total);
        for (auto& e : v) e = draw(r);
        return v;
    };
    g.fn = [shapes = mc.shapes, fn = mc.fn](const Tensor& flat) {
        // the flat leaf fans out into per-input tensors through a gather op
        Inputs in;
        std::size_t off = 0;
        for (const auto& s : shapes) {
            const std::size_t n = nn::numel(s);
            std::vector<double> v(flat.data().begin() + static_cast<std::ptrdiff_t>(off),
                                  flat.data().begin() + static_cast<std::ptrdiff_t>(off + n));
            in.push_back(nn::make_result("slice", s, std::move(v), {flat},
                                         [off, n](const nn::Node&, std::span<const double> go,
                                                  std::span<std::vector<double>* const> gi) {
                                             if (!gi[0]) return;
                                             for (std::size_t i = 0; i < n; ++i) (*gi[0])[off + i] += go[i];
                                         }));
            off += n;
        }
        return fn(in);
    };
    return g;
}

} // namespace

std::vector<GradcheckCase> primitive_cases() {
    std::vector<GradcheckCase> out;
    for (auto& mc : multi_primitives()) out.push_back(flatten(std::move(mc)));
    return out;
}

std::vector<GradcheckCase> distance_cases() {
    std::vector<GradcheckCase> out;
    const std::size_t dim = 4;
    for (const auto& d : distance_tags()) {
        std::vector<double> kinks{0.0};
        if (d.kind == distances::DistanceFn::Kind::huber) kinks = {0.0, d.delta, -d.delta};
        auto draw_elem = away_from(kinks);
        GradcheckCase g;
        g.name = "distance:" + distances::to_string(d.kind);
        g.input_size = dim;
        g.zero_first = true;
        g.draw = [draw_elem, dim](Rng& r) {
            std::vector<double> v(dim);
            for (auto& e : v) e = draw_elem(r);
            return v;
        };
        g.fn = [d](const Tensor& y) {
            std::vector<double> v(y.data().begin(), y.data().end());
            return nn::make_result("distance", {}, {distances::value(d, v)}, {y},
                                   [d, v](const nn::Node&, std::span<const double> go,
                                          std::span<std::vector<double>* const> gi) {
                                       if (!gi[0]) return;
                                       const auto g = distances::derivative(d, v);
                                       for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += go[0] * g[i];
                                   });
        };
        out.push_back(std::move(g));

        // the differentiable derivative used when gradients flow through d'(y)
        GradcheckCase dd;
        dd.name = "distance_derivative:" + distances::to_string(d.kind);
        dd.input_size = 2 * dim;
        dd.draw = [draw_elem, dim](Rng& r) {
            std::vector<double> v(2 * dim);
            for (auto& e : v) e = draw_elem(r);
            return v;
        };
        dd.fn = [d, dim](const Tensor& y) {
            std::vector<double> v(y.data().begin(), y.data().end());
            auto m = nn::make_result("reshape", {2, dim}, std::move(v), {y},
                                     [](const nn::Node&, std::span<const double> go,
                                        std::span<std::vector<double>* const> gi) {
                                         if (!gi[0]) return;
                                         for (std::size_t i = 0; i < go.size(); ++i) (*gi[0])[i] += go[i];
                                     });
            return distances::derivative(d, m);
        };
        out.push_back(std::move(dd));
    }
    return out;
}

namespace {

// stable across standard libraries, unlike std::hash
std::uint64_t name_hash(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    return h;
}


Tensor projected(const GradcheckCase& c, const Tensor& x, const std::vector<double>& r) {
    auto out = c.fn(x);
    if (out.size() != r.size()) throw std::logic_error("gradcheck " + c.name + ": output size changed between calls");
    return nn::sum(nn::mul(out, Tensor::from(out.shape(), r)));
}

} // namespace

std::vector<VerificationReport> gradcheck_suite(Rng rng, const std::vector<GradcheckCase>& cases, std::size_t probes) {
    constexpr double h = 1e-5;
    constexpr double tol = 1e-6;
    std::vector<VerificationReport> reports;
    for (const auto& c : cases) {
        Rng r = rng.split(name_hash(c.name));
        VerificationReport rep;
        rep.check = "gradcheck:" + c.name;
        rep.seed = rng.seed();
        rep.rng_algorithm = std::string(Rng::kAlgorithm);
        rep.config = {{"case", c.name}, {"probes", probes}, {"fd_step", h}, {"tolerance", tol}};
        double worst = 0.0;
        std::size_t worst_probe = 0, worst_elem = 0;
        for (std::size_t p = 0; p < probes; ++p) {
            const auto x0 = (p == 0 && c.zero_first) ? std::vector<double>(c.input_size, 0.0) : c.draw(r);
            if (x0.size() != c.input_size) throw std::logic_error("gradcheck " + c.name + ": probe has the wrong size");
            const Tensor leaf = Tensor::from({x0.size()}, x0, true);
            const auto out_shape = c.fn(leaf.detach()).shape();
            std::vector<double> proj(nn::numel(out_shape));
            for (auto& e : proj) e = r.normal();
            const auto grad = nn::backward(projected(c, leaf, proj)).of(leaf);
            auto x = x0;
            for (std::size_t i = 0; i < x.size(); ++i) {
                x[i] = x0[i] + h;
                const double fp = projected(c, Tensor::from({x.size()}, x), proj).item();
                x[i] = x0[i] - h;
                const double fm = projected(c, Tensor::from({x.size()}, x), proj).item();
                x[i] = x0[i];
                const double fd = (fp - fm) / (2.0 * h);
                const double err = std::fabs(fd - grad[i]) / std::max({1.0, std::fabs(fd), std::fabs(grad[i])});
                if (!(err <= worst)) {
                    worst = std::isnan(err) ? INFINITY : err;
                    worst_probe = p;
                    worst_elem = i;
                }
            }
        }
        rep.estimate = {worst};
        rep.target = {0.0};
        rep.allowance = {tol};
        rep.samples = probes;
        rep.pass = worst <= tol;
        std::ostringstream os;
        os << c.name << ": max rel err " << worst << " (probe " << worst_probe << ", element " << worst_elem << ")";
        rep.detail = os.str();
        reports.push_back(std::move(rep));
    }
    return reports;
}

std::vector<VerificationReport> gradcheck_suite(Rng rng, std::size_t probes) {
    auto cases = primitive_cases();
    auto dist = distance_cases();
    cases.insert(cases.end(), dist.begin(), dist.end());
    return gradcheck_suite(rng, cases, probes);
}

} // namespace sim::verify
