#include <cmath>
#include <sstream>
#include <stdexcept>

#include "sim/distill.hpp"
#include "sim/nn/ops.hpp"

namespace sim::distill {

Tensor ScoreModel::denoise(const Tensor& xt, std::span<const double> t, bool track_params) const {
    return diffusion::denoiser_from_score(score(xt, t, track_params), xt, t);
}

Tensor ScoreModel::score(const Tensor& xt, std::span<const double> t, bool track_params) const {
    return diffusion::score_from_denoiser(denoise(xt, t, track_params), xt, t);
}

std::string to_string(Preconditioning p) { return p == Preconditioning::edm ? "edm" : "none"; }

Preconditioning preconditioning_from_string(const std::string& s) {
    if (s == "edm") return Preconditioning::edm;
    if (s == "none") return Preconditioning::none;
    throw std::invalid_argument("unknown preconditioning '" + s + "'");
}

namespace {

void check_denoiser_net(const nn::MlpNet& net, double sigma_data) {
    if (net.config().conditioning == nn::TimeConditioning::none)
        throw std::invalid_argument("NetDenoiser: network must be time-conditioned");
    if (net.input_width() != net.output_width())
        throw std::invalid_argument("NetDenoiser: input width " + std::to_string(net.input_width()) +
                                    " != output width " + std::to_string(net.output_width()));
    if (!(sigma_data > 0.0)) throw std::invalid_argument("NetDenoiser: sigma_data must be positive");
}

} // namespace

NetDenoiser::NetDenoiser(nn::MlpConfig cfg, Preconditioning pre, double sigma_data, Rng& rng)
    : NetDenoiser(nn::MlpNet(std::move(cfg), rng), pre, sigma_data) {}

NetDenoiser::NetDenoiser(nn::MlpNet net, Preconditioning pre, double sigma_data)
    : net_(std::move(net)), pre_(pre), sigma_data_(sigma_data) {
    check_denoiser_net(net_, sigma_data_);
}

Tensor NetDenoiser::denoise(const Tensor& xt, std::span<const double> t, bool track_params) const {
    if (pre_ == Preconditioning::none) return net_.forward(xt, t, track_params);
    const double sd2 = sigma_data_ * sigma_data_;
    std::vector<double> c_skip(t.size()), c_out(t.size()), c_in(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) {
        const double r = t[i] * t[i] + sd2;
        c_skip[i] = sd2 / r;
        c_out[i] = t[i] * sigma_data_ / std::sqrt(r);
        c_in[i] = 1.0 / std::sqrt(r);
    }
    auto f = net_.forward(nn::scale_rows(xt, c_in), t, track_params);
    return nn::add(nn::scale_rows(xt, c_skip), nn::scale_rows(f, c_out));
}

std::unique_ptr<ScoreModel> NetDenoiser::clone() const {
    return std::make_unique<NetDenoiser>(net_.clone(), pre_, sigma_data_);
}

std::string NetDenoiser::describe() const {
    std::ostringstream os;
    os << "net-denoiser(";
    for (std::size_t i = 0; i < net_.config().widths.size(); ++i) os << (i ? "-" : "") << net_.config().widths[i];
    os << ", " << nn::to_string(net_.config().activation) << ", " << nn::to_string(net_.config().conditioning)
       << ", precond=" << to_string(pre_) << ")";
    return os.str();
}

AnalyticModel::AnalyticModel(Law law) : law_(std::move(law)) {
    std::visit(
        [](const auto& l) {
            using L = std::decay_t<decltype(l)>;
            if constexpr (!std::is_same_v<L, oracles::LinearGenerator>) l.validate();
        },
        law_);
}

Tensor AnalyticModel::denoise(const Tensor& xt, std::span<const double> t, bool) const {
    if (auto* g = std::get_if<oracles::GmmSpec>(&law_)) return oracles::gmm_denoiser(*g, xt, t);
    return diffusion::denoiser_from_score(score(xt, t), xt, t);
}

Tensor AnalyticModel::score(const Tensor& xt, std::span<const double> t, bool) const {
    return std::visit(
        [&](const auto& l) -> Tensor {
            using L = std::decay_t<decltype(l)>;
            if constexpr (std::is_same_v<L, oracles::GaussianSpec>)
                return oracles::gaussian_score(l, xt, t);
            else if constexpr (std::is_same_v<L, oracles::GmmSpec>)
                return oracles::gmm_score(l, xt, t);
            else
                return oracles::linear_gen_score(l, xt, t);
        },
        law_);
}

std::unique_ptr<ScoreModel> AnalyticModel::clone() const { return std::make_unique<AnalyticModel>(law_); }

std::string AnalyticModel::describe() const {
    return std::visit(
        [](const auto& l) -> std::string {
            using L = std::decay_t<decltype(l)>;
            if constexpr (std::is_same_v<L, oracles::GaussianSpec>)
                return "analytic-gaussian(dim=" + std::to_string(l.dim()) + ")";
            else if constexpr (std::is_same_v<L, oracles::GmmSpec>)
                return "analytic-gmm(components=" + std::to_string(l.components()) + ")";
            else
                return "analytic-linear(dim=" + std::to_string(l.dim()) + ")";
        },
        law_);
}

namespace {

Tensor normal_matrix(Rng& rng, std::size_t n, std::size_t d, double scale) {
    std::vector<double> v(n * d);
    for (auto& e : v) e = scale * rng.normal();
    return Tensor::from({n, d}, std::move(v));
}

} // namespace

MlpGenerator::MlpGenerator(nn::MlpConfig cfg, Rng& rng) : MlpGenerator(nn::MlpNet(std::move(cfg), rng)) {}

MlpGenerator::MlpGenerator(nn::MlpNet net) : net_(std::move(net)) {
    if (net_.config().conditioning != nn::TimeConditioning::none)
        throw std::invalid_argument("MlpGenerator: network must not be time-conditioned");
}

Tensor MlpGenerator::sample_latent(Rng& rng, std::size_t n) const {
    return normal_matrix(rng, n, net_.input_width(), 1.0);
}

Tensor MlpGenerator::generate(const Tensor& z, bool track_params) const { return net_.forward(z, {}, track_params); }

std::unique_ptr<Generator> MlpGenerator::clone() const { return std::make_unique<MlpGenerator>(net_.clone()); }

std::string MlpGenerator::describe() const {
    std::ostringstream os;
    os << "mlp-generator(";
    for (std::size_t i = 0; i < net_.config().widths.size(); ++i) os << (i ? "-" : "") << net_.config().widths[i];
    os << ", " << nn::to_string(net_.config().activation) << ")";
    return os.str();
}

DenoiserGenerator::DenoiserGenerator(NetDenoiser denoiser, double t_star) : den_(std::move(denoiser)), t_star_(t_star) {
    if (!(t_star_ > 0.0) || !std::isfinite(t_star_))
        throw std::invalid_argument("DenoiserGenerator: t* must be positive and finite");
}

Tensor DenoiserGenerator::sample_latent(Rng& rng, std::size_t n) const {
    return normal_matrix(rng, n, den_.net().input_width(), t_star_);
}

Tensor DenoiserGenerator::generate(const Tensor& z, bool track_params) const {
    const std::vector<double> t(z.rank() == 2 ? z.dim(0) : 0, t_star_);
    return den_.denoise(z, t, track_params);
}

std::unique_ptr<Generator> DenoiserGenerator::clone() const {
    return std::make_unique<DenoiserGenerator>(NetDenoiser(den_.net().clone(), den_.preconditioning(), den_.sigma_data()),
                                               t_star_);
}

std::string DenoiserGenerator::describe() const {
    std::ostringstream os;
    os << "denoiser-generator(t*=" << t_star_ << ", " << den_.describe() << ")";
    return os.str();
}

LinearGeneratorModel::LinearGeneratorModel(const oracles::LinearGenerator& init) {
    const std::size_t d = init.dim(), l = init.latent_dim();
    if (d == 0 || l == 0 || static_cast<std::size_t>(init.A.rows()) != d)
        throw std::invalid_argument("LinearGeneratorModel: A must be [dim, latent] with b of length dim");
    std::vector<double> at(l * d);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < l; ++j)
            at[j * d + i] = init.A(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    at_ = Tensor::from({l, d}, std::move(at), true);
    b_ = Tensor::from({d}, std::vector<double>(init.b.data(), init.b.data() + d), true);
}

Tensor LinearGeneratorModel::sample_latent(Rng& rng, std::size_t n) const {
    return normal_matrix(rng, n, at_.dim(0), 1.0);
}

Tensor LinearGeneratorModel::generate(const Tensor& z, bool track_params) const {
    if (track_params) return nn::affine(z, at_, b_);
    return nn::affine(z, at_.detach(), b_.detach());
}

std::unique_ptr<Generator> LinearGeneratorModel::clone() const { return std::make_unique<LinearGeneratorModel>(current()); }

std::string LinearGeneratorModel::describe() const {
    return "linear-generator(dim=" + std::to_string(at_.dim(1)) + ", latent=" + std::to_string(at_.dim(0)) + ")";
}

oracles::LinearGenerator LinearGeneratorModel::current() const {
    const std::size_t l = at_.dim(0), d = at_.dim(1);
    oracles::LinearGenerator g;
    g.A.resize(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(l));
    g.b.resize(static_cast<Eigen::Index>(d));
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j < l; ++j)
            g.A(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = at_.at(j * d + i);
        g.b(static_cast<Eigen::Index>(i)) = b_.at(i);
    }
    return g;
}

std::vector<double> LinearGeneratorModel::theta_gradient(const nn::Gradients& g) const {
    const std::size_t l = at_.dim(0), d = at_.dim(1);
    const auto ga = g.of(at_);
    const auto gb = g.of(b_);
    std::vector<double> out(d * l + d);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < l; ++j) out[i * l + j] = ga[j * d + i];
    for (std::size_t i = 0; i < d; ++i) out[d * l + i] = gb[i];
    return out;
}

} // namespace sim::distill
