#include "sim/oracles.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "sim/nn/ops.hpp"

namespace sim::oracles {

namespace {

Mat shifted(const Mat& cov, double t) {
    Mat m = cov;
    m.diagonal().array() += t * t;
    return m;
}

Eigen::LLT<Mat> factor(const Mat& m, const char* what) {
    Eigen::LLT<Mat> llt(m);
    if (llt.info() != Eigen::Success) throw std::domain_error(std::string(what) + ": covariance is not positive definite");
    return llt;
}

double gauss_log_density(const Vec& mean, const Mat& cov, const Vec& x, const char* what) {
    auto llt = factor(cov, what);
    const Vec r = x - mean;
    const Vec w = llt.matrixL().solve(r);
    const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    const double n = static_cast<double>(x.size());
    return -0.5 * (w.squaredNorm() + logdet + n * std::log(2.0 * std::numbers::pi));
}

void check_dim(std::size_t expected, std::size_t got, const char* what) {
    if (expected != got)
        throw std::invalid_argument(std::string(what) + ": dimension " + std::to_string(got) + " != " +
                                    std::to_string(expected));
}

Vec row(const Tensor& x, std::size_t i) {
    const std::size_t d = x.dim(1);
    Vec v(static_cast<Eigen::Index>(d));
    for (std::size_t j = 0; j < d; ++j) v(static_cast<Eigen::Index>(j)) = x.data()[i * d + j];
    return v;
}

void require_batch(const Tensor& x, std::span<const double> t, std::size_t dim, const char* what) {
    if (x.rank() != 2 || x.dim(1) != dim || x.dim(0) != t.size())
        throw nn::TensorError(std::string(what) + ": expected [" + std::to_string(t.size()) + "," +
                              std::to_string(dim) + "] batch, got " + nn::shape_str(x.shape()));
}

/// Vector field evaluated row by row, with the per-row Jacobian kept for the
/// backward pass: grad_x += J^T grad_out.
template <class F>
Tensor field(const char* name, const Tensor& x, std::span<const double> t, std::size_t dim, F eval) {
    require_batch(x, t, dim, name);
    const std::size_t n = x.dim(0);
    std::vector<double> out(n * dim);
    auto jac = std::make_shared<std::vector<double>>();
    if (x.requires_grad()) jac->resize(n * dim * dim);
    for (std::size_t i = 0; i < n; ++i) {
        Mat J;
        const Vec v = eval(row(x, i), t[i], x.requires_grad() ? &J : nullptr);
        for (std::size_t j = 0; j < dim; ++j) out[i * dim + j] = v(static_cast<Eigen::Index>(j));
        if (x.requires_grad())
            for (std::size_t r = 0; r < dim; ++r)
                for (std::size_t c = 0; c < dim; ++c)
                    (*jac)[(i * dim + r) * dim + c] = J(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
    }
    return nn::make_result(name, {n, dim}, std::move(out), {x},
                           [jac, n, dim](const nn::Node&, std::span<const double> g,
                                         std::span<std::vector<double>* const> gin) {
                               if (!gin[0]) return;
                               auto& gx = *gin[0];
                               for (std::size_t i = 0; i < n; ++i)
                                   for (std::size_t r = 0; r < dim; ++r) {
                                       const double gr = g[i * dim + r];
                                       const double* jrow = jac->data() + (i * dim + r) * dim;
                                       for (std::size_t c = 0; c < dim; ++c) gx[i * dim + c] += gr * jrow[c];
                                   }
                           });
}

} // namespace

// ---------------------------------------------------------------------------

void GaussianSpec::validate() const {
    if (mean.size() == 0) throw std::invalid_argument("GaussianSpec: empty mean");
    if (cov.rows() != mean.size() || cov.cols() != mean.size())
        throw std::invalid_argument("GaussianSpec: covariance shape does not match mean");
    if (!cov.isApprox(cov.transpose(), 1e-12)) throw std::invalid_argument("GaussianSpec: covariance not symmetric");
    factor(cov, "GaussianSpec");
}

GaussianSpec GaussianSpec::standard(std::size_t dim) {
    const auto n = static_cast<Eigen::Index>(dim);
    return {Vec::Zero(n), Mat::Identity(n, n)};
}

void GmmSpec::validate() const {
    if (means.empty()) throw std::invalid_argument("GmmSpec: at least one component required");
    if (weights.size() != means.size() || stds.size() != means.size())
        throw std::invalid_argument("GmmSpec: weights, means and stds must have equal length");
    double s = 0.0;
    for (double w : weights) {
        if (!(w > 0.0)) throw std::invalid_argument("GmmSpec: weights must be positive");
        s += w;
    }
    if (std::fabs(s - 1.0) > 1e-12) throw std::invalid_argument("GmmSpec: weights must sum to 1");
    for (const auto& m : means)
        if (m.size() != means.front().size()) throw std::invalid_argument("GmmSpec: ragged means");
    for (double sd : stds)
        if (!(sd > 0.0)) throw std::invalid_argument("GmmSpec: component std must be positive");
}

GmmSpec GmmSpec::ring(std::size_t n, double radius, double std) {
    GmmSpec g;
    for (std::size_t i = 0; i < n; ++i) {
        const double a = 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n);
        Vec m(2);
        m << radius * std::cos(a), radius * std::sin(a);
        g.means.push_back(m);
        g.weights.push_back(1.0 / static_cast<double>(n));
        g.stds.push_back(std);
    }
    return g;
}

Mat LinearGenerator::covariance(double t) const { return shifted(A * A.transpose(), t); }

std::vector<double> LinearGenerator::theta() const {
    std::vector<double> th;
    for (Eigen::Index r = 0; r < A.rows(); ++r)
        for (Eigen::Index c = 0; c < A.cols(); ++c) th.push_back(A(r, c));
    for (Eigen::Index r = 0; r < b.size(); ++r) th.push_back(b(r));
    return th;
}

LinearGenerator LinearGenerator::from_theta(std::span<const double> theta, std::size_t dim, std::size_t latent) {
    if (theta.size() != dim * latent + dim) throw std::invalid_argument("LinearGenerator: theta has wrong length");
    LinearGenerator g{Mat(dim, latent), Vec(dim)};
    std::size_t k = 0;
    for (std::size_t r = 0; r < dim; ++r)
        for (std::size_t c = 0; c < latent; ++c) g.A(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = theta[k++];
    for (std::size_t r = 0; r < dim; ++r) g.b(static_cast<Eigen::Index>(r)) = theta[k++];
    return g;
}

// ---------------------------------------------------------------------------

Vec gaussian_score(const GaussianSpec& q, const Vec& x, double t) {
    check_dim(q.dim(), static_cast<std::size_t>(x.size()), "gaussian_score");
    return -factor(shifted(q.cov, t), "gaussian_score").solve(x - q.mean);
}

double gaussian_log_density(const GaussianSpec& q, const Vec& x, double t) {
    check_dim(q.dim(), static_cast<std::size_t>(x.size()), "gaussian_log_density");
    return gauss_log_density(q.mean, shifted(q.cov, t), x, "gaussian_log_density");
}

namespace {

// log-weights of each component at x (unnormalized posterior), stabilized
Vec gmm_log_terms(const GmmSpec& q, const Vec& x, double t) {
    check_dim(q.dim(), static_cast<std::size_t>(x.size()), "gmm");
    const double n = static_cast<double>(x.size());
    Vec lt(static_cast<Eigen::Index>(q.components()));
    for (std::size_t i = 0; i < q.components(); ++i) {
        const double v = q.stds[i] * q.stds[i] + t * t;
        lt(static_cast<Eigen::Index>(i)) = std::log(q.weights[i]) - 0.5 * n * std::log(2.0 * std::numbers::pi * v) -
                                           0.5 * (x - q.means[i]).squaredNorm() / v;
    }
    return lt;
}

} // namespace

Vec gmm_responsibilities(const GmmSpec& q, const Vec& x, double t) {
    Vec lt = gmm_log_terms(q, x, t);
    const double m = lt.maxCoeff();
    Vec g = (lt.array() - m).exp();
    return g / g.sum();
}

double gmm_log_density(const GmmSpec& q, const Vec& x, double t) {
    Vec lt = gmm_log_terms(q, x, t);
    const double m = lt.maxCoeff();
    return m + std::log((lt.array() - m).exp().sum());
}

Vec gmm_score(const GmmSpec& q, const Vec& x, double t) {
    const Vec g = gmm_responsibilities(q, x, t);
    Vec s = Vec::Zero(x.size());
    for (std::size_t i = 0; i < q.components(); ++i) {
        const double v = q.stds[i] * q.stds[i] + t * t;
        s += g(static_cast<Eigen::Index>(i)) * (-(x - q.means[i]) / v);
    }
    return s;
}

Vec gmm_denoiser(const GmmSpec& q, const Vec& x, double t) {
    if (!(t > 0.0)) throw std::invalid_argument("gmm_denoiser: t must be positive");
    const Vec g = gmm_responsibilities(q, x, t);
    Vec d = Vec::Zero(x.size());
    for (std::size_t i = 0; i < q.components(); ++i) {
        const double s2 = q.stds[i] * q.stds[i];
        const double v = s2 + t * t;
        d += g(static_cast<Eigen::Index>(i)) * (q.means[i] * (t * t / v) + x * (s2 / v));
    }
    return d;
}

Mat gmm_score_jacobian(const GmmSpec& q, const Vec& x, double t) {
    const Vec g = gmm_responsibilities(q, x, t);
    const auto n = x.size();
    Vec s = Vec::Zero(n);
    Mat second = Mat::Zero(n, n);
    double diag = 0.0;
    for (std::size_t i = 0; i < q.components(); ++i) {
        const double v = q.stds[i] * q.stds[i] + t * t;
        const double gi = g(static_cast<Eigen::Index>(i));
        const Vec a = -(x - q.means[i]) / v;
        s += gi * a;
        second += gi * a * a.transpose();
        diag += gi / v;
    }
    return second - s * s.transpose() - diag * Mat::Identity(n, n);
}

Vec linear_gen_score(const LinearGenerator& g, const Vec& x, double t) {
    check_dim(g.dim(), static_cast<std::size_t>(x.size()), "linear_gen_score");
    return -factor(g.covariance(t), "linear_gen_score").solve(x - g.b);
}

double linear_gen_log_density(const LinearGenerator& g, const Vec& x, double t) {
    check_dim(g.dim(), static_cast<std::size_t>(x.size()), "linear_gen_log_density");
    return gauss_log_density(g.b, g.covariance(t), x, "linear_gen_log_density");
}

// ---------------------------------------------------------------------------

namespace {

/// Gaussian-family score field -(C + t^2 I)^{-1}(x - m); the inverse is
/// cached across rows that share t.
Tensor gaussian_field(const char* name, const Vec& mean, const Mat& cov, const Tensor& x,
                      std::span<const double> t) {
    double cached_t = std::numeric_limits<double>::quiet_NaN();
    Mat inv;
    return field(name, x, t, static_cast<std::size_t>(mean.size()), [&](const Vec& xi, double ti, Mat* J) {
        if (!(ti == cached_t)) {
            inv = factor(shifted(cov, ti), name).solve(Mat::Identity(mean.size(), mean.size()));
            cached_t = ti;
        }
        if (J) *J = -inv;
        return Vec(-inv * (xi - mean));
    });
}

} // namespace

Tensor gaussian_score(const GaussianSpec& q, const Tensor& x, std::span<const double> t) {
    return gaussian_field("gaussian_score", q.mean, q.cov, x, t);
}

Tensor linear_gen_score(const LinearGenerator& g, const Tensor& x, std::span<const double> t) {
    return gaussian_field("linear_gen_score", g.b, g.A * g.A.transpose(), x, t);
}

Tensor gmm_score(const GmmSpec& q, const Tensor& x, std::span<const double> t) {
    return field("gmm_score", x, t, q.dim(), [&](const Vec& xi, double ti, Mat* J) {
        if (J) *J = gmm_score_jacobian(q, xi, ti);
        return gmm_score(q, xi, ti);
    });
}

Tensor gmm_denoiser(const GmmSpec& q, const Tensor& x, std::span<const double> t) {
    return field("gmm_denoiser", x, t, q.dim(), [&](const Vec& xi, double ti, Mat* J) {
        if (J) *J = Mat::Identity(xi.size(), xi.size()) + ti * ti * gmm_score_jacobian(q, xi, ti);
        return gmm_denoiser(q, xi, ti);
    });
}

// ---------------------------------------------------------------------------

Tensor sample(const GaussianSpec& q, Rng& rng, std::size_t n) {
    const std::size_t d = q.dim();
    const Mat L = factor(q.cov, "sample").matrixL();
    std::vector<double> out(n * d);
    Vec z(static_cast<Eigen::Index>(d));
    for (std::size_t i = 0; i < n; ++i) {
        for (auto& v : z) v = rng.normal();
        const Vec x = q.mean + L * z;
        for (std::size_t j = 0; j < d; ++j) out[i * d + j] = x(static_cast<Eigen::Index>(j));
    }
    return Tensor::from({n, d}, std::move(out));
}

Tensor sample(const GmmSpec& q, Rng& rng, std::size_t n) {
    const std::size_t d = q.dim();
    std::vector<double> out(n * d);
    for (std::size_t i = 0; i < n; ++i) {
        double u = rng.uniform();
        std::size_t k = 0;
        while (k + 1 < q.components() && u >= q.weights[k]) u -= q.weights[k++];
        for (std::size_t j = 0; j < d; ++j)
            out[i * d + j] = q.means[k](static_cast<Eigen::Index>(j)) + q.stds[k] * rng.normal();
    }
    return Tensor::from({n, d}, std::move(out));
}

Tensor sample(const LinearGenerator& g, Rng& rng, std::size_t n) {
    const std::size_t d = g.dim(), l = g.latent_dim();
    std::vector<double> out(n * d);
    Vec z(static_cast<Eigen::Index>(l));
    for (std::size_t i = 0; i < n; ++i) {
        for (auto& v : z) v = rng.normal();
        const Vec x = g.A * z + g.b;
        for (std::size_t j = 0; j < d; ++j) out[i * d + j] = x(static_cast<Eigen::Index>(j));
    }
    return Tensor::from({n, d}, std::move(out));
}

Vec target_score(const TargetSpec& q, const Vec& x, double t) {
    return std::visit(
        [&](const auto& spec) -> Vec {
            using S = std::decay_t<decltype(spec)>;
            if constexpr (std::is_same_v<S, GaussianSpec>)
                return gaussian_score(spec, x, t);
            else
                return gmm_score(spec, x, t);
        },
        q);
}

Tensor target_score(const TargetSpec& q, const Tensor& x, std::span<const double> t) {
    return std::visit(
        [&](const auto& spec) -> Tensor {
            using S = std::decay_t<decltype(spec)>;
            if constexpr (std::is_same_v<S, GaussianSpec>)
                return gaussian_score(spec, x, t);
            else
                return gmm_score(spec, x, t);
        },
        q);
}

std::vector<double> divergence_terms(const LinearGenerator& p, const TargetSpec& q, const distances::DistanceFn& d,
                                     const diffusion::WeightingFn& w, std::span<const double> time_grid,
                                     std::size_t n_mc, Rng rng, const diffusion::DiffusionSpec& spec,
                                     const LinearGenerator* sampler) {
    if (time_grid.empty()) throw std::invalid_argument("divergence_value: empty time grid");
    if (n_mc == 0) throw std::invalid_argument("divergence_value: n_mc must be >= 1");
    const LinearGenerator& pi = sampler ? *sampler : p;
    const auto dim = static_cast<Eigen::Index>(p.dim());
    if (pi.dim() != p.dim()) throw std::invalid_argument("divergence_value: sampler dimension mismatch");

    std::vector<double> out;
    out.reserve(time_grid.size() * n_mc);
    Vec z(static_cast<Eigen::Index>(pi.latent_dim())), eps(dim);
    for (double t : time_grid) {
        if (!(t > 0.0)) throw std::invalid_argument("divergence_value: time grid values must be positive");
        const auto p_llt = factor(p.covariance(t), "divergence_value");
        for (std::size_t k = 0; k < n_mc; ++k) {
            for (auto& v : z) v = rng.normal();
            for (auto& v : eps) v = rng.normal();
            const Vec x0 = pi.A * z + pi.b;
            const Vec xt = x0 + t * eps;
            const Vec sq = target_score(q, xt, t);
            const Vec y = -p_llt.solve(xt - p.b) - sq;
            double wt;
            if (w.kind == diffusion::WeightingFn::Kind::sid) {
                const Vec dq = xt + t * t * sq;
                wt = diffusion::weight(w, t, spec, std::span<const double>(x0.data(), x0.size()),
                                       std::span<const double>(dq.data(), dq.size()));
            } else {
                wt = diffusion::weight(w, t, spec);
            }
            out.push_back(wt * distances::value(d, std::span<const double>(y.data(), y.size())));
        }
    }
    return out;
}

Estimate grid_mean(std::span<const double> terms, std::size_t grid_size) {
    if (grid_size == 0 || terms.empty() || terms.size() % grid_size != 0)
        throw std::invalid_argument("grid_mean: term count is not a multiple of the grid size");
    const std::size_t n = terms.size() / grid_size;
    double total = 0.0, var_total = 0.0;
    for (std::size_t k = 0; k < grid_size; ++k) {
        double mean = 0.0, m2 = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            // Welford
            const double v = terms[k * n + i];
            const double delta = v - mean;
            mean += delta / static_cast<double>(i + 1);
            m2 += delta * (v - mean);
        }
        total += mean;
        if (n > 1) var_total += m2 / static_cast<double>(n - 1) / static_cast<double>(n);
    }
    const double kt = static_cast<double>(grid_size);
    return {total / kt, std::sqrt(var_total) / kt, terms.size()};
}

Estimate divergence_value(const LinearGenerator& p, const TargetSpec& q, const distances::DistanceFn& d,
                          const diffusion::WeightingFn& w, std::span<const double> time_grid, std::size_t n_mc,
                          Rng rng, const diffusion::DiffusionSpec& spec, const LinearGenerator* sampler) {
    return grid_mean(divergence_terms(p, q, d, w, time_grid, n_mc, rng, spec, sampler), time_grid.size());
}

} // namespace sim::oracles
