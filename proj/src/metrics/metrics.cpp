#include "sim/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <Eigen/Eigenvalues>

namespace sim::metrics {

namespace {

void check_set(const Tensor& x, const char* what, std::size_t min_rows) {
    if (x.rank() != 2 || x.dim(0) < min_rows)
        throw std::invalid_argument(std::string(what) + ": need a [n, d] sample set with n >= " +
                                    std::to_string(min_rows) + ", got " + nn::shape_str(x.shape()));
}

void check_pair(const Tensor& x, const Tensor& y, const char* what, std::size_t min_rows) {
    check_set(x, what, min_rows);
    check_set(y, what, min_rows);
    if (x.dim(1) != y.dim(1)) throw std::invalid_argument(std::string(what) + ": dimension mismatch");
}

inline double sqdist(const double* a, const double* b, std::size_t d) {
    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
        const double u = a[k] - b[k];
        s += u * u;
    }
    return s;
}

// Summed RBF kernel at squared distance r2. When the bandwidths form a
// doubling ladder the narrower kernels are powers of the widest one.
struct KernelSum {
    std::vector<double> coef;  // -1/(2h^2), ascending h
    bool doubling = false;

    explicit KernelSum(std::span<const double> bandwidths) {
        if (bandwidths.empty()) throw std::invalid_argument("mmd_rbf: empty bandwidth list");
        std::vector<double> h(bandwidths.begin(), bandwidths.end());
        for (double v : h)
            if (!(v > 0.0) || !std::isfinite(v)) throw std::invalid_argument("mmd_rbf: bandwidths must be positive");
        std::sort(h.begin(), h.end());
        doubling = h.size() > 1;
        for (std::size_t i = 1; i < h.size(); ++i)
            if (h[i] != 2.0 * h[i - 1]) doubling = false;
        for (double v : h) coef.push_back(-1.0 / (2.0 * v * v));
    }

    double operator()(double r2) const {
        if (!doubling) {
            double s = 0.0;
            for (double c : coef) s += std::exp(c * r2);
            return s;
        }
        // e_k = exp(c_k r2) with c_{k-1} = 4 c_k
        double e = std::exp(coef.back() * r2);
        double s = e;
        for (std::size_t k = coef.size() - 1; k-- > 0;) {
            e = (e * e) * (e * e);
            s += e;
        }
        return s;
    }
};

// Row i of the pairwise kernel sums: within-set (j > i) or cross (all j).
inline double row_sum_within(const KernelSum& k, const double* x, std::size_t n, std::size_t d, std::size_t i) {
    double s = 0.0;
    for (std::size_t j = i + 1; j < n; ++j) s += k(sqdist(x + i * d, x + j * d, d));
    return s;
}

inline double row_sum_cross(const KernelSum& k, const double* x, const double* y, std::size_t m, std::size_t d,
                            std::size_t i) {
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j) s += k(sqdist(x + i * d, y + j * d, d));
    return s;
}

struct PairSums {
    double xx = 0.0, yy = 0.0, xy = 0.0;
};

PairSums combine(const std::vector<double>& rx, const std::vector<double>& ry, const std::vector<double>& rxy) {
    PairSums p;
    for (double v : rx) p.xx += v;
    for (double v : ry) p.yy += v;
    for (double v : rxy) p.xy += v;
    return p;
}

PairSums pair_sums(const KernelSum& k, const Tensor& x, const Tensor& y, bool parallel) {
    const std::size_t n = x.dim(0), m = y.dim(0), d = x.dim(1);
    const double* xp = x.data().data();
    const double* yp = y.data().data();
    std::vector<double> rx(n), ry(m), rxy(n);
    const auto ln = static_cast<long long>(n), lm = static_cast<long long>(m);
    // dynamic schedule: within-set rows shrink with i. Each row is owned by
    // one thread and reduced afterwards in index order.
#pragma omp parallel if (parallel)
    {
#pragma omp for schedule(dynamic, 16) nowait
        for (long long i = 0; i < ln; ++i)
            rx[static_cast<std::size_t>(i)] = row_sum_within(k, xp, n, d, static_cast<std::size_t>(i));
#pragma omp for schedule(dynamic, 16) nowait
        for (long long i = 0; i < lm; ++i)
            ry[static_cast<std::size_t>(i)] = row_sum_within(k, yp, m, d, static_cast<std::size_t>(i));
#pragma omp for schedule(dynamic, 16)
        for (long long i = 0; i < ln; ++i)
            rxy[static_cast<std::size_t>(i)] = row_sum_cross(k, xp, yp, m, d, static_cast<std::size_t>(i));
    }
    return combine(rx, ry, rxy);
}

double mmd_from_sums(const PairSums& p, const KernelSum& k, std::size_t n, std::size_t m, bool unbiased) {
    const double nn_ = static_cast<double>(n), mm = static_cast<double>(m);
    if (unbiased) return 2.0 * p.xx / (nn_ * (nn_ - 1.0)) + 2.0 * p.yy / (mm * (mm - 1.0)) - 2.0 * p.xy / (nn_ * mm);
    const double diag = k(0.0);
    return (2.0 * p.xx + nn_ * diag) / (nn_ * nn_) + (2.0 * p.yy + mm * diag) / (mm * mm) - 2.0 * p.xy / (nn_ * mm);
}

// MMD is symmetric; evaluating on a canonical argument order makes the
// floating-point result symmetric too.
bool swapped(const Tensor& x, const Tensor& y) {
    if (x.dim(0) != y.dim(0)) return x.dim(0) > y.dim(0);
    auto a = x.data(), b = y.data();
    return std::lexicographical_compare(b.begin(), b.end(), a.begin(), a.end());
}

double mmd_impl(const Tensor& x, const Tensor& y, std::span<const double> bandwidths, bool unbiased, bool parallel) {
    check_pair(x, y, "mmd_rbf", 2);
    const KernelSum k(bandwidths);
    const Tensor& a = swapped(x, y) ? y : x;
    const Tensor& b = swapped(x, y) ? x : y;
    return mmd_from_sums(pair_sums(k, a, b, parallel), k, a.dim(0), b.dim(0), unbiased);
}

} // namespace

double median_distance(const Tensor& x, const Tensor& y, const MmdOptions& opts) {
    check_pair(x, y, "median_distance", 1);
    const std::size_t d = x.dim(1);
    const std::size_t nx = std::min(x.dim(0), opts.median_subsample);
    const std::size_t ny = std::min(y.dim(0), opts.median_subsample);
    // pooled set ordered canonically so the result is symmetric in (x, y)
    const bool sw = swapped(x, y);
    const Tensor& a = sw ? y : x;
    const Tensor& b = sw ? x : y;
    const std::size_t na = sw ? ny : nx, nb = sw ? nx : ny;
    std::vector<const double*> pts;
    for (std::size_t i = 0; i < na; ++i) pts.push_back(a.data().data() + i * d);
    for (std::size_t i = 0; i < nb; ++i) pts.push_back(b.data().data() + i * d);
    std::vector<double> dist;
    dist.reserve(pts.size() * (pts.size() - 1) / 2);
    for (std::size_t i = 0; i < pts.size(); ++i)
        for (std::size_t j = i + 1; j < pts.size(); ++j) dist.push_back(std::sqrt(sqdist(pts[i], pts[j], d)));
    if (dist.empty()) return opts.bandwidth_floor;
    auto mid = dist.begin() + static_cast<std::ptrdiff_t>(dist.size() / 2);
    std::nth_element(dist.begin(), mid, dist.end());
    return std::max(*mid, opts.bandwidth_floor);
}

std::vector<double> bandwidth_ladder(const Tensor& x, const Tensor& y, const MmdOptions& opts) {
    const double med = median_distance(x, y, opts);
    std::vector<double> h;
    for (double m : opts.multipliers) h.push_back(std::max(m * med, opts.bandwidth_floor));
    return h;
}

double mmd_rbf(const Tensor& x, const Tensor& y, std::span<const double> bandwidths, bool unbiased) {
    return mmd_impl(x, y, bandwidths, unbiased, true);
}

double mmd_rbf_serial(const Tensor& x, const Tensor& y, std::span<const double> bandwidths, bool unbiased) {
    return mmd_impl(x, y, bandwidths, unbiased, false);
}

double mmd_rbf(const Tensor& x, const Tensor& y, const MmdOptions& opts) {
    const auto h = bandwidth_ladder(x, y, opts);
    return mmd_rbf(x, y, h, opts.unbiased);
}

std::vector<double> mmd_permutation_null(const Tensor& x, const Tensor& y, std::span<const double> bandwidths,
                                         std::size_t permutations, Rng& rng, bool unbiased) {
    check_pair(x, y, "mmd_permutation_null", 2);
    const std::size_t n = x.dim(0), m = y.dim(0), d = x.dim(1);
    std::vector<double> pooled(x.data().begin(), x.data().end());
    pooled.insert(pooled.end(), y.data().begin(), y.data().end());
    std::vector<std::size_t> idx(n + m);
    std::vector<double> out;
    out.reserve(permutations);
    for (std::size_t p = 0; p < permutations; ++p) {
        std::iota(idx.begin(), idx.end(), 0);
        for (std::size_t i = idx.size() - 1; i > 0; --i) std::swap(idx[i], idx[rng.uniform_index(i + 1)]);
        std::vector<double> a(n * d), b(m * d);
        for (std::size_t i = 0; i < n; ++i) std::copy_n(pooled.begin() + static_cast<std::ptrdiff_t>(idx[i] * d), d, a.begin() + static_cast<std::ptrdiff_t>(i * d));
        for (std::size_t i = 0; i < m; ++i)
            std::copy_n(pooled.begin() + static_cast<std::ptrdiff_t>(idx[n + i] * d), d, b.begin() + static_cast<std::ptrdiff_t>(i * d));
        out.push_back(mmd_rbf(Tensor::from({n, d}, std::move(a)), Tensor::from({m, d}, std::move(b)), bandwidths,
                              unbiased));
    }
    return out;
}

double quantile(std::vector<double> values, double p) {
    if (values.empty()) throw std::invalid_argument("quantile: empty sample");
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("quantile: p outside [0, 1]");
    std::sort(values.begin(), values.end());
    const double pos = p * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

namespace {

oracles::Mat psd_sqrt(const oracles::Mat& m) {
    Eigen::SelfAdjointEigenSolver<oracles::Mat> es(m);
    const oracles::Vec ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

void moments(const Tensor& x, oracles::Vec& mean, oracles::Mat& cov) {
    const std::size_t n = x.dim(0), d = x.dim(1);
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> m(
        x.data().data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    mean = m.colwise().mean().transpose();
    const oracles::Mat c = m.rowwise() - mean.transpose();
    cov = c.transpose() * c / static_cast<double>(n - 1);
    cov += 1e-9 * oracles::Mat::Identity(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
}

} // namespace

double gaussian_w2(const oracles::Vec& mean_x, const oracles::Mat& cov_x, const oracles::Vec& mean_y,
                   const oracles::Mat& cov_y) {
    if (mean_x.size() != mean_y.size() || cov_x.rows() != mean_x.size() || cov_y.rows() != mean_y.size())
        throw std::invalid_argument("gaussian_w2: dimension mismatch");
    const oracles::Mat ry = psd_sqrt(cov_y);
    const oracles::Mat cross = psd_sqrt(ry * cov_x * ry);
    const double v = (mean_x - mean_y).squaredNorm() + (cov_x + cov_y - 2.0 * cross).trace();
    return std::sqrt(std::max(v, 0.0));
}

double gaussian_w2(const Tensor& x, const Tensor& y) {
    check_pair(x, y, "gaussian_w2", 1);
    const std::size_t need = x.dim(1) + 1;
    if (x.dim(0) < need || y.dim(0) < need)
        throw std::invalid_argument("gaussian_w2: need at least dimension+1 = " + std::to_string(need) +
                                    " samples per set");
    oracles::Vec mx, my;
    oracles::Mat cx, cy;
    moments(x, mx, cx);
    moments(y, my, cy);
    return gaussian_w2(mx, cx, my, cy);
}

Coverage mode_coverage(const Tensor& x, const oracles::GmmSpec& gmm, double radius_multiplier, double min_fraction) {
    if (!(radius_multiplier > 0.0)) throw std::invalid_argument("mode_coverage: radius multiplier must be positive");
    gmm.validate();
    check_set(x, "mode_coverage", 1);
    if (x.dim(1) != gmm.dim()) throw std::invalid_argument("mode_coverage: dimension mismatch");
    const std::size_t n = x.dim(0), d = x.dim(1);
    Coverage c;
    c.counts.assign(gmm.components(), 0);
    for (std::size_t k = 0; k < gmm.components(); ++k) {
        const double r = radius_multiplier * gmm.stds[k];
        const double r2 = r * r;
        for (std::size_t i = 0; i < n; ++i)
            if (sqdist(x.data().data() + i * d, gmm.means[k].data(), d) <= r2) ++c.counts[k];
        if (static_cast<double>(c.counts[k]) >= min_fraction * static_cast<double>(n)) ++c.covered;
    }
    c.fraction = static_cast<double>(c.covered) / static_cast<double>(gmm.components());
    return c;
}

} // namespace sim::metrics
