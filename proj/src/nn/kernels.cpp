#include "sim/nn/kernels.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace sim::nn::kernels {

namespace {

// Rows below this size are not worth a parallel region.
constexpr std::size_t kParallelMinWork = 1 << 14;

inline void matmul_row(const double* a, const double* b, double* c, std::size_t k,
                       std::size_t n) {
    for (std::size_t j = 0; j < n; ++j) c[j] = 0.0;
    for (std::size_t p = 0; p < k; ++p) {
        const double av = a[p];
        const double* brow = b + p * n;
        for (std::size_t j = 0; j < n; ++j) c[j] += av * brow[j];
    }
}

inline void matmul_nt_row(const double* g, const double* b, double* c, std::size_t k,
                          std::size_t n) {
    for (std::size_t p = 0; p < k; ++p) {
        const double* brow = b + p * n;
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) acc += g[j] * brow[j];
        c[p] += acc;
    }
}

inline void matmul_tn_row(const double* a, const double* g, double* crow, std::size_t p,
                          std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double av = a[i * k + p];
        const double* grow = g + i * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * grow[j];
    }
}

} // namespace

int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t m, std::size_t k, std::size_t n) {
    const bool par = m * k * n >= kParallelMinWork;
    const auto rows = static_cast<long long>(m);
#pragma omp parallel for schedule(static) if (par)
    for (long long i = 0; i < rows; ++i) {
        const auto r = static_cast<std::size_t>(i);
        matmul_row(a.data() + r * k, b.data(), c.data() + r * n, k, n);
    }
}

void matmul_serial(std::span<const double> a, std::span<const double> b, std::span<double> c,
                   std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) matmul_row(a.data() + i * k, b.data(), c.data() + i * n, k, n);
}

void matmul_nt_acc(std::span<const double> g, std::span<const double> b, std::span<double> c,
                   std::size_t m, std::size_t k, std::size_t n) {
    const bool par = m * k * n >= kParallelMinWork;
    const auto rows = static_cast<long long>(m);
#pragma omp parallel for schedule(static) if (par)
    for (long long i = 0; i < rows; ++i) {
        const auto r = static_cast<std::size_t>(i);
        matmul_nt_row(g.data() + r * n, b.data(), c.data() + r * k, k, n);
    }
}

void matmul_nt_acc_serial(std::span<const double> g, std::span<const double> b,
                          std::span<double> c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) matmul_nt_row(g.data() + i * n, b.data(), c.data() + i * k, k, n);
}

void matmul_tn_acc(std::span<const double> a, std::span<const double> g, std::span<double> c,
                   std::size_t m, std::size_t k, std::size_t n) {
    const bool par = m * k * n >= kParallelMinWork;
    const auto rows = static_cast<long long>(k);
#pragma omp parallel for schedule(static) if (par)
    for (long long p = 0; p < rows; ++p) {
        const auto r = static_cast<std::size_t>(p);
        matmul_tn_row(a.data(), g.data(), c.data() + r * n, r, m, k, n);
    }
}

void matmul_tn_acc_serial(std::span<const double> a, std::span<const double> g,
                          std::span<double> c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t p = 0; p < k; ++p) matmul_tn_row(a.data(), g.data(), c.data() + p * n, p, m, k, n);
}

} // namespace sim::nn::kernels
