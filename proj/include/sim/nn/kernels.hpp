#pragma once

// Dense row-major kernels behind the tensor primitives. Each kernel has an
// OpenMP version and a serial reference. Parallel versions partition output
// rows only; every output element is accumulated by one thread in a fixed
// order, so both versions agree bit-for-bit regardless of thread count.

#include <cstddef>
#include <span>

namespace sim::nn::kernels {

/// C[m,n] = A[m,k] * B[k,n]
void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t m, std::size_t k, std::size_t n);
void matmul_serial(std::span<const double> a, std::span<const double> b, std::span<double> c,
                   std::size_t m, std::size_t k, std::size_t n);

/// C[m,k] += G[m,n] * B[k,n]^T   (input gradient of matmul)
void matmul_nt_acc(std::span<const double> g, std::span<const double> b, std::span<double> c,
                   std::size_t m, std::size_t k, std::size_t n);
void matmul_nt_acc_serial(std::span<const double> g, std::span<const double> b,
                          std::span<double> c, std::size_t m, std::size_t k, std::size_t n);

/// C[k,n] += A[m,k]^T * G[m,n]   (weight gradient of matmul)
void matmul_tn_acc(std::span<const double> a, std::span<const double> g, std::span<double> c,
                   std::size_t m, std::size_t k, std::size_t n);
void matmul_tn_acc_serial(std::span<const double> a, std::span<const double> g,
                          std::span<double> c, std::size_t m, std::size_t k, std::size_t n);

/// Number of threads the parallel kernels will use (1 without OpenMP).
int max_threads();

} // namespace sim::nn::kernels
