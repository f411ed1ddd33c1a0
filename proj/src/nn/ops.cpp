#include "sim/nn/ops.hpp"

#include <cmath>

#include "sim/nn/kernels.hpp"

namespace sim::nn {

namespace {

void require_rank(const Tensor& t, std::size_t r, const char* op) {
    if (t.rank() != r)
        throw TensorError(std::string(op) + ": expected rank " + std::to_string(r) + ", got " +
                          shape_str(t.shape()));
}

void require_same(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw TensorError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                          shape_str(b.shape()));
}

// Elementwise unary primitive; df(x, y) is the local derivative.
template <class F, class DF>
Tensor unary(const char* op, const Tensor& a, F f, DF df) {
    auto x = a.data();
    std::vector<double> y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
    return make_result(op, a.shape(), std::move(y), {a},
                       [df](const Node& self, std::span<const double> g, std::span<std::vector<double>* const> gin) {
                           if (!gin[0]) return;
                           const auto& xv = self.inputs[0]->value;
                           auto& out = *gin[0];
                           for (std::size_t i = 0; i < g.size(); ++i) out[i] += g[i] * df(xv[i], self.value[i]);
                       });
}

} // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k)
        throw TensorError("matmul: inner dimension mismatch " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    std::vector<double> c(m * n);
    kernels::matmul(a.data(), b.data(), c, m, k, n);
    return make_result("matmul", {m, n}, std::move(c), {a, b},
                       [m, k, n](const Node& self, std::span<const double> g, std::span<std::vector<double>* const> gin) {
                           if (gin[0]) kernels::matmul_nt_acc(g, self.inputs[1]->value, *gin[0], m, k, n);
                           if (gin[1]) kernels::matmul_tn_acc(self.inputs[0]->value, g, *gin[1], m, k, n);
                       });
}

Tensor affine(const Tensor& x, const Tensor& w, const Tensor& bias) {
    require_rank(x, 2, "affine");
    require_rank(w, 2, "affine");
    require_rank(bias, 1, "affine");
    const std::size_t m = x.dim(0), k = x.dim(1), n = w.dim(1);
    if (w.dim(0) != k || bias.dim(0) != n)
        throw TensorError("affine: shapes " + shape_str(x.shape()) + " * " + shape_str(w.shape()) + " + " +
                          shape_str(bias.shape()) + " do not conform");
    std::vector<double> c(m * n);
    kernels::matmul(x.data(), w.data(), c, m, k, n);
    auto bv = bias.data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) c[i * n + j] += bv[j];
    return make_result("affine", {m, n}, std::move(c), {x, w, bias},
                       [m, k, n](const Node& self, std::span<const double> g, std::span<std::vector<double>* const> gin) {
                           if (gin[0]) kernels::matmul_nt_acc(g, self.inputs[1]->value, *gin[0], m, k, n);
                           if (gin[1]) kernels::matmul_tn_acc(self.inputs[0]->value, g, *gin[1], m, k, n);
                           if (gin[2]) {
                               auto& gb = *gin[2];
                               for (std::size_t i = 0; i < m; ++i)
                                   for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
                           }
                       });
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same(a, b, "add");
    std::vector<double> y(a.size());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] + b.data()[i];
    return make_result("add", a.shape(), std::move(y), {a, b},
                       [](const Node&, std::span<const double> g, std::span<std::vector<double>* const> gin) {
                           for (int k = 0; k < 2; ++k)
                               if (gin[k])
                                   for (std::size_t i = 0; i < g.size(); ++i) (*gin[k])[i] += g[i];
                       });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same(a, b, "sub");
    std::vector<double> y(a.size());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] - b.data()[i];
    return make_result("sub", a.shape(), std::move(y), {a, b},
                       [](const Node&, std::span<const double> g, std::span<std::vector<double>* const> gin) {
                           if (gin[0])
                               for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i];
                           if (gin[1])
                               for (std::size_t i = 0; i < g.size(); ++i) (*gin[1])[i] -= g[i];
                       });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same(a, b, "mul");
    std::vector<double> y(a.size());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] * b.data()[i];
    return make_result("mul", a.shape(), std::move(y), {a, b},
                       [](const Node& self, std::span<const double> g, std::span<std::vector<double>* const> gin) {
                           const auto& av = self.inputs[0]->value;
                           const auto& bv = self.inputs[1]->value;
                           if (gin[0])
                               for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i] * bv[i];
                           if (gin[1])
                               for (std::size_t i = 0; i < g.size(); ++i) (*gin[1])[i] += g[i] * av[i];
                       });
}

Tensor div(const Tensor& a, const Tensor& b) {
    require_same(a, b, "div");
    std::vector<double> y(a.size());
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (b.data()[i] == 0.0) throw TensorError("div: division by zero at element " + std::to_string(i));
        y[i] = a.data()[i] / b.data()[i];
    }
    return make_result("div", a.shape(), std::move(y), {a, b},
                       [](const Node& self, std::span<const double> g, std::span<std::vector<double>* const> gin) {
                           const auto& bv = self.inputs[1]->value;
                           if (gin[0])
                               for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i] / bv[i];
                           if (gin[1])
                               for (std::size_t i = 0; i < g.size(); ++i)
                                   (*gin[1])[i] -= g[i] * self.value[i] / bv[i];
                       });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor scale(const Tensor& a, double s) {
    return unary("scale", a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& a, double s) {
    return unary("add_scalar", a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor square(const Tensor& a) {
    return unary("square", a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor sqrt(const Tensor& a) {
    for (double x : a.data())
        if (!(x >= 0.0)) throw TensorError("sqrt: negative or NaN input");
    return unary("sqrt", a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

Tensor exp(const Tensor& a) {
    return unary("exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
    for (double x : a.data())
        if (!(x > 0.0)) throw TensorError("log: non-positive input");
    return unary("log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor relu(const Tensor& a) {
    return unary("relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
                 [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor silu(const Tensor& a) {
    return unary(
        "silu", a, [](double x) { return x / (1.0 + std::exp(-x)); },
        [](double x, double) {
            const double s = 1.0 / (1.0 + std::exp(-x));
            return s * (1.0 + x * (1.0 - s));
        });
}

Tensor tanh(const Tensor& a) {
    return unary("tanh", a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor powi(const Tensor& a, int n) {
    if (n < 1) throw TensorError("powi: exponent must be >= 1");
    auto ipow = [](double x, int e) {
        double r = 1.0;
        for (int i = 0; i < e; ++i) r *= x;
        return r;
    };
    return unary("powi", a, [n, ipow](double x) { return ipow(x, n); },
                 [n, ipow](double x, double) { return n * ipow(x, n - 1); });
}

Tensor abs(const Tensor& a) {
    return unary("abs", a, [](double x) { return std::fabs(x); },
                 [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
    if (!(lo <= hi)) throw TensorError("clamp: lo > hi");
    return unary("clamp", a, [lo, hi](double x) { return x < lo ? lo : (x > hi ? hi : x); },
                 [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

Tensor sign(const Tensor& a) {
    return unary("sign", a, [](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); },
                 [](double, double) { return 0.0; });
}

Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double x : a.data()) s += x;
    return make_result("sum", {}, {s}, {a},
                       [](const Node&, std::span<const double> g, std::span<std::vector<double>* const> gin) {
                           if (gin[0])
                               for (auto& v : *gin[0]) v += g[0];
                       });
}

Tensor mean(const Tensor& a) {
    if (a.size() == 0) throw TensorError("mean: empty tensor");
    double s = 0.0;
    for (double x : a.data()) s += x;
    const double inv = 1.0 / static_cast<double>(a.size());
    return make_result("mean", {}, {s * inv}, {a},
                       [inv](const Node&, std::span<const double> g, std::span<std::vector<double>* const> gin) {
                           if (gin[0])
                               for (auto& v : *gin[0]) v += g[0] * inv;
                       });
}

Tensor sum_cols(const Tensor& a) {
    require_rank(a, 2, "sum_cols");
    const std::size_t m = a.dim(0), n = a.dim(1);
    std::vector<double> y(m, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) y[i] += a.data()[i * n + j];
    return make_result("sum_cols", {m}, std::move(y), {a},
                       [m, n](const Node&, std::span<const double> g, std::span<std::vector<double>* const> gin) {
                           if (!gin[0]) return;
                           for (std::size_t i = 0; i < m; ++i)
                               for (std::size_t j = 0; j < n; ++j) (*gin[0])[i * n + j] += g[i];
                       });
}

Tensor dot_rows(const Tensor& a, const Tensor& b) { return sum_cols(mul(a, b)); }

Tensor broadcast_rows(const Tensor& v, std::size_t rows) {
    require_rank(v, 1, "broadcast_rows");
    const std::size_t n = v.dim(0);
    std::vector<double> y(rows * n);
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < n; ++j) y[i * n + j] = v.data()[j];
    return make_result("broadcast_rows", {rows, n}, std::move(y), {v},
                       [rows, n](const Node&, std::span<const double> g, std::span<std::vector<double>* const> gin) {
                           if (!gin[0]) return;
                           for (std::size_t i = 0; i < rows; ++i)
                               for (std::size_t j = 0; j < n; ++j) (*gin[0])[j] += g[i * n + j];
                       });
}

Tensor broadcast_cols(const Tensor& v, std::size_t cols) {
    require_rank(v, 1, "broadcast_cols");
    const std::size_t m = v.dim(0);
    std::vector<double> y(m * cols);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < cols; ++j) y[i * cols + j] = v.data()[i];
    return make_result("broadcast_cols", {m, cols}, std::move(y), {v},
                       [m, cols](const Node&, std::span<const double> g, std::span<std::vector<double>* const> gin) {
                           if (!gin[0]) return;
                           for (std::size_t i = 0; i < m; ++i)
                               for (std::size_t j = 0; j < cols; ++j) (*gin[0])[i] += g[i * cols + j];
                       });
}

Tensor scale_rows(const Tensor& a, std::span<const double> s) {
    require_rank(a, 2, "scale_rows");
    const std::size_t m = a.dim(0), n = a.dim(1);
    if (s.size() != m)
        throw TensorError("scale_rows: " + std::to_string(s.size()) + " factors for " + shape_str(a.shape()));
    std::vector<double> f(s.begin(), s.end());
    std::vector<double> y(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) y[i * n + j] = a.data()[i * n + j] * f[i];
    return make_result("scale_rows", {m, n}, std::move(y), {a},
                       [m, n, f = std::move(f)](const Node&, std::span<const double> g,
                                                std::span<std::vector<double>* const> gin) {
                           if (!gin[0]) return;
                           for (std::size_t i = 0; i < m; ++i)
                               for (std::size_t j = 0; j < n; ++j) (*gin[0])[i * n + j] += g[i * n + j] * f[i];
                       });
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "concat_cols");
    require_rank(b, 2, "concat_cols");
    const std::size_t m = a.dim(0), na = a.dim(1), nb = b.dim(1);
    if (b.dim(0) != m)
        throw TensorError("concat_cols: row mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    const std::size_t n = na + nb;
    std::vector<double> y(m * n);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < na; ++j) y[i * n + j] = a.data()[i * na + j];
        for (std::size_t j = 0; j < nb; ++j) y[i * n + na + j] = b.data()[i * nb + j];
    }
    return make_result("concat_cols", {m, n}, std::move(y), {a, b},
                       [m, na, nb, n](const Node&, std::span<const double> g, std::span<std::vector<double>* const> gin) {
                           for (std::size_t i = 0; i < m; ++i) {
                               if (gin[0])
                                   for (std::size_t j = 0; j < na; ++j) (*gin[0])[i * na + j] += g[i * n + j];
                               if (gin[1])
                                   for (std::size_t j = 0; j < nb; ++j) (*gin[1])[i * nb + j] += g[i * n + na + j];
                           }
                       });
}

} // namespace sim::nn
