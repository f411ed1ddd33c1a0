#include "sim/distances.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "sim/nn/ops.hpp"

namespace sim::distances {

DistanceFn DistanceFn::l2() { return {Kind::l2, 2, 1.0, 1.0, 1.0}; }
DistanceFn DistanceFn::power(int alpha) {
    DistanceFn d{Kind::power, alpha, 1.0, 1.0, 1.0};
    d.validate();
    return d;
}
DistanceFn DistanceFn::exp_power(int alpha, double beta) {
    DistanceFn d{Kind::exp_power, alpha, beta, 1.0, 1.0};
    d.validate();
    return d;
}
DistanceFn DistanceFn::l1() { return {Kind::l1, 2, 1.0, 1.0, 1.0}; }
DistanceFn DistanceFn::huber(double delta) {
    DistanceFn d{Kind::huber, 2, 1.0, delta, 1.0};
    d.validate();
    return d;
}
DistanceFn DistanceFn::pseudo_huber(double c) {
    DistanceFn d{Kind::pseudo_huber, 2, 1.0, 1.0, c};
    d.validate();
    return d;
}
DistanceFn DistanceFn::pseudo_huber_for_dim(std::size_t dim) {
    return pseudo_huber(0.1 * std::sqrt(static_cast<double>(dim)));
}

void DistanceFn::validate() const {
    if ((kind == Kind::power || kind == Kind::exp_power) && (alpha < 2 || alpha % 2 != 0))
        throw std::invalid_argument("distance " + to_string(kind) + ": alpha must be an even integer >= 2, got " +
                                    std::to_string(alpha));
    if (kind == Kind::exp_power && !(beta > 0.0)) throw std::invalid_argument("exp_power: beta must be positive");
    if (kind == Kind::huber && !(delta > 0.0)) throw std::invalid_argument("huber: delta must be positive");
    if (kind == Kind::pseudo_huber && !(c > 0.0)) throw std::invalid_argument("pseudo_huber: c must be positive");
}

std::string DistanceFn::name() const {
    std::ostringstream os;
    os << to_string(kind);
    switch (kind) {
        case Kind::power: os << "(" << alpha << ")"; break;
        case Kind::exp_power: os << "(" << alpha << "," << beta << ")"; break;
        case Kind::huber: os << "(" << delta << ")"; break;
        case Kind::pseudo_huber: os << "(" << c << ")"; break;
        default: break;
    }
    return os.str();
}

std::string to_string(DistanceFn::Kind k) {
    switch (k) {
        case DistanceFn::Kind::l2: return "l2";
        case DistanceFn::Kind::power: return "power";
        case DistanceFn::Kind::exp_power: return "exp_power";
        case DistanceFn::Kind::l1: return "l1";
        case DistanceFn::Kind::huber: return "huber";
        case DistanceFn::Kind::pseudo_huber: return "pseudo_huber";
    }
    return "?";
}

DistanceFn::Kind distance_kind_from_string(const std::string& s) {
    if (s == "l2") return DistanceFn::Kind::l2;
    if (s == "power") return DistanceFn::Kind::power;
    if (s == "exp_power") return DistanceFn::Kind::exp_power;
    if (s == "l1") return DistanceFn::Kind::l1;
    if (s == "huber") return DistanceFn::Kind::huber;
    if (s == "pseudo_huber") return DistanceFn::Kind::pseudo_huber;
    throw std::invalid_argument("unknown distance '" + s + "'");
}

namespace {

double ipow(double x, int n) {
    double r = 1.0;
    for (int i = 0; i < n; ++i) r *= x;
    return r;
}

double power_norm(std::span<const double> y, int alpha) {
    double s = 0.0;
    for (double v : y) s += ipow(v, alpha);
    return s;
}

double sq_norm(std::span<const double> y) {
    double s = 0.0;
    for (double v : y) s += v * v;
    return s;
}

double sgn(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

} // namespace

double value(const DistanceFn& d, std::span<const double> y) {
    switch (d.kind) {
        case DistanceFn::Kind::l2: return sq_norm(y);
        case DistanceFn::Kind::power: return power_norm(y, d.alpha);
        case DistanceFn::Kind::exp_power: return std::expm1(d.beta * power_norm(y, d.alpha));
        case DistanceFn::Kind::l1: {
            double s = 0.0;
            for (double v : y) s += std::fabs(v);
            return s;
        }
        case DistanceFn::Kind::huber: {
            double s = 0.0;
            for (double v : y) {
                const double a = std::fabs(v);
                s += a <= d.delta ? 0.5 * v * v : d.delta * (a - 0.5 * d.delta);
            }
            return s;
        }
        case DistanceFn::Kind::pseudo_huber: {
            // sqrt(r^2 + c^2) - c written to avoid cancellation for small r
            const double r2 = sq_norm(y);
            return r2 / (std::sqrt(r2 + d.c * d.c) + d.c);
        }
    }
    return 0.0;
}

std::vector<double> derivative(const DistanceFn& d, std::span<const double> y) {
    std::vector<double> g(y.size());
    switch (d.kind) {
        case DistanceFn::Kind::l2:
            for (std::size_t i = 0; i < y.size(); ++i) g[i] = 2.0 * y[i];
            break;
        case DistanceFn::Kind::power:
            for (std::size_t i = 0; i < y.size(); ++i) g[i] = d.alpha * ipow(y[i], d.alpha - 1);
            break;
        case DistanceFn::Kind::exp_power: {
            const double f = d.alpha * d.beta * std::exp(d.beta * power_norm(y, d.alpha));
            for (std::size_t i = 0; i < y.size(); ++i) g[i] = f * ipow(y[i], d.alpha - 1);
            break;
        }
        case DistanceFn::Kind::l1:
            for (std::size_t i = 0; i < y.size(); ++i) g[i] = sgn(y[i]);
            break;
        case DistanceFn::Kind::huber:
            for (std::size_t i = 0; i < y.size(); ++i) g[i] = std::clamp(y[i], -d.delta, d.delta);
            break;
        case DistanceFn::Kind::pseudo_huber: {
            const double inv = 1.0 / std::sqrt(sq_norm(y) + d.c * d.c);
            for (std::size_t i = 0; i < y.size(); ++i) g[i] = y[i] * inv;
            break;
        }
    }
    return g;
}

nn::Tensor derivative(const DistanceFn& d, const nn::Tensor& y) {
    if (y.rank() != 2) throw nn::TensorError("distance derivative expects a [B,D] batch, got " + nn::shape_str(y.shape()));
    const std::size_t cols = y.dim(1);
    switch (d.kind) {
        case DistanceFn::Kind::l2: return nn::scale(y, 2.0);
        case DistanceFn::Kind::power: return nn::scale(nn::powi(y, d.alpha - 1), d.alpha);
        case DistanceFn::Kind::exp_power: {
            auto norm = nn::sum_cols(nn::powi(y, d.alpha));
            auto factor = nn::scale(nn::exp(nn::scale(norm, d.beta)), d.alpha * d.beta);
            return nn::mul(nn::broadcast_cols(factor, cols), nn::powi(y, d.alpha - 1));
        }
        case DistanceFn::Kind::l1: return nn::sign(y);
        case DistanceFn::Kind::huber: return nn::clamp(y, -d.delta, d.delta);
        case DistanceFn::Kind::pseudo_huber: {
            auto denom = nn::sqrt(nn::add_scalar(nn::sum_cols(nn::square(y)), d.c * d.c));
            return nn::div(y, nn::broadcast_cols(denom, cols));
        }
    }
    return y;
}

} // namespace sim::distances
