#include "sim/harness/svg.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace sim::harness::svg {

namespace {

constexpr double kWidth = 640, kHeight = 420;
constexpr double kLeft = 70, kRight = 150, kTop = 40, kBottom = 50;
const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

std::string tick(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

struct Frame {
    double x0, x1, y0, y1;
    bool log_y = false;

    double px(double x) const { return kLeft + (x - x0) / (x1 - x0) * (kWidth - kLeft - kRight); }
    double py(double y) const {
        const double v = log_y ? std::log10(y) : y;
        return kHeight - kBottom - (v - y0) / (y1 - y0) * (kHeight - kTop - kBottom);
    }
};

void widen(double& lo, double& hi) {
    if (!(lo < hi)) {
        const double pad = lo == 0.0 ? 1.0 : std::fabs(lo) * 0.1;
        lo -= pad;
        hi += pad;
    }
}

void header(std::ostringstream& os, const std::string& title) {
    os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
       << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << kWidth << "\" height=\"" << kHeight
       << "\" viewBox=\"0 0 " << kWidth << " " << kHeight << "\" font-family=\"sans-serif\" font-size=\"11\">\n"
       << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
       << "<text x=\"" << kWidth / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << escape(title)
       << "</text>\n";
}

void axes(std::ostringstream& os, const Frame& f, const std::string& xl, const std::string& yl) {
    const double l = kLeft, r = kWidth - kRight, t = kTop, b = kHeight - kBottom;
    os << "<rect x=\"" << l << "\" y=\"" << t << "\" width=\"" << r - l << "\" height=\"" << b - t
       << "\" fill=\"none\" stroke=\"#444\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double x = f.x0 + (f.x1 - f.x0) * i / 4.0;
        const double X = f.px(x);
        os << "<line x1=\"" << fmt(X) << "\" y1=\"" << b << "\" x2=\"" << fmt(X) << "\" y2=\"" << b + 4
           << "\" stroke=\"#444\"/>\n"
           << "<text x=\"" << fmt(X) << "\" y=\"" << b + 16 << "\" text-anchor=\"middle\">" << tick(x) << "</text>\n";
        const double yv = f.y0 + (f.y1 - f.y0) * i / 4.0;
        const double Y = kHeight - kBottom - (yv - f.y0) / (f.y1 - f.y0) * (kHeight - kTop - kBottom);
        os << "<line x1=\"" << l - 4 << "\" y1=\"" << fmt(Y) << "\" x2=\"" << l << "\" y2=\"" << fmt(Y)
           << "\" stroke=\"#444\"/>\n"
           << "<text x=\"" << l - 6 << "\" y=\"" << fmt(Y + 4) << "\" text-anchor=\"end\">"
           << tick(f.log_y ? std::pow(10.0, yv) : yv) << "</text>\n";
    }
    os << "<text x=\"" << (l + r) / 2 << "\" y=\"" << kHeight - 12 << "\" text-anchor=\"middle\">" << escape(xl)
       << "</text>\n"
       << "<text x=\"16\" y=\"" << (t + b) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " << (t + b) / 2
       << ")\">" << escape(yl) << "</text>\n";
}

void legend(std::ostringstream& os, const std::vector<std::string>& names) {
    for (std::size_t i = 0; i < names.size(); ++i) {
        const double y = kTop + 12 + 18.0 * static_cast<double>(i);
        os << "<rect x=\"" << kWidth - kRight + 12 << "\" y=\"" << y - 8 << "\" width=\"10\" height=\"10\" fill=\""
           << kColors[i % 8] << "\"/>\n"
           << "<text x=\"" << kWidth - kRight + 28 << "\" y=\"" << y << "\">" << escape(names[i]) << "</text>\n";
    }
}

} // namespace

std::string line_chart(const std::string& title, const std::string& x_label, const std::string& y_label,
                       const std::vector<Series>& series, bool log_y) {
    auto usable = [&](double x, double y) { return std::isfinite(x) && std::isfinite(y) && (!log_y || y > 0.0); };
    double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
    for (const auto& s : series) {
        if (s.x.size() != s.y.size()) throw std::invalid_argument("line_chart: series '" + s.name + "' length mismatch");
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (!usable(s.x[i], s.y[i])) continue;
            const double y = log_y ? std::log10(s.y[i]) : s.y[i];
            x0 = std::min(x0, s.x[i]);
            x1 = std::max(x1, s.x[i]);
            y0 = std::min(y0, y);
            y1 = std::max(y1, y);
        }
    }
    if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
    widen(x0, x1);
    widen(y0, y1);
    const Frame f{x0, x1, y0, y1, log_y};

    std::ostringstream os;
    header(os, title);
    axes(os, f, x_label, log_y ? y_label + " (log)" : y_label);
    std::vector<std::string> names;
    for (std::size_t k = 0; k < series.size(); ++k) {
        const auto& s = series[k];
        names.push_back(s.name);
        os << "<polyline fill=\"none\" stroke-width=\"1.5\" stroke=\"" << kColors[k % 8] << "\" points=\"";
        bool first = true;
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (!usable(s.x[i], s.y[i])) continue;
            os << (first ? "" : " ") << fmt(f.px(s.x[i])) << "," << fmt(f.py(s.y[i]));
            first = false;
        }
        os << "\"/>\n";
    }
    legend(os, names);
    os << "</svg>\n";
    return os.str();
}

std::string scatter(const std::string& title, const std::vector<PointSet>& sets, std::size_t max_points) {
    double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
    auto rows = [&](const PointSet& s) { return std::min(s.points.dim(0), max_points); };
    for (const auto& s : sets) {
        if (s.points.rank() != 2 || s.points.dim(1) < 2)
            throw std::invalid_argument("scatter: set '" + s.name + "' is not [N, >=2]");
        const auto v = s.points.data();
        const auto d = s.points.dim(1);
        for (std::size_t i = 0; i < rows(s); ++i) {
            if (!std::isfinite(v[i * d]) || !std::isfinite(v[i * d + 1])) continue;
            x0 = std::min(x0, v[i * d]);
            x1 = std::max(x1, v[i * d]);
            y0 = std::min(y0, v[i * d + 1]);
            y1 = std::max(y1, v[i * d + 1]);
        }
    }
    if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
    widen(x0, x1);
    widen(y0, y1);
    const Frame f{x0, x1, y0, y1, false};

    std::ostringstream os;
    header(os, title);
    axes(os, f, "x1", "x2");
    std::vector<std::string> names;
    for (std::size_t k = 0; k < sets.size(); ++k) {
        const auto& s = sets[k];
        names.push_back(s.name);
        const auto v = s.points.data();
        const auto d = s.points.dim(1);
        os << "<g fill=\"" << kColors[k % 8] << "\" fill-opacity=\"0.5\">\n";
        for (std::size_t i = 0; i < rows(s); ++i) {
            if (!std::isfinite(v[i * d]) || !std::isfinite(v[i * d + 1])) continue;
            os << "<circle cx=\"" << fmt(f.px(v[i * d])) << "\" cy=\"" << fmt(f.py(v[i * d + 1])) << "\" r=\"1.6\"/>\n";
        }
        os << "</g>\n";
    }
    legend(os, names);
    os << "</svg>\n";
    return os.str();
}

void write(const std::string& path, const std::string& svg) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    out << svg;
}

} // namespace sim::harness::svg
