#include "sim/harness/io.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace sim::harness {

namespace {

std::string num(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

double parse_num(const std::string& s, const std::string& where) {
    if (s == "nan") return std::nan("");
    if (s == "inf") return INFINITY;
    if (s == "-inf") return -INFINITY;
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(s, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != s.size() || s.empty()) throw std::runtime_error(where + ": '" + s + "' is not a number");
    return v;
}

std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

} // namespace

MetricsCsv::MetricsCsv(const std::string& path) : f_(std::fopen(path.c_str(), "w"), &std::fclose) {
    if (!f_) throw std::runtime_error("cannot open '" + path + "' for writing");
    std::fprintf(f_.get(), "%s\n", kMetricsHeader);
    std::fflush(f_.get());
}

std::string format_row(const metrics::MetricRow& r) {
    return std::to_string(r.step) + "," + num(r.phase1_loss) + "," + num(r.phase2_loss) + "," + num(r.mmd) + "," +
           num(r.w2_gauss) + "," + num(r.mode_coverage) + "," + num(r.seconds);
}

void MetricsCsv::append(const metrics::MetricRow& row) {
    std::fprintf(f_.get(), "%s\n", format_row(row).c_str());
    std::fflush(f_.get());
}

std::vector<metrics::MetricRow> read_metrics_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open '" + path + "'");
    std::string line;
    if (!std::getline(in, line) || line != kMetricsHeader)
        throw std::runtime_error(path + ": header is not '" + std::string(kMetricsHeader) + "'");
    std::vector<metrics::MetricRow> rows;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto c = split(line);
        const std::string where = path + ":" + std::to_string(lineno);
        if (c.size() != 7) throw std::runtime_error(where + ": expected 7 columns");
        metrics::MetricRow r;
        r.step = static_cast<std::size_t>(parse_num(c[0], where));
        r.phase1_loss = parse_num(c[1], where);
        r.phase2_loss = parse_num(c[2], where);
        r.mmd = parse_num(c[3], where);
        r.w2_gauss = parse_num(c[4], where);
        r.mode_coverage = parse_num(c[5], where);
        r.seconds = parse_num(c[6], where);
        rows.push_back(r);
    }
    return rows;
}

void write_points_csv(const std::string& path, const nn::Tensor& x) {
    if (x.rank() != 2) throw std::invalid_argument("write_points_csv: expected a [N, D] tensor");
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    const auto d = x.dim(1);
    const auto v = x.data();
    for (std::size_t i = 0; i < x.dim(0); ++i) {
        for (std::size_t k = 0; k < d; ++k) {
            char buf[32];
            std::snprintf(buf, sizeof buf, "%.17g", v[i * d + k]);
            out << (k ? "," : "") << buf;
        }
        out << "\n";
    }
}

nn::Tensor read_points_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open points file '" + path + "'");
    std::vector<double> values;
    std::size_t dim = 0, rows = 0, lineno = 0;
    std::string line;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        const auto c = split(line);
        if (rows == 0) dim = c.size();
        if (c.size() != dim)
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected " + std::to_string(dim) +
                                     " columns");
        for (const auto& s : c) values.push_back(parse_num(s, path + ":" + std::to_string(lineno)));
        ++rows;
    }
    if (rows == 0) throw std::runtime_error("points file '" + path + "' is empty");
    return nn::Tensor::from({rows, dim}, std::move(values));
}

void write_json(const std::string& path, const nlohmann::json& j) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    out << j.dump(2) << "\n";
}

nlohmann::json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open '" + path + "'");
    return nlohmann::json::parse(in);
}

void ensure_directory(const std::string& path) {
    if (path.empty()) return;
    std::error_code ec;
    std::filesystem::create_directories(path, ec);
    if (ec) throw std::runtime_error("cannot create directory '" + path + "': " + ec.message());
}

std::string join_path(const std::string& dir, const std::string& file) {
    return (std::filesystem::path(dir) / file).string();
}

} // namespace sim::harness
