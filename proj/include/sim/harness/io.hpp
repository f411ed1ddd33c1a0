#pragma once

// Run-directory outputs: the metrics CSV, JSON reports, point files.

#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "sim/metrics.hpp"
#include "sim/nn/tensor.hpp"

namespace sim::harness {

inline constexpr const char* kMetricsHeader = "step,phase1_loss,phase2_loss,mmd,w2_gauss,mode_coverage,seconds";

/// Append-only metrics.csv; each row is flushed as soon as it is written.
class MetricsCsv {
public:
    explicit MetricsCsv(const std::string& path);
    void append(const metrics::MetricRow& row);

private:
    std::unique_ptr<std::FILE, int (*)(std::FILE*)> f_;
};

std::string format_row(const metrics::MetricRow& row);
std::vector<metrics::MetricRow> read_metrics_csv(const std::string& path);

/// Rows of comma-separated coordinates, no header.
void write_points_csv(const std::string& path, const nn::Tensor& x);
nn::Tensor read_points_csv(const std::string& path);

/// Pretty-printed with a trailing newline; key order is sorted, so equal
/// documents give equal bytes.
void write_json(const std::string& path, const nlohmann::json& j);
nlohmann::json read_json(const std::string& path);

/// Creates the directory (and parents) if missing.
void ensure_directory(const std::string& path);
std::string join_path(const std::string& dir, const std::string& file);

} // namespace sim::harness
