#pragma once

// Static SVG 1.1 charts: polyline metric curves and 2-D sample scatters.

#include <string>
#include <vector>

#include "sim/nn/tensor.hpp"

namespace sim::harness::svg {

struct Series {
    std::string name;
    std::vector<double> x, y;
};

/// Non-finite points are skipped; with log_y, non-positive ones too.
std::string line_chart(const std::string& title, const std::string& x_label, const std::string& y_label,
                       const std::vector<Series>& series, bool log_y = false);

struct PointSet {
    std::string name;
    nn::Tensor points;  // [N, 2]; further columns are ignored
};

/// Scatter of up to max_points rows of each set, sharing one frame.
std::string scatter(const std::string& title, const std::vector<PointSet>& sets, std::size_t max_points = 2000);

void write(const std::string& path, const std::string& svg);

} // namespace sim::harness::svg
