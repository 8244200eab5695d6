#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace eeg2rep {

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

/// Minimal SVG line chart with axes, ticks and a legend.
std::string line_plot_svg(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                          std::span<const Series> series);

void write_line_plot(const std::filesystem::path& path, const std::string& title, const std::string& xlabel,
                     const std::string& ylabel, std::span<const Series> series);

}  // namespace eeg2rep
