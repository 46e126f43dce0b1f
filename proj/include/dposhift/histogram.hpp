#pragma once

// Fixed-edge histogram tables backing the report command. Emitted as data,
// not images; plotting is left to external tools.

#include <cmath>
#include <cstdio>
#include <span>
#include <string>
#include <vector>

#include "dposhift/core.hpp"

namespace dposhift {

struct HistogramBin {
  double left;
  double right;
  std::size_t count;
};

struct Histogram {
  std::vector<HistogramBin> bins;
  std::size_t underflow = 0;
  std::size_t overflow = 0;

  std::size_t in_range_count() const {
    std::size_t n = 0;
    for (const auto& b : bins) n += b.count;
    return n;
  }
};

// Bins are [left, right) except the last, which includes the right edge.
inline Histogram emit_histogram(std::span<const double> values, std::size_t bin_count,
                                double lo, double hi) {
  if (bin_count < 1) throw std::domain_error("emit_histogram: bin_count must be >= 1");
  if (!(lo < hi) || !std::isfinite(lo) || !std::isfinite(hi))
    throw std::domain_error("emit_histogram: range must be finite with lo < hi");

  Histogram h;
  const double width = (hi - lo) / static_cast<double>(bin_count);
  h.bins.reserve(bin_count);
  for (std::size_t i = 0; i < bin_count; ++i)
    h.bins.push_back({lo + width * static_cast<double>(i),
                      i + 1 == bin_count ? hi : lo + width * static_cast<double>(i + 1), 0});

  for (double v : values) {
    if (!std::isfinite(v) || v > hi) {
      ++h.overflow;
    } else if (v < lo) {
      ++h.underflow;
    } else {
      auto i = static_cast<std::size_t>((v - lo) / width);
      if (i >= bin_count) i = bin_count - 1;  // v == hi
      ++h.bins[i].count;
    }
  }
  return h;
}

inline std::string render_histogram(const Histogram& h, const std::string& label) {
  std::string out = "# " + label + " (bin_left, bin_right, count)\n";
  char buf[96];
  for (const auto& b : h.bins) {
    std::snprintf(buf, sizeof(buf), "%12.5g %12.5g %8zu\n", b.left, b.right, b.count);
    out += buf;
  }
  std::snprintf(buf, sizeof(buf), "underflow %zu, overflow %zu\n", h.underflow, h.overflow);
  out += buf;
  return out;
}

}  // namespace dposhift
