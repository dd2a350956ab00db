// Copyright 2026 The avstitch Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "avs/evalx/evalx.hpp"

namespace avs {

namespace {

constexpr double kW = 640, kH = 360, kPad = 48;
constexpr const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '&') out += "&amp;";
    else out += c;
  }
  return out;
}

void frame(std::ostringstream& os, const std::string& title, double lo, double hi, const std::string& x_label) {
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH << "\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << kW / 2 << "\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\">" << escape(title)
     << "</text>\n"
     << "<line x1=\"" << kPad << "\" y1=\"" << kH - kPad << "\" x2=\"" << kW - kPad << "\" y2=\"" << kH - kPad
     << "\" stroke=\"black\"/>\n"
     << "<line x1=\"" << kPad << "\" y1=\"" << kPad << "\" x2=\"" << kPad << "\" y2=\"" << kH - kPad
     << "\" stroke=\"black\"/>\n"
     << "<text x=\"4\" y=\"" << kPad << "\" font-size=\"10\" font-family=\"sans-serif\">" << num(hi) << "</text>\n"
     << "<text x=\"4\" y=\"" << kH - kPad << "\" font-size=\"10\" font-family=\"sans-serif\">" << num(lo)
     << "</text>\n"
     << "<text x=\"" << kW / 2 << "\" y=\"" << kH - 12 << "\" text-anchor=\"middle\" font-size=\"11\" "
     << "font-family=\"sans-serif\">" << escape(x_label) << "</text>\n";
}

}  // namespace

std::string svg_line_chart(const std::vector<std::vector<double>>& series, const std::vector<std::string>& labels,
                           const std::string& title) {
  double lo = INFINITY, hi = -INFINITY;
  std::size_t longest = 1;
  for (const auto& s : series) {
    for (double v : s) {
      if (std::isfinite(v)) lo = std::min(lo, v), hi = std::max(hi, v);
    }
    longest = std::max(longest, s.size());
  }
  if (!std::isfinite(lo)) lo = 0, hi = 1;
  if (hi == lo) hi = lo + 1;
  std::ostringstream os;
  frame(os, title, lo, hi, "step");
  for (std::size_t k = 0; k < series.size(); ++k) {
    const char* color = kColors[k % 5];
    os << "<polyline fill=\"none\" stroke-width=\"1\" stroke=\"" << color << "\" points=\"";
    for (std::size_t i = 0; i < series[k].size(); ++i) {
      const double v = series[k][i];
      if (!std::isfinite(v)) continue;
      const double x = kPad + (kW - 2 * kPad) * (longest > 1 ? static_cast<double>(i) / (longest - 1) : 0.0);
      const double y = kH - kPad - (kH - 2 * kPad) * (v - lo) / (hi - lo);
      os << num(x) << ',' << num(y) << ' ';
    }
    os << "\"/>\n";
    if (k < labels.size()) {
      os << "<text x=\"" << kW - kPad - 100 << "\" y=\"" << kPad + 14 * k << "\" font-size=\"11\" fill=\"" << color
         << "\" font-family=\"sans-serif\">" << escape(labels[k]) << "</text>\n";
    }
  }
  os << "</svg>\n";
  return os.str();
}

std::string svg_histogram(const std::vector<double>& values, double lo, double hi, int bins,
                          const std::string& title) {
  bins = std::max(bins, 1);
  std::vector<int> counts(static_cast<std::size_t>(bins), 0);
  for (double v : values) {
    if (!std::isfinite(v) || hi <= lo) continue;
    const int b = std::clamp(static_cast<int>((v - lo) / (hi - lo) * bins), 0, bins - 1);
    ++counts[static_cast<std::size_t>(b)];
  }
  const int top = std::max(1, *std::max_element(counts.begin(), counts.end()));
  std::ostringstream os;
  frame(os, title, 0, top, "value in [" + num(lo) + ", " + num(hi) + "]");
  const double bw = (kW - 2 * kPad) / bins;
  for (int b = 0; b < bins; ++b) {
    const double h = (kH - 2 * kPad) * counts[static_cast<std::size_t>(b)] / top;
    os << "<rect x=\"" << num(kPad + b * bw + 1) << "\" y=\"" << num(kH - kPad - h) << "\" width=\""
       << num(bw - 2) << "\" height=\"" << num(h) << "\" fill=\"" << kColors[0] << "\"/>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace avs
