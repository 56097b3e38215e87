#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sadiff/common.hpp"
#include "sadiff/gap.hpp"
#include "sadiff/schedule.hpp"
#include "sadiff/training.hpp"

namespace sadiff {

/// Shortest representation that parses back to the same double.
inline std::string format_double(double v) {
  std::array<char, 64> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

inline void write_schedule_csv(std::ostream& os, const NoiseSchedule& s) {
  os << "t,beta,alpha,alpha_bar,beta_tilde,gamma1,gamma2,tau\n";
  for (int t = 1; t <= s.T(); ++t) {
    os << t << ',' << format_double(s.beta(t)) << ',' << format_double(s.alpha(t)) << ','
       << format_double(s.alpha_bar(t)) << ',' << format_double(s.beta_tilde(t)) << ',' << format_double(s.gamma1(t))
       << ',' << format_double(s.gamma2(t)) << ',' << format_double(s.tau(t)) << '\n';
  }
}

inline void write_metrics_csv(std::ostream& os, const std::vector<LossBreakdown>& log) {
  os << "step,l_simple,l_sa,l_total\n";
  for (std::size_t i = 0; i < log.size(); ++i) {
    os << (i + 1) << ',' << format_double(log[i].l_simple) << ',' << format_double(log[i].l_sa) << ','
       << format_double(log[i].l_total) << '\n';
  }
}

inline void write_gap_csv(std::ostream& os, const GapReport& r) {
  os << "t,per_step_gap,cumulative_gap\n";
  for (std::size_t i = 0; i < r.timesteps.size(); ++i) {
    os << r.timesteps[i] << ',' << format_double(r.per_step_gap_norm[i]) << ','
       << format_double(r.cumulative_gap_norm[i]) << '\n';
  }
}

inline std::string sample_header(Eigen::Index dim) {
  std::string h;
  for (Eigen::Index d = 0; d < dim; ++d) h += (d ? ",x" : "x") + std::to_string(d);
  return h;
}

/// One row per sample, columns x0..x{dim-1}.
inline void write_samples_csv(std::ostream& os, const Batch& samples) {
  os << sample_header(samples.cols()) << '\n';
  for (Eigen::Index i = 0; i < samples.rows(); ++i) {
    for (Eigen::Index d = 0; d < samples.cols(); ++d) os << (d ? "," : "") << format_double(samples(i, d));
    os << '\n';
  }
}

/// Long format: one row per (state index, sample); t = 0 marks the final output.
inline void write_trajectory_csv(std::ostream& os, const Trajectory& traj) {
  const Eigen::Index dim = traj.states.front().cols();
  os << "step,t,sample," << sample_header(dim) << '\n';
  for (std::size_t k = 0; k < traj.states.size(); ++k) {
    const int t = k < traj.timesteps.size() ? traj.timesteps[k] : 0;
    const Batch& s = traj.states[k];
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
      os << k << ',' << t << ',' << i;
      for (Eigen::Index d = 0; d < dim; ++d) os << ',' << format_double(s(i, d));
      os << '\n';
    }
  }
}

/// Minimal SVG writer for scatter plots and line charts.
class SvgPlot {
 public:
  SvgPlot(std::string title, double width = 480, double height = 360)
      : title_(std::move(title)), width_(width), height_(height) {}

  void scatter(const Batch& points, std::string color, double radius = 1.2) {
    Series s{{}, {}, std::move(color), "", true, radius};
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
      s.x.push_back(points(i, 0));
      s.y.push_back(points.cols() > 1 ? points(i, 1) : 0.0);
    }
    series_.push_back(std::move(s));
  }

  void line(std::vector<double> x, std::vector<double> y, std::string color, std::string label) {
    series_.push_back({std::move(x), std::move(y), std::move(color), std::move(label), false, 0.0});
  }

  std::string render() const {
    double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
    for (const auto& s : series_) {
      for (double v : s.x) if (std::isfinite(v)) { x0 = std::min(x0, v); x1 = std::max(x1, v); }
      for (double v : s.y) if (std::isfinite(v)) { y0 = std::min(y0, v); y1 = std::max(y1, v); }
    }
    if (!(x0 < x1)) { x0 -= 1; x1 += 1; }
    if (!(y0 < y1)) { y0 -= 1; y1 += 1; }
    const double m = 40;
    auto px = [&](double v) { return m + (v - x0) / (x1 - x0) * (width_ - 2 * m); };
    auto py = [&](double v) { return height_ - m - (v - y0) / (y1 - y0) * (height_ - 2 * m); };

    std::ostringstream os;
    os.precision(6);
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width_ << "\" height=\"" << height_ << "\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << width_ / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << title_ << "</text>\n";
    os << "<rect x=\"" << m << "\" y=\"" << m << "\" width=\"" << width_ - 2 * m << "\" height=\"" << height_ - 2 * m
       << "\" fill=\"none\" stroke=\"#888\"/>\n";
    os << "<text x=\"" << m << "\" y=\"" << height_ - m + 14 << "\" font-size=\"10\">" << x0 << "</text>\n";
    os << "<text x=\"" << width_ - m << "\" y=\"" << height_ - m + 14 << "\" font-size=\"10\" text-anchor=\"end\">" << x1
       << "</text>\n";
    os << "<text x=\"" << m - 4 << "\" y=\"" << height_ - m << "\" font-size=\"10\" text-anchor=\"end\">" << y0
       << "</text>\n";
    os << "<text x=\"" << m - 4 << "\" y=\"" << m + 8 << "\" font-size=\"10\" text-anchor=\"end\">" << y1 << "</text>\n";
    int legend = 0;
    for (const auto& s : series_) {
      if (s.points) {
        for (std::size_t i = 0; i < s.x.size(); ++i) {
          os << "<circle cx=\"" << px(s.x[i]) << "\" cy=\"" << py(s.y[i]) << "\" r=\"" << s.radius << "\" fill=\""
             << s.color << "\" fill-opacity=\"0.5\"/>\n";
        }
      } else {
        os << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t i = 0; i < s.x.size(); ++i) os << (i ? " " : "") << px(s.x[i]) << ',' << py(s.y[i]);
        os << "\"/>\n";
        if (!s.label.empty()) {
          os << "<text x=\"" << width_ - m - 4 << "\" y=\"" << m + 14 + 14 * legend++ << "\" font-size=\"11\" "
             << "text-anchor=\"end\" fill=\"" << s.color << "\">" << s.label << "</text>\n";
        }
      }
    }
    os << "</svg>\n";
    return os.str();
  }

 private:
  struct Series {
    std::vector<double> x, y;
    std::string color;
    std::string label;
    bool points;
    double radius;
  };

  std::string title_;
  double width_, height_;
  std::vector<Series> series_;
};

inline const char* palette(std::size_t i) {
  static constexpr std::array<const char*, 8> colors{"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                                     "#9467bd", "#8c564b", "#e377c2", "#17becf"};
  return colors[i % colors.size()];
}

}  // namespace sadiff
