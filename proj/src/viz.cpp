#include "aspectemb/viz.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

namespace aspectemb {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

double off_diagonal_sq(const Matrix& a) {
  double sum = 0.0;
  for (std::size_t p = 0; p < a.rows; ++p) {
    for (std::size_t q = 0; q < a.cols; ++q) {
      if (p != q) sum += a.at(p, q) * a.at(p, q);
    }
  }
  return sum;
}

}  // namespace

EigenDecomposition eigen_symmetric(const Matrix& a) {
  if (a.rows != a.cols) throw std::invalid_argument("eigen_symmetric: matrix must be square");
  const std::size_t n = a.rows;

  Matrix work = a;
  Matrix v(n, n);
  for (std::size_t i = 0; i < n; ++i) v.at(i, i) = 1.0;

  double frob_sq = 0.0;
  for (double x : a.data) frob_sq += x * x;
  const double tolerance = 1e-24 * (frob_sq + 1e-300);

  for (int sweep = 0; sweep < 100 && off_diagonal_sq(work) > tolerance; ++sweep) {
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = work.at(p, q);
        if (apq == 0.0) continue;
        // Classic Jacobi rotation annihilating work[p][q].
        const double theta = (work.at(q, q) - work.at(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(1.0 + theta * theta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = t * c;

        for (std::size_t i = 0; i < n; ++i) {
          const double aip = work.at(i, p);
          const double aiq = work.at(i, q);
          work.at(i, p) = c * aip - s * aiq;
          work.at(i, q) = s * aip + c * aiq;
        }
        for (std::size_t i = 0; i < n; ++i) {
          const double api = work.at(p, i);
          const double aqi = work.at(q, i);
          work.at(p, i) = c * api - s * aqi;
          work.at(q, i) = s * api + c * aqi;
        }
        for (std::size_t i = 0; i < n; ++i) {
          const double vip = v.at(i, p);
          const double viq = v.at(i, q);
          v.at(i, p) = c * vip - s * viq;
          v.at(i, q) = s * vip + c * viq;
        }
      }
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a_idx, std::size_t b_idx) {
    const double va = work.at(a_idx, a_idx);
    const double vb = work.at(b_idx, b_idx);
    if (va != vb) return va > vb;
    return a_idx < b_idx;
  });

  EigenDecomposition result;
  result.values.resize(n);
  result.vectors = Matrix(n, n);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t src = order[k];
    result.values[k] = work.at(src, src);
    std::size_t peak = 0;
    for (std::size_t i = 1; i < n; ++i) {
      if (std::abs(v.at(i, src)) > std::abs(v.at(peak, src))) peak = i;
    }
    const double flip = v.at(peak, src) < 0.0 ? -1.0 : 1.0;
    for (std::size_t i = 0; i < n; ++i) result.vectors.at(i, k) = flip * v.at(i, src);
  }
  return result;
}

PcaModel pca_fit(const std::vector<Vec>& data, std::size_t out_dims) {
  if (data.size() < 2) fail("PCA needs at least 2 points");
  const std::size_t d = data[0].size();
  for (const Vec& row : data) {
    if (row.size() != d) fail("PCA input has inconsistent dimensions");
  }
  if (out_dims < 1 || out_dims > d) {
    fail("PCA output dimension must be between 1 and " + std::to_string(d));
  }

  PcaModel model;
  model.mean.assign(d, 0.0);
  for (const Vec& row : data) {
    for (std::size_t i = 0; i < d; ++i) model.mean[i] += row[i];
  }
  const double inv_n = 1.0 / static_cast<double>(data.size());
  for (double& x : model.mean) x *= inv_n;

  Matrix cov(d, d);
  for (const Vec& row : data) {
    for (std::size_t i = 0; i < d; ++i) {
      const double ci = row[i] - model.mean[i];
      for (std::size_t j = i; j < d; ++j) {
        cov.at(i, j) += ci * (row[j] - model.mean[j]);
      }
    }
  }
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = i; j < d; ++j) {
      cov.at(i, j) *= inv_n;
      cov.at(j, i) = cov.at(i, j);
    }
  }

  const EigenDecomposition eigen = eigen_symmetric(cov);
  model.eigenvalues = eigen.values;
  model.components = Matrix(out_dims, d);
  for (std::size_t k = 0; k < out_dims; ++k) {
    for (std::size_t i = 0; i < d; ++i) model.components.at(k, i) = eigen.vectors.at(i, k);
  }
  return model;
}

Vec pca_transform(const PcaModel& model, const Vec& point) {
  const std::size_t d = model.mean.size();
  if (point.size() != d) fail("pca_transform: dimension mismatch");
  Vec out(model.components.rows, 0.0);
  for (std::size_t k = 0; k < model.components.rows; ++k) {
    double sum = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      sum += model.components.at(k, i) * (point[i] - model.mean[i]);
    }
    out[k] = sum;
  }
  return out;
}

std::vector<ProjectedPoint> pca_project(const std::map<std::string, Vec>& embeddings,
                                        std::size_t out_dims) {
  if (out_dims < 1 || out_dims > 2) {
    throw std::invalid_argument("pca_project: out_dims must be 1 or 2");
  }
  std::vector<Vec> data;
  data.reserve(embeddings.size());
  for (const auto& [id, vec] : embeddings) data.push_back(vec);
  const PcaModel model = pca_fit(data, out_dims);

  std::vector<ProjectedPoint> points;
  points.reserve(embeddings.size());
  for (const auto& [id, vec] : embeddings) {
    const Vec projected = pca_transform(model, vec);
    ProjectedPoint point;
    point.id = id;
    point.x = projected[0];
    point.y = out_dims > 1 ? projected[1] : 0.0;
    points.push_back(std::move(point));
  }
  return points;
}

void assign_color_keys(std::vector<ProjectedPoint>& points, const Corpus& corpus,
                       const std::string& aspect) {
  for (ProjectedPoint& point : points) {
    if (!corpus.contains(point.id)) {
      point.color_key = "(none)";
      continue;
    }
    const std::set<std::string>& labels = corpus.at(point.id).label_set(aspect);
    if (labels.empty()) {
      point.color_key = "(none)";
      continue;
    }
    std::string joined;
    for (const std::string& label : labels) {  // std::set: already sorted
      if (!joined.empty()) joined += '+';
      joined += label;
    }
    point.color_key = joined;
  }
}

namespace {

constexpr const char* kPalette[12] = {
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b",
    "#e377c2", "#7f7f7f", "#bcbd22", "#17becf", "#aec7e8", "#ffbb78",
};

std::string xml_escape(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

std::string coord(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", x);
  return buf;
}

}  // namespace

std::string render_scatter(const std::vector<ProjectedPoint>& points) {
  if (points.empty()) fail("cannot plot zero points");

  double min_x = points[0].x, max_x = points[0].x;
  double min_y = points[0].y, max_y = points[0].y;
  for (const ProjectedPoint& p : points) {
    min_x = std::min(min_x, p.x);
    max_x = std::max(max_x, p.x);
    min_y = std::min(min_y, p.y);
    max_y = std::max(max_y, p.y);
  }
  if (max_x == min_x) {
    min_x -= 1.0;
    max_x += 1.0;
  }
  if (max_y == min_y) {
    min_y -= 1.0;
    max_y += 1.0;
  }

  std::set<std::string> keys;
  for (const ProjectedPoint& p : points) keys.insert(p.color_key);
  std::map<std::string, std::size_t> key_index;
  for (const std::string& key : keys) key_index.emplace(key, key_index.size());

  constexpr double kPlotSize = 600.0;
  constexpr double kMargin = 40.0;
  constexpr double kLegendWidth = 200.0;
  const double width = kPlotSize + 2 * kMargin + kLegendWidth;
  const double height = std::max(kPlotSize + 2 * kMargin,
                                 2 * kMargin + 22.0 * static_cast<double>(keys.size()));
  const auto to_px_x = [&](double x) {
    return kMargin + (x - min_x) / (max_x - min_x) * kPlotSize;
  };
  const auto to_px_y = [&](double y) {
    // SVG y grows downward; flip so larger projections plot higher.
    return kMargin + (max_y - y) / (max_y - min_y) * kPlotSize;
  };

  std::ostringstream svg;
  svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << coord(width) << "\" height=\""
      << coord(height) << "\" viewBox=\"0 0 " << coord(width) << ' ' << coord(height) << "\">\n";
  svg << "  <rect width=\"" << coord(width) << "\" height=\"" << coord(height)
      << "\" fill=\"white\"/>\n";
  svg << "  <rect x=\"" << coord(kMargin) << "\" y=\"" << coord(kMargin) << "\" width=\""
      << coord(kPlotSize) << "\" height=\"" << coord(kPlotSize)
      << "\" fill=\"none\" stroke=\"#cccccc\"/>\n";

  svg << "  <g>\n";
  for (const ProjectedPoint& p : points) {
    const std::size_t color = key_index.at(p.color_key) % 12;
    svg << "    <circle cx=\"" << coord(to_px_x(p.x)) << "\" cy=\"" << coord(to_px_y(p.y))
        << "\" r=\"4\" fill=\"" << kPalette[color] << "\" fill-opacity=\"0.75\">"
        << "<title>" << xml_escape(p.id) << "</title></circle>\n";
  }
  svg << "  </g>\n";

  svg << "  <g font-family=\"sans-serif\" font-size=\"13\">\n";
  double legend_y = kMargin;
  const double legend_x = kPlotSize + 2 * kMargin;
  for (const auto& [key, idx] : key_index) {
    svg << "    <rect x=\"" << coord(legend_x) << "\" y=\"" << coord(legend_y)
        << "\" width=\"12\" height=\"12\" fill=\"" << kPalette[idx % 12] << "\"/>\n";
    svg << "    <text x=\"" << coord(legend_x + 18.0) << "\" y=\"" << coord(legend_y + 11.0)
        << "\">" << xml_escape(key) << "</text>\n";
    legend_y += 22.0;
  }
  svg << "  </g>\n";
  svg << "</svg>\n";
  return svg.str();
}

void emit_scatter(const std::vector<ProjectedPoint>& points, const std::string& path) {
  const std::string svg = render_scatter(points);
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("cannot open plot file '" + path + "' for writing");
  out.write(svg.data(), static_cast<std::streamsize>(svg.size()));
  if (!out) fail("write to plot file '" + path + "' failed");
}

}  // namespace aspectemb
