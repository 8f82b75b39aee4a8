#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "aspectemb/corpus.hpp"
#include "aspectemb/vecmath.hpp"

namespace aspectemb {

// Eigen-decomposition of a symmetric matrix via cyclic Jacobi rotations.
// Values are sorted descending; vectors are the matching columns, each with
// its largest-magnitude entry made positive.
struct EigenDecomposition {
  Vec values;
  Matrix vectors;
};

EigenDecomposition eigen_symmetric(const Matrix& a);

struct PcaModel {
  Vec mean;
  Matrix components;  // out_dims x d, one principal direction per row
  Vec eigenvalues;    // all d covariance eigenvalues, descending
};

// Fits mean-centered PCA with a 1/n covariance. Requires >= 2 points and
// 1 <= out_dims <= dimension.
PcaModel pca_fit(const std::vector<Vec>& data, std::size_t out_dims);
Vec pca_transform(const PcaModel& model, const Vec& point);

struct ProjectedPoint {
  std::string id;
  double x = 0.0;
  double y = 0.0;
  std::string color_key;
};

// Projects every embedding onto the top principal directions (y stays 0 when
// out_dims is 1). Points come back in ascending id order with empty color
// keys.
std::vector<ProjectedPoint> pca_project(const std::map<std::string, Vec>& embeddings,
                                        std::size_t out_dims = 2);

// Colors points by the document's labels for the aspect: multi-label sets
// join sorted labels with '+', anything unlabeled becomes "(none)".
void assign_color_keys(std::vector<ProjectedPoint>& points, const Corpus& corpus,
                       const std::string& aspect);

// Standalone SVG scatter plot: one circle per point, legend over the sorted
// distinct color keys, fixed 12-color palette cycling beyond 12 keys.
// Identical input produces a byte-identical file.
std::string render_scatter(const std::vector<ProjectedPoint>& points);
void emit_scatter(const std::vector<ProjectedPoint>& points, const std::string& path);

}  // namespace aspectemb
