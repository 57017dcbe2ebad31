#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "sva/numcore.hpp"

namespace sva {

// Rows: probe sentences; columns: hidden units.
using RepMatrix = Matrix;

// Row-standardized X X^T (population mean and std). Zero-variance rows are
// left as zeros and tallied in `degenerate_rows`.
Matrix first_order_similarity(const RepMatrix& x, std::size_t* degenerate_rows = nullptr);

// M_ij = mean over probes k of <S_i[k], S_j[k]>.
Matrix second_order_similarity(const std::vector<RepMatrix>& models, std::size_t* degenerate_rows = nullptr);

struct Point2 {
  double x = 0;
  double y = 0;
  friend bool operator==(const Point2&, const Point2&) = default;
};

struct Embedding2D {
  std::vector<Point2> points;
  double stress = 0;                // raw stress: sum over pairs of (d_ij - delta_ij)^2
  std::vector<double> stress_trace;  // initial configuration first
  std::size_t iterations = 0;
};

struct MdsOptions {
  std::size_t max_iterations = 300;
  double tolerance = 1e-9;  // relative stress decrease
};

// delta_ij = max(M) - M_ij with a zero diagonal.
Matrix similarity_to_dissimilarity(const Matrix& m);

// Metric MDS by stress majorization (SMACOF) on a dissimilarity matrix.
Embedding2D smacof(const Matrix& delta, std::uint64_t seed, const MdsOptions& opts = {});
// smacof(similarity_to_dissimilarity(m)).
Embedding2D mds_embed(const Matrix& m, std::uint64_t seed, const MdsOptions& opts = {});

// sqrt(var_x + var_y) with sample (n-1) variances; needs at least two points.
double seed_spread(const std::vector<Point2>& points);

struct LinearSplit {
  double w0 = 0, w1 = 0, b = 0;
  double accuracy = 0;
  bool separable() const { return accuracy == 1.0; }
};

// Pocket perceptron on the plane; labels are 0/1.
LinearSplit perceptron_split(const std::vector<Point2>& points, const std::vector<int>& labels,
                             std::size_t max_epochs = 10000);

struct ModelTag {
  std::string model_id;
  std::string architecture;
  std::string objective;
  std::string sampling;
  std::uint64_t seed = 0;
};

std::string mds_csv(const std::vector<ModelTag>& tags, const Embedding2D& emb);

// Spread per (architecture, objective, sampling) group of seeds.
using SpreadKey = std::array<std::string, 3>;
std::map<SpreadKey, double> spreads_by_group(const std::vector<ModelTag>& tags, const Embedding2D& emb);
// One row per architecture with LM, BC and BC/LM columns for each regime.
std::string spread_table_csv(const std::map<SpreadKey, double>& spreads);

}  // namespace sva
