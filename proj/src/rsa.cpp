#include "sva/rsa.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <optional>
#include <set>

#include "sva/kernels.hpp"
#include "sva/training.hpp"

namespace sva {

Matrix first_order_similarity(const RepMatrix& x, std::size_t* degenerate_rows) {
  if (x.rows() < 2) throw DimensionError("first_order_similarity: need at least two probe rows");
  Matrix s(x.rows(), x.rows());
  kernels::parallel::gram(x, s);
  const std::size_t bad = kernels::parallel::standardize_rows(s);
  if (degenerate_rows) *degenerate_rows = bad;
  return s;
}

Matrix second_order_similarity(const std::vector<RepMatrix>& models, std::size_t* degenerate_rows) {
  const std::size_t n = models.size();
  if (n == 0) return {};
  const std::size_t P = models[0].rows();
  for (const RepMatrix& m : models) {
    if (m.rows() != P) {
      throw DimensionError("second_order_similarity: probe counts differ (" + std::to_string(P) + " vs " +
                           std::to_string(m.rows()) + ")");
    }
  }
  std::vector<Matrix> s(n);
  std::size_t bad_total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t bad = 0;
    s[i] = first_order_similarity(models[i], &bad);
    bad_total += bad;
  }
  if (degenerate_rows) *degenerate_rows = bad_total;

  Matrix out(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) {
      const real v = kernels::dot(s[i].span(), s[j].span()) / static_cast<real>(P);
      out(i, j) = v;
      out(j, i) = v;
    }
  }
  return out;
}

Matrix similarity_to_dissimilarity(const Matrix& m) {
  if (m.rows() != m.cols()) throw DimensionError("similarity matrix must be square, got " + m.shape_str());
  const real top = m.size() == 0 ? 0 : *std::max_element(m.span().begin(), m.span().end());
  Matrix d(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) d(i, j) = i == j ? 0 : top - m(i, j);
  return d;
}

namespace {

double raw_stress(const Matrix& delta, const std::vector<Point2>& x) {
  double s = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (std::size_t j = i + 1; j < x.size(); ++j) {
      const double d = std::hypot(x[i].x - x[j].x, x[i].y - x[j].y);
      const double e = d - static_cast<double>(delta(i, j));
      s += e * e;
    }
  }
  return s;
}

}  // namespace

Embedding2D smacof(const Matrix& delta, std::uint64_t seed, const MdsOptions& opts) {
  const std::size_t n = delta.rows();
  if (delta.cols() != n) throw DimensionError("smacof: dissimilarities must be square, got " + delta.shape_str());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double a = delta(i, j), b = delta(j, i);
      if (std::abs(a - b) > 1e-9 * std::max({1.0, std::abs(a), std::abs(b)})) {
        throw ContractError("smacof: dissimilarity matrix is not symmetric");
      }
    }
  }

  Embedding2D emb;
  emb.points.assign(n, {});
  if (n < 2) {
    emb.stress_trace.push_back(0);
    return emb;
  }

  // Symmetrized copy with the diagonal ignored.
  Matrix d(n, n);
  double mean = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j) {
        d(i, j) = 0.5 * (delta(i, j) + delta(j, i));
        mean += d(i, j);
      }
  mean /= static_cast<double>(n * (n - 1));

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1, 1);
  const double scale = mean > 0 ? mean : 1;
  for (Point2& p : emb.points) {
    p.x = scale * u(rng);
    p.y = scale * u(rng);
  }

  double stress = raw_stress(d, emb.points);
  emb.stress_trace.push_back(stress);
  std::vector<Point2> next(n);
  for (std::size_t it = 0; it < opts.max_iterations && stress > 0; ++it) {
    // Guttman transform with unit weights: X <- B(X) X / n.
    for (std::size_t i = 0; i < n; ++i) {
      double bx = 0, by = 0, bii = 0;
      for (std::size_t j = 0; j < n; ++j) {
        if (j == i) continue;
        const double dist = std::hypot(emb.points[i].x - emb.points[j].x, emb.points[i].y - emb.points[j].y);
        const double bij = dist > 0 ? -d(i, j) / dist : 0;
        bii -= bij;
        bx += bij * emb.points[j].x;
        by += bij * emb.points[j].y;
      }
      next[i].x = (bx + bii * emb.points[i].x) / static_cast<double>(n);
      next[i].y = (by + bii * emb.points[i].y) / static_cast<double>(n);
    }
    const double updated = raw_stress(d, next);
    // Majorization never increases stress; a rounding-level uptick means we are done.
    if (updated > stress) break;
    emb.points = next;
    emb.iterations = it + 1;
    const double rel = (stress - updated) / stress;
    stress = updated;
    emb.stress_trace.push_back(stress);
    if (rel < opts.tolerance) break;
  }
  emb.stress = stress;
  return emb;
}

Embedding2D mds_embed(const Matrix& m, std::uint64_t seed, const MdsOptions& opts) {
  return smacof(similarity_to_dissimilarity(m), seed, opts);
}

double seed_spread(const std::vector<Point2>& points) {
  const std::size_t n = points.size();
  if (n < 2) throw ContractError("seed_spread: spread is undefined for fewer than two seeds");
  double mx = 0, my = 0;
  for (const Point2& p : points) {
    mx += p.x;
    my += p.y;
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double vx = 0, vy = 0;
  for (const Point2& p : points) {
    vx += (p.x - mx) * (p.x - mx);
    vy += (p.y - my) * (p.y - my);
  }
  return std::sqrt((vx + vy) / static_cast<double>(n - 1));
}

LinearSplit perceptron_split(const std::vector<Point2>& points, const std::vector<int>& labels,
                             std::size_t max_epochs) {
  if (points.size() != labels.size()) throw DimensionError("perceptron_split: points and labels differ in length");
  const std::size_t n = points.size();
  LinearSplit best;
  if (n == 0) return best;

  // Work in standardized coordinates; map the weights back at the end.
  double mx = 0, my = 0;
  for (const Point2& p : points) {
    mx += p.x;
    my += p.y;
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sc = 0;
  for (const Point2& p : points) sc = std::max({sc, std::abs(p.x - mx), std::abs(p.y - my)});
  if (sc == 0) sc = 1;

  auto score = [&](double w0, double w1, double b) {
    std::size_t ok = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double a = w0 * (points[i].x - mx) / sc + w1 * (points[i].y - my) / sc + b;
      ok += (a > 0) == (labels[i] == 1);
    }
    return static_cast<double>(ok) / static_cast<double>(n);
  };

  double w0 = 0, w1 = 0, b = 0;
  double best_acc = -1;
  double bw0 = 0, bw1 = 0, bb = 0;
  for (std::size_t epoch = 0; epoch < max_epochs; ++epoch) {
    bool mistakes = false;
    for (std::size_t i = 0; i < n; ++i) {
      const double px = (points[i].x - mx) / sc, py = (points[i].y - my) / sc;
      const double y = labels[i] == 1 ? 1 : -1;
      if (y * (w0 * px + w1 * py + b) <= 0) {
        w0 += y * px;
        w1 += y * py;
        b += y;
        mistakes = true;
      }
    }
    const double acc = score(w0, w1, b);
    if (acc > best_acc) {
      best_acc = acc;
      bw0 = w0;
      bw1 = w1;
      bb = b;
    }
    if (!mistakes || best_acc == 1.0) break;
  }
  best.w0 = bw0 / sc;
  best.w1 = bw1 / sc;
  best.b = bb - (bw0 * mx + bw1 * my) / sc;
  best.accuracy = best_acc;
  return best;
}

std::string mds_csv(const std::vector<ModelTag>& tags, const Embedding2D& emb) {
  if (tags.size() != emb.points.size()) throw DimensionError("mds_csv: one tag per embedded model required");
  std::string out = "model_id,architecture,objective,sampling,seed,x,y\n";
  for (std::size_t i = 0; i < tags.size(); ++i) {
    const ModelTag& t = tags[i];
    out += t.model_id + "," + t.architecture + "," + t.objective + "," + t.sampling + "," + std::to_string(t.seed) + "," +
           fmt_real(emb.points[i].x, 9) + "," + fmt_real(emb.points[i].y, 9) + "\n";
  }
  return out;
}

std::map<SpreadKey, double> spreads_by_group(const std::vector<ModelTag>& tags, const Embedding2D& emb) {
  if (tags.size() != emb.points.size()) throw DimensionError("spreads_by_group: one tag per embedded model required");
  std::map<SpreadKey, std::vector<Point2>> groups;
  for (std::size_t i = 0; i < tags.size(); ++i) {
    groups[{tags[i].architecture, tags[i].objective, tags[i].sampling}].push_back(emb.points[i]);
  }
  std::map<SpreadKey, double> out;
  for (const auto& [key, pts] : groups)
    if (pts.size() >= 2) out[key] = seed_spread(pts);
  return out;
}

std::string spread_table_csv(const std::map<SpreadKey, double>& spreads) {
  std::set<std::string> archs;
  for (const auto& [key, v] : spreads) archs.insert(key[0]);
  auto cell = [&](const std::string& a, const char* obj, const char* samp) -> std::optional<double> {
    auto it = spreads.find({a, obj, samp});
    if (it == spreads.end()) return std::nullopt;
    return it->second;
  };
  auto show = [](std::optional<double> v) { return v ? fmt_real(*v, 4) : std::string(); };
  std::string out = "architecture,natural_lm,natural_bc,natural_bc_over_lm,selective_lm,selective_bc,selective_bc_over_lm\n";
  for (const std::string& a : archs) {
    out += a;
    for (const char* samp : {"natural", "selective"}) {
      const auto lm = cell(a, "lm", samp);
      const auto bc = cell(a, "classifier", samp);
      std::optional<double> ratio;
      if (lm && bc && *lm > 0) ratio = *bc / *lm;
      out += "," + show(lm) + "," + show(bc) + "," + show(ratio);
    }
    out += "\n";
  }
  return out;
}

}  // namespace sva
