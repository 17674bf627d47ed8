#pragma once

// Independent reference implementations used only by the tests. They follow
// the textbook definitions directly and share no code with the library paths
// they check.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

namespace oracle {

using Matrix = std::vector<std::vector<double>>;

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  Matrix c(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b[0].size(); ++j)
      for (std::size_t k = 0; k < b.size(); ++k) c[i][j] += a[i][k] * b[k][j];
  return c;
}

/// kNN lists by full sort of (distance, index) pairs, self-loop first.
inline std::vector<std::vector<std::size_t>> knn(const Matrix& pts, std::size_t k) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    std::vector<std::pair<double, std::size_t>> d;
    for (std::size_t j = 0; j < pts.size(); ++j) {
      if (j == i) continue;
      double s = 0.0;
      for (std::size_t c = 0; c < pts[i].size(); ++c) s += (pts[i][c] - pts[j][c]) * (pts[i][c] - pts[j][c]);
      d.emplace_back(s, j);
    }
    std::sort(d.begin(), d.end());
    std::vector<std::size_t> row{i};
    for (std::size_t t = 0; t < k; ++t) row.push_back(d[t].second);
    out.push_back(row);
  }
  return out;
}

/// Literal per-edge EdgeConv: max over edges of leaky([x_i, x_i - x_j] W + b).
inline Matrix edge_conv(const std::vector<std::vector<std::size_t>>& nbrs, const Matrix& x, const Matrix& w,
                        const std::vector<double>& b, double slope) {
  const std::size_t fin = x[0].size(), fout = b.size();
  Matrix out(x.size(), std::vector<double>(fout, -INFINITY));
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j : nbrs[i]) {
      std::vector<double> feat(2 * fin);
      for (std::size_t c = 0; c < fin; ++c) {
        feat[c] = x[i][c];
        feat[fin + c] = x[i][c] - x[j][c];
      }
      for (std::size_t o = 0; o < fout; ++o) {
        double s = b[o];
        for (std::size_t c = 0; c < 2 * fin; ++c) s += feat[c] * w[c][o];
        const double a = s > 0 ? s : slope * s;
        out[i][o] = std::max(out[i][o], a);
      }
    }
  return out;
}

/// Scalar-loop GraphNorm over nodes, per channel.
inline Matrix graph_norm(const Matrix& x, const std::vector<double>& alpha, const std::vector<double>& gamma,
                         const std::vector<double>& beta, double eps) {
  const std::size_t m = x.size(), f = x[0].size();
  Matrix out(m, std::vector<double>(f));
  for (std::size_t c = 0; c < f; ++c) {
    double mean = 0.0;
    for (std::size_t i = 0; i < m; ++i) mean += x[i][c];
    mean /= static_cast<double>(m);
    std::vector<double> shifted(m);
    for (std::size_t i = 0; i < m; ++i) shifted[i] = x[i][c] - alpha[c] * mean;
    double smean = 0.0;
    for (double v : shifted) smean += v;
    smean /= static_cast<double>(m);
    double var = 0.0;
    for (double v : shifted) var += (v - smean) * (v - smean);
    var /= static_cast<double>(m);
    for (std::size_t i = 0; i < m; ++i) out[i][c] = shifted[i] / std::sqrt(var + eps) * gamma[c] + beta[c];
  }
  return out;
}

/// Ranks by counting: rank = 1 + #smaller + (#equal - 1) / 2.
inline std::vector<double> fractional_ranks(const std::vector<double>& x) {
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    double less = 0, equal = 0;
    for (double v : x) {
      if (v < x[i]) ++less;
      if (v == x[i]) ++equal;
    }
    r[i] = 1.0 + less + (equal - 1.0) / 2.0;
  }
  return r;
}

/// Pearson via the two-pass textbook formula with n-1 normalization.
inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i] / n;
    my += y[i] / n;
  }
  double cov = 0, vx = 0, vy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    cov += (x[i] - mx) * (y[i] - my) / (n - 1);
    vx += (x[i] - mx) * (x[i] - mx) / (n - 1);
    vy += (y[i] - my) * (y[i] - my) / (n - 1);
  }
  return cov / std::sqrt(vx * vy);
}

}  // namespace oracle
