#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pcqa/errors.hpp"

namespace pcqa {

/// Directed kNN graph with self-loops. Node i's list holds k+1 targets: i itself
/// first, then its k nearest other nodes by increasing distance (ties by lower index).
class KnnGraph {
 public:
  KnnGraph() = default;
  KnnGraph(std::size_t num_nodes, std::size_t k, std::vector<std::size_t> targets)
      : num_nodes_(num_nodes), k_(k), targets_(std::move(targets)) {
    if (targets_.size() != num_nodes_ * (k_ + 1)) throw GraphError("bad-targets", "target list size mismatch");
  }

  std::size_t num_nodes() const noexcept { return num_nodes_; }
  std::size_t k() const noexcept { return k_; }
  std::size_t degree() const noexcept { return k_ + 1; }

  std::span<const std::size_t> neighbors(std::size_t i) const noexcept {
    return {targets_.data() + i * degree(), degree()};
  }
  /// Row-major (num_nodes x (k+1)) target matrix.
  const std::vector<std::size_t>& targets() const noexcept { return targets_; }

  friend bool operator==(const KnnGraph&, const KnnGraph&) = default;

 private:
  std::size_t num_nodes_ = 0;
  std::size_t k_ = 0;
  std::vector<std::size_t> targets_;
};

/// Row-major M x D matrix of finite feature vectors.
struct FeatureView {
  std::span<const double> data;
  std::size_t rows = 0;
  std::size_t dim = 0;

  const double* row(std::size_t i) const noexcept { return data.data() + i * dim; }
};

namespace detail {

inline double row_distance2(const FeatureView& f, std::size_t a, std::size_t b) noexcept {
  const double* pa = f.row(a);
  const double* pb = f.row(b);
  double s = 0.0;
  for (std::size_t c = 0; c < f.dim; ++c) {
    const double d = pa[c] - pb[c];
    s += d * d;
  }
  return s;
}

using Candidate = std::pair<double, std::size_t>;  // (squared distance, index), lexicographic order

inline void check_input(const FeatureView& f, std::size_t k) {
  if (f.data.size() != f.rows * f.dim) throw ShapeError("feature-size", "feature buffer does not match rows x dim");
  if (f.rows <= k)
    throw GraphError("too-few-nodes", std::to_string(f.rows) + " nodes for k=" + std::to_string(k));
  for (double v : f.data)
    if (!std::isfinite(v)) throw GraphError("non-finite", "feature vectors must be finite");
}

class KdTree3 {
 public:
  explicit KdTree3(const FeatureView& f) : f_(f), order_(f.rows) {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    nodes_.reserve(2 * f.rows / kLeafSize + 2);
    build(0, f.rows);
  }

  // Fills `heap` with the k best candidates for `query`, excluding the query itself.
  void query(std::size_t q, std::size_t k, std::vector<Candidate>& heap) const {
    heap.clear();
    search(0, q, k, heap);
    std::sort_heap(heap.begin(), heap.end());
  }

 private:
  static constexpr std::size_t kLeafSize = 8;

  struct Node {
    std::size_t begin, end;
    int axis = -1;  // -1 => leaf
    double split = 0.0;
    int left = -1, right = -1;
  };

  int build(std::size_t begin, std::size_t end) {
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back({begin, end});
    if (end - begin <= kLeafSize) return id;
    double lo[3], hi[3];
    for (int c = 0; c < 3; ++c) lo[c] = hi[c] = f_.row(order_[begin])[c];
    for (std::size_t i = begin; i < end; ++i)
      for (int c = 0; c < 3; ++c) {
        lo[c] = std::min(lo[c], f_.row(order_[i])[c]);
        hi[c] = std::max(hi[c], f_.row(order_[i])[c]);
      }
    int axis = 0;
    for (int c = 1; c < 3; ++c)
      if (hi[c] - lo[c] > hi[axis] - lo[axis]) axis = c;
    const std::size_t mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + static_cast<std::ptrdiff_t>(begin),
                     order_.begin() + static_cast<std::ptrdiff_t>(mid),
                     order_.begin() + static_cast<std::ptrdiff_t>(end), [&](std::size_t a, std::size_t b) {
                       return f_.row(a)[axis] < f_.row(b)[axis];
                     });
    // Left holds coordinates <= split, right holds >= split.
    const double split = f_.row(order_[mid])[axis];
    const int l = build(begin, mid);
    const int r = build(mid, end);
    nodes_[id].axis = axis;
    nodes_[id].split = split;
    nodes_[id].left = l;
    nodes_[id].right = r;
    return id;
  }

  void offer(const Candidate& c, std::size_t k, std::vector<Candidate>& heap) const {
    if (heap.size() < k) {
      heap.push_back(c);
      std::push_heap(heap.begin(), heap.end());
    } else if (c < heap.front()) {
      std::pop_heap(heap.begin(), heap.end());
      heap.back() = c;
      std::push_heap(heap.begin(), heap.end());
    }
  }

  void search(int id, std::size_t q, std::size_t k, std::vector<Candidate>& heap) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.axis < 0) {
      for (std::size_t i = n.begin; i < n.end; ++i) {
        const std::size_t j = order_[i];
        if (j != q) offer({row_distance2(f_, q, j), j}, k, heap);
      }
      return;
    }
    const double diff = f_.row(q)[n.axis] - n.split;
    const int near = diff <= 0.0 ? n.left : n.right;
    const int far = diff <= 0.0 ? n.right : n.left;
    search(near, q, k, heap);
    // Equal distance to the plane must still be visited: a tie may carry a lower index.
    if (heap.size() < k || diff * diff <= heap.front().first) search(far, q, k, heap);
  }

  const FeatureView& f_;
  std::vector<std::size_t> order_;
  std::vector<Node> nodes_;
};

}  // namespace detail

/// Exact brute-force construction for any dimension.
inline KnnGraph knn_graph_brute_force(const FeatureView& f, std::size_t k) {
  detail::check_input(f, k);
  std::vector<std::size_t> targets;
  targets.reserve(f.rows * (k + 1));
  std::vector<detail::Candidate> cand(f.rows - 1);
  for (std::size_t i = 0; i < f.rows; ++i) {
    std::size_t n = 0;
    for (std::size_t j = 0; j < f.rows; ++j)
      if (j != i) cand[n++] = {detail::row_distance2(f, i, j), j};
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end());
    targets.push_back(i);
    for (std::size_t t = 0; t < k; ++t) targets.push_back(cand[t].second);
  }
  return {f.rows, k, std::move(targets)};
}

/// Exact kNN graph; 3-D inputs go through a kd-tree, others through brute force.
/// Both paths produce identical graphs.
inline KnnGraph knn_graph(const FeatureView& f, std::size_t k) {
  if (f.dim != 3 || f.rows <= 2 * (k + 1)) return knn_graph_brute_force(f, k);
  detail::check_input(f, k);
  detail::KdTree3 tree(f);
  std::vector<std::size_t> targets;
  targets.reserve(f.rows * (k + 1));
  std::vector<detail::Candidate> heap;
  heap.reserve(k);
  for (std::size_t i = 0; i < f.rows; ++i) {
    tree.query(i, k, heap);
    targets.push_back(i);
    for (const auto& c : heap) targets.push_back(c.second);
  }
  return {f.rows, k, std::move(targets)};
}

/// Builds the next layer's graph from the geometry stream's embeddings
/// (row-major M x F). The result is shared by both streams.
inline KnnGraph rebuild_for_layer(std::span<const double> embeddings, std::size_t rows, std::size_t k) {
  if (rows == 0 || embeddings.size() % rows != 0) throw ShapeError("embedding-shape", "embedding buffer not M x F");
  return knn_graph({embeddings, rows, embeddings.size() / rows}, k);
}

/// One line per node: `i: j0 j1 ... jk`.
inline void dump_graph(std::ostream& os, const KnnGraph& g) {
  for (std::size_t i = 0; i < g.num_nodes(); ++i) {
    os << i << ':';
    for (std::size_t j : g.neighbors(i)) os << ' ' << j;
    os << '\n';
  }
}

}  // namespace pcqa
