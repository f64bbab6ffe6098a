#include "sahgnn/graph.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>

#include "sahgnn/kernels.hpp"
#include "text_io.hpp"

namespace sahgnn::graph {

double haversine_km(double lon1, double lat1, double lon2, double lat2) {
  constexpr double kEarthRadiusKm = 6371.0088;
  constexpr double kRad = std::numbers::pi / 180.0;
  const double dlat = (lat2 - lat1) * kRad;
  const double dlon = (lon2 - lon1) * kRad;
  const double a = std::sin(dlat / 2) * std::sin(dlat / 2) +
                   std::cos(lat1 * kRad) * std::cos(lat2 * kRad) * std::sin(dlon / 2) * std::sin(dlon / 2);
  return 2.0 * kEarthRadiusKm * std::asin(std::min(1.0, std::sqrt(a)));
}

double distance(data::DistanceMetric metric, const data::Location& a, const data::Location& b) {
  if (metric == data::DistanceMetric::Haversine) return haversine_km(a.lon, a.lat, b.lon, b.lat);
  return std::hypot(a.lon - b.lon, a.lat - b.lat);
}

namespace {

// Row i of the result has ones at the k columns j != i with the best score;
// `better(i, a, b)` orders candidates, with the smaller index winning ties.
template <typename Better>
Tensor top_k_rows(std::size_t n, std::size_t k, Better better) {
  if (k >= n) throw std::invalid_argument("top-k needs k < n (k=" + std::to_string(k) + ", n=" + std::to_string(n) + ")");
  Tensor out(n, n);
  std::vector<std::size_t> order;
  order.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    order.clear();
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) order.push_back(j);
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [&](std::size_t a, std::size_t b) {
                        if (better(i, a, b)) return true;
                        if (better(i, b, a)) return false;
                        return a < b;
                      });
    for (std::size_t r = 0; r < k; ++r) out(i, order[r]) = 1.0;
  }
  return out;
}

}  // namespace

Tensor knn_directed(std::span<const data::Location> locations, std::size_t k, data::DistanceMetric metric) {
  const std::size_t n = locations.size();
  for (const auto& l : locations)
    if (!std::isfinite(l.lon) || !std::isfinite(l.lat)) throw std::invalid_argument("non-finite coordinate for " + l.id);
  Tensor dist(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) dist(i, j) = dist(j, i) = distance(metric, locations[i], locations[j]);
  return top_k_rows(n, k, [&](std::size_t i, std::size_t a, std::size_t b) { return dist(i, a) < dist(i, b); });
}

Tensor symmetrize_union(const Tensor& a) {
  if (a.rows() != a.cols()) throw ShapeError("symmetrize_union: adjacency must be square");
  Tensor out = a;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = i + 1; j < a.cols(); ++j) out(i, j) = out(j, i) = std::max(a(i, j), a(j, i));
  return out;
}

Graph build_static_adjacency(std::span<const data::Location> locations, std::size_t k, data::DistanceMetric metric) {
  Graph g;
  g.n = locations.size();
  g.adjacency = symmetrize_union(knn_directed(locations, k, metric));
  g.kind = GraphKind::Static;
  return g;
}

Tensor row_correlations(const Tensor& x) {
  const std::size_t n = x.rows(), f = x.cols();
  if (f < 2) throw std::invalid_argument("row correlations need at least 2 features per location");
  // Centre and scale each row to unit norm; correlations are then dot products.
  Tensor z(n, f);
  std::vector<bool> flat(n, false);
  for (std::size_t i = 0; i < n; ++i) {
    double mean = 0.0;
    for (double v : x.row(i)) mean += v;
    mean /= static_cast<double>(f);
    double ss = 0.0;
    for (std::size_t j = 0; j < f; ++j) {
      z(i, j) = x(i, j) - mean;
      ss += z(i, j) * z(i, j);
    }
    if (ss == 0.0) {
      flat[i] = true;
      continue;
    }
    const double inv = 1.0 / std::sqrt(ss);
    for (double& v : z.row(i)) v *= inv;
  }
  Tensor r(n, n);
  kernels::gemm_nt(n, n, f, z.data(), z.data(), r.data());
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      r(i, j) = (flat[i] || flat[j]) ? kNegInf : std::clamp(r(i, j), -1.0, 1.0);
  return r;
}

Tensor top_k_largest(const Tensor& s, std::size_t k) {
  if (s.rows() != s.cols()) throw ShapeError("top_k_largest: score matrix must be square, got " + s.shape_string());
  return top_k_rows(s.rows(), k, [&](std::size_t i, std::size_t a, std::size_t b) { return s(i, a) > s(i, b); });
}

Tensor correlation_knn_directed(const Tensor& features, std::size_t k) {
  return top_k_largest(row_correlations(features), k);
}

Graph build_dynamic_prior(const Tensor& dynamic_features, std::size_t k) {
  Graph g;
  g.n = dynamic_features.rows();
  g.adjacency = symmetrize_union(correlation_knn_directed(dynamic_features, k));
  g.kind = GraphKind::DynamicPrior;
  return g;
}

Graph build_dynamic_prior(const data::EventRecord& event, std::size_t k) {
  return build_dynamic_prior(event.dynamic_features, k);
}

Graph normalize_for_gcn(const Graph& g) {
  if (g.normalized) throw std::logic_error("graph is already normalized");
  const std::size_t n = g.n;
  std::vector<double> degree(n, 1.0);  // self-loop
  for (std::size_t i = 0; i < n; ++i)
    for (double v : g.adjacency.row(i)) degree[i] += v;
  Graph out = g;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double a = g.adjacency(i, j) + (i == j ? 1.0 : 0.0);
      out.adjacency(i, j) = a == 0.0 ? 0.0 : a / std::sqrt(degree[i] * degree[j]);
    }
  out.normalized = true;
  out.weighted = true;
  return out;
}

void write_edge_list(const Tensor& adjacency, std::span<const data::Location> locations,
                     const std::filesystem::path& file) {
  std::ofstream out(file);
  out << "src,dst,weight\n";
  for (std::size_t i = 0; i < adjacency.rows(); ++i)
    for (std::size_t j = 0; j < adjacency.cols(); ++j)
      if (adjacency(i, j) != 0.0)
        out << locations[i].id << ',' << locations[j].id << ',' << detail::format_double(adjacency(i, j)) << '\n';
}

void write_matrix_csv(const Tensor& m, const std::filesystem::path& file) {
  std::ofstream out(file);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) out << (j ? "," : "") << detail::format_double(m(i, j));
    out << '\n';
  }
}

}  // namespace sahgnn::graph
