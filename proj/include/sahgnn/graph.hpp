#pragma once

#include <filesystem>
#include <span>
#include <string>

#include "sahgnn/data.hpp"
#include "sahgnn/tensor.hpp"

namespace sahgnn::graph {

enum class GraphKind { Static, DynamicPrior, Learned };

struct Graph {
  std::size_t n = 0;
  Tensor adjacency;  // n x n, non-negative
  GraphKind kind = GraphKind::Static;
  bool weighted = false;
  bool normalized = false;
};

/// Great-circle distance in kilometres between two lon/lat points (degrees).
double haversine_km(double lon1, double lat1, double lon2, double lat2);
double distance(data::DistanceMetric metric, const data::Location& a, const data::Location& b);

/// Directed k-nearest-neighbour matrix: row i has ones at i's k nearest
/// locations (self excluded, ties to the smaller index). Requires n > k.
Tensor knn_directed(std::span<const data::Location> locations, std::size_t k, data::DistanceMetric metric);

/// Union-symmetrised k-NN graph over locations; the fixed static graph.
Graph build_static_adjacency(std::span<const data::Location> locations, std::size_t k,
                             data::DistanceMetric metric);

/// Pairwise Pearson correlation between location rows of an N x F matrix.
/// Rows with zero variance correlate as -inf with everything (diagonal
/// included). Requires F >= 2.
Tensor row_correlations(const Tensor& features);

/// Directed top-k by row correlation (self excluded, ties to the smaller index).
Tensor correlation_knn_directed(const Tensor& features, std::size_t k);

/// Row i has ones at the k off-diagonal columns with the largest scores
/// (ties to the smaller index). Requires k < n.
Tensor top_k_largest(const Tensor& scores, std::size_t k);

/// Per-event prior: union-symmetrised top-k correlation graph of the event's
/// dynamic feature rows. Binary.
Graph build_dynamic_prior(const data::EventRecord& event, std::size_t k);
Graph build_dynamic_prior(const Tensor& dynamic_features, std::size_t k);

/// A or A^T, elementwise max. Keeps weights of weighted graphs.
Tensor symmetrize_union(const Tensor& adjacency);

/// D^-1/2 (A + I) D^-1/2 with D the row sums of A + I.
/// Throws std::logic_error if g is already normalised.
Graph normalize_for_gcn(const Graph& g);

/// "src,dst,weight" edge list for every non-zero entry.
void write_edge_list(const Tensor& adjacency, std::span<const data::Location> locations,
                     const std::filesystem::path& file);
/// Full matrix as CSV (no header).
void write_matrix_csv(const Tensor& m, const std::filesystem::path& file);

}  // namespace sahgnn::graph
