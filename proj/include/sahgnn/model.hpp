#pragma once

// The hybrid two-channel GCN: a static channel over the fixed geographic
// graph, a dynamic channel over the learned event graph, concatenated
// embeddings, and a two-layer MLP regression head.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "sahgnn/adjacency.hpp"
#include "sahgnn/data.hpp"
#include "sahgnn/graph.hpp"
#include "sahgnn/rng.hpp"
#include "sahgnn/tape.hpp"

namespace sahgnn::model {

enum class Variant { Full, NoHgnn, NoDsk, NoCl };
enum class AdjacencyMode { Binary, Soft };

std::string to_string(Variant v);
std::string to_string(AdjacencyMode m);
/// Throws std::invalid_argument for unknown names.
Variant parse_variant(const std::string& name);
AdjacencyMode parse_adjacency_mode(const std::string& name);

struct ModelConfig {
  std::size_t f_static = 0;
  std::size_t f_dynamic = 0;
  std::size_t hidden = 32;
  std::size_t head_hidden = 64;
  std::size_t gcn_layers = 2;
  bool residual = true;  // on every layer after the first
  std::size_t d = 16;
  std::size_t k = 8;
  std::size_t static_k = 8;
  AdjacencyMode adjacency = AdjacencyMode::Binary;
  Variant variant = Variant::Full;
  bool log1p_target = false;

  /// Throws std::invalid_argument on inconsistent sizes.
  void check() const;
  /// "static" and "dynamic", or "shared" for no_hgnn.
  std::vector<std::string> gcn_stacks() const;
  std::size_t embedding_dim() const;
};

nlohmann::ordered_json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

/// Named parameter tensors in a fixed order.
struct ParamSet {
  std::vector<std::string> names;
  std::vector<Tensor> values;

  std::size_t size() const noexcept { return names.size(); }
  /// Throws std::out_of_range for unknown names.
  std::size_t index(const std::string& name) const;
  const Tensor& at(const std::string& name) const { return values[index(name)]; }
  Tensor& at(const std::string& name) { return values[index(name)]; }
  bool contains(const std::string& name) const;
  std::size_t entry_count() const;
};

/// adj.w1, adj.w2, <stack>.gcn<l> per stack and layer, head.w1, head.b1,
/// head.w2, head.b2. Weights Glorot uniform, biases zero.
ParamSet init_params(const ModelConfig& config, Rng& rng);

/// Parameters bound as leaves on one tape.
struct BoundParams {
  const ParamSet* set = nullptr;
  std::vector<ad::Var> vars;
  ad::Var operator[](const std::string& name) const { return vars[set->index(name)]; }
};
BoundParams bind(ad::Tape& tape, const ParamSet& params, bool trainable = true);

/// relu(a_norm h W), plus h when residual.
ad::Var gcn_layer(ad::Var a_norm, ad::Var h, ad::Var weight, bool residual);

struct EventInputs {
  const Tensor& static_features;   // N x F_s, standardised
  const Tensor& dynamic_features;  // N x F_d, standardised
  const Tensor& static_norm;       // normalised static adjacency
};

struct ForwardOutput {
  ad::Var embeddings;   // N x embedding_dim
  ad::Var predictions;  // N x 1, in target space
  ad::Var scores;       // learned adjacency scores
  Tensor binary;        // directed top-k of the scores
};

ForwardOutput forward(const BoundParams& params, const ModelConfig& config, const EventInputs& inputs);

struct AdamMoments {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::uint64_t step = 0;
};

struct ModelState {
  ModelConfig config;
  ParamSet params;
  AdamMoments adam;
  data::Scalers scalers;  // feature names and standardisation, in model column order
};

AdamMoments zero_moments(const ParamSet& params);

/// Layout: 8-byte magic "SAHGNNCK", u64 little-endian header length, UTF-8
/// JSON header, then every parameter, then every first moment, then every
/// second moment, each as little-endian float64 in the header's order.
void save_checkpoint(const ModelState& state, const std::filesystem::path& file);
ModelState load_checkpoint(const std::filesystem::path& file);

/// Static / dynamic columns of a raw territory mapped to the model's
/// features and standardised with its scalers.
Tensor prepare_static(const ModelState& state, const data::Territory& territory);
Tensor prepare_dynamic(const ModelState& state, const data::Territory& territory, const data::EventRecord& event);

/// Normalised static adjacency for a territory under this configuration.
Tensor static_norm(const ModelConfig& config, const data::Territory& territory);

/// Per-location outage predictions in count space. No prior is used.
std::vector<double> predict(const ModelState& state, const data::Territory& territory,
                            const data::EventRecord& event);

/// Learned adjacency for an event under the trained parameters.
adj::LearnedGraph learned_graph(const ModelState& state, const data::Territory& territory,
                                const data::EventRecord& event);

}  // namespace sahgnn::model
