#pragma once

// Composite objective, Adam, the per-event training loop and the
// leave-one-out harness.

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "sahgnn/contrastive.hpp"
#include "sahgnn/data.hpp"
#include "sahgnn/grad_check.hpp"
#include "sahgnn/metrics.hpp"
#include "sahgnn/model.hpp"

namespace sahgnn::train {

struct TrainConfig {
  double lambda = 0.01;  // contrastive weight
  double gamma = 0.5;    // adjacency weight
  double delta = 5.0;    // Huber knot
  double learning_rate = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t epochs = 300;
  std::uint64_t seed = 7;
  model::Variant variant = model::Variant::Full;
  model::AdjacencyMode adjacency = model::AdjacencyMode::Binary;
  contrastive::SamplingConfig sampling;
  double temperature = 0.5;
  std::size_t k = 8;
  std::size_t d = 16;
  std::size_t hidden = 32;
  std::size_t head_hidden = 64;
  std::size_t gcn_layers = 2;
  bool residual = true;
  std::size_t static_k = 8;
  std::size_t prior_k = 8;
  std::size_t select_features = 0;  // 0 keeps every feature
  bool log1p_target = false;
  bool init_output_bias = true;     // start head.b2 at the mean training target

  /// Throws std::invalid_argument naming the offending field.
  void check() const;
  double effective_lambda() const;
  double effective_gamma() const;
};

nlohmann::ordered_json to_json(const TrainConfig& c);
/// Fields absent from j keep their defaults; unknown fields are rejected.
TrainConfig train_config_from_json(const nlohmann::json& j);

double huber(double r, double delta);
/// d huber / d r.
double huber_derivative(double r, double delta);
/// Mean Huber of y - y_hat.
double huber_loss(std::span<const double> y, std::span<const double> y_hat, double delta);
ad::Var huber_loss(ad::Var y_hat, const Tensor& y, double delta);

double total_loss(double l_p, double l_c, double l_adj, double lambda, double gamma);

/// One Adam update with bias correction; increments moments.step.
/// Throws NumericError on a non-finite gradient.
void adam_step(model::ParamSet& params, model::AdamMoments& moments, std::span<const Tensor> grads,
               const TrainConfig& config);

/// Standardised training view of a territory.
struct Prepared {
  data::Territory territory;         // selected, standardised, training events only
  data::Scalers scalers;
  Tensor static_norm;                // normalised static adjacency
  std::vector<graph::Graph> priors;  // per event
  std::vector<Tensor> targets;       // per event, N x 1 in target space
};

/// Feature selection (when configured) and scalers are fitted on the
/// training events only.
Prepared prepare(const data::Territory& territory, std::span<const std::size_t> train_events, const TrainConfig& config);

model::ModelConfig model_config(const TrainConfig& config, std::size_t f_static, std::size_t f_dynamic);

struct LossBreakdown {
  double l_p = 0.0;
  double l_c = 0.0;
  double l_adj = 0.0;
  double total = 0.0;
};

struct Objective {
  ad::Var l_p, l_c, l_adj, total;
  LossBreakdown values() const;
};

/// Builds L_p + lambda L_c + gamma L_adj on the forward pass's tape.
/// Pool event 0 of the batch is the forward pass's event; pool event 1 is
/// `other_embeddings`, entered as a constant.
Objective build_objective(const model::ForwardOutput& forward, const Tensor& target, const graph::Graph& prior,
                          const contrastive::ContrastiveBatch& batch, const Tensor& other_embeddings, double lambda,
                          double gamma, double delta);

/// Loss components on frozen parameters for one event and a fixed batch,
/// weighted by the config's effective lambda and gamma.
LossBreakdown evaluate_losses(const model::ModelState& state, const Prepared& data, std::size_t event,
                              const contrastive::ContrastiveBatch& batch, const Tensor& other_embeddings,
                              const TrainConfig& config);

struct EpochLog {
  std::size_t epoch = 0;
  LossBreakdown mean;  // averaged over the epoch's events
};

struct TrainResult {
  model::ModelState state;
  std::vector<EpochLog> history;
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(std::size_t epoch, std::string event_id, const std::string& detail);
  std::size_t epoch() const noexcept { return epoch_; }
  const std::string& event_id() const noexcept { return event_id_; }

 private:
  std::size_t epoch_;
  std::string event_id_;
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// Needs at least two training events.
TrainResult train(const data::Territory& territory, std::span<const std::size_t> train_events,
                  const TrainConfig& config, const EpochCallback& on_epoch = {});

nlohmann::ordered_json to_json(const EpochLog& log);

/// Loss components of the full, no_dsk and no_cl variants evaluated on one
/// frozen state (trained as `config` for its epochs on every event) and one
/// shared contrastive batch for the first event.
struct AblationComparison {
  LossBreakdown full, no_dsk, no_cl;
  double lambda = 0.0, gamma = 0.0;
};
AblationComparison compare_ablations(const data::Territory& territory, const TrainConfig& config);

// --- leave-one-out ---------------------------------------------------------------

struct FoldResult {
  std::size_t fold = 0;
  std::string event_id;
  bool ok = false;
  std::string error;
  std::vector<double> predictions;  // per location, count space
  double p = 0.0;                   // predicted total
  double o = 0.0;                   // observed total
  LossBreakdown final_losses;
  double wall_seconds = 0.0;
};

struct LooResult {
  std::vector<FoldResult> folds;
  metrics::MetricsReport metrics;  // successful folds only
  std::size_t failed = 0;
};

std::uint64_t fold_seed(std::uint64_t base_seed, std::size_t fold);

/// One fold per event, `parallelism` folds at a time. Needs at least 3 events.
LooResult leave_one_out(const data::Territory& territory, const TrainConfig& config, std::size_t parallelism,
                        const std::function<void(const FoldResult&)>& on_fold = {});

/// "event_id,p,o,status" rows in fold order.
std::string folds_csv(const LooResult& result);

// --- end-to-end gradient check -------------------------------------------------------

struct GradCheckInstance {
  std::size_t n_locations = 12;
  std::size_t f_static = 4;
  std::size_t f_dynamic = 4;
  std::size_t d = 4;
  std::size_t hidden = 6;
  std::size_t k = 4;
  std::uint64_t seed = 7;
};

/// Total loss of one training step on a small synthetic instance, checked
/// against central differences for every parameter group.
ad::GradCheckReport gradcheck_total_loss(const GradCheckInstance& instance, const TrainConfig& base,
                                         const ad::GradCheckOptions& options);

}  // namespace sahgnn::train
