#include "sahgnn/training.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <mutex>
#include <cmath>
#include <numeric>
#include <sstream>
#include <thread>

#include "text_io.hpp"

namespace sahgnn::train {

using nlohmann::json;
using nlohmann::ordered_json;

// --- configuration ----------------------------------------------------------------

void TrainConfig::check() const {
  auto bad = [](const std::string& what) { throw std::invalid_argument("train config: " + what); };
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) bad("lambda must be a finite value >= 0");
  if (!(gamma >= 0.0) || !std::isfinite(gamma)) bad("gamma must be a finite value >= 0");
  if (!(delta > 0.0) || !std::isfinite(delta)) bad("delta must be positive");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) bad("learning_rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) bad("beta1 must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) bad("beta2 must lie in [0, 1)");
  if (!(epsilon > 0.0)) bad("epsilon must be positive");
  if (epochs < 1) bad("epochs must be at least 1");
  if (!(temperature > 0.0) || !std::isfinite(temperature)) bad("temperature must be positive");
  if (k == 0 || d == 0 || hidden == 0 || head_hidden == 0 || gcn_layers == 0 || static_k == 0 || prior_k == 0)
    bad("k, d, hidden, head_hidden, gcn_layers, static_k and prior_k must be positive");
  if (sampling.anchors_per_event == 0 || sampling.positives_per_anchor == 0)
    bad("anchors_per_event and positives_per_anchor must be positive");
}

double TrainConfig::effective_lambda() const { return variant == model::Variant::NoCl ? 0.0 : lambda; }
double TrainConfig::effective_gamma() const { return variant == model::Variant::NoDsk ? 0.0 : gamma; }

ordered_json to_json(const TrainConfig& c) {
  ordered_json j;
  j["variant"] = model::to_string(c.variant);
  j["lambda"] = c.lambda;
  j["gamma"] = c.gamma;
  j["effective_lambda"] = c.effective_lambda();
  j["effective_gamma"] = c.effective_gamma();
  j["delta"] = c.delta;
  j["learning_rate"] = c.learning_rate;
  j["beta1"] = c.beta1;
  j["beta2"] = c.beta2;
  j["epsilon"] = c.epsilon;
  j["epochs"] = c.epochs;
  j["seed"] = c.seed;
  j["dynamic_adjacency"] = model::to_string(c.adjacency);
  j["temperature"] = c.temperature;
  j["anchors_per_event"] = c.sampling.anchors_per_event;
  j["positives_per_anchor"] = c.sampling.positives_per_anchor;
  j["intra_negatives_per_anchor"] = c.sampling.intra_negatives_per_anchor;
  j["inter_negatives_per_anchor"] = c.sampling.inter_negatives_per_anchor;
  j["k"] = c.k;
  j["d"] = c.d;
  j["hidden"] = c.hidden;
  j["head_hidden"] = c.head_hidden;
  j["gcn_layers"] = c.gcn_layers;
  j["residual"] = c.residual;
  j["static_k"] = c.static_k;
  j["prior_k"] = c.prior_k;
  j["select_features"] = c.select_features;
  j["log1p_target"] = c.log1p_target;
  j["init_output_bias"] = c.init_output_bias;
  return j;
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  for (const auto& [key, v] : j.items()) {
    if (key == "variant") c.variant = model::parse_variant(v.get<std::string>());
    else if (key == "lambda") c.lambda = v.get<double>();
    else if (key == "gamma") c.gamma = v.get<double>();
    else if (key == "effective_lambda" || key == "effective_gamma") continue;  // derived
    else if (key == "delta") c.delta = v.get<double>();
    else if (key == "learning_rate") c.learning_rate = v.get<double>();
    else if (key == "beta1") c.beta1 = v.get<double>();
    else if (key == "beta2") c.beta2 = v.get<double>();
    else if (key == "epsilon") c.epsilon = v.get<double>();
    else if (key == "epochs") c.epochs = v.get<std::size_t>();
    else if (key == "seed") c.seed = v.get<std::uint64_t>();
    else if (key == "dynamic_adjacency") c.adjacency = model::parse_adjacency_mode(v.get<std::string>());
    else if (key == "temperature") c.temperature = v.get<double>();
    else if (key == "anchors_per_event") c.sampling.anchors_per_event = v.get<std::size_t>();
    else if (key == "positives_per_anchor") c.sampling.positives_per_anchor = v.get<std::size_t>();
    else if (key == "intra_negatives_per_anchor") c.sampling.intra_negatives_per_anchor = v.get<std::size_t>();
    else if (key == "inter_negatives_per_anchor") c.sampling.inter_negatives_per_anchor = v.get<std::size_t>();
    else if (key == "k") c.k = v.get<std::size_t>();
    else if (key == "d") c.d = v.get<std::size_t>();
    else if (key == "hidden") c.hidden = v.get<std::size_t>();
    else if (key == "head_hidden") c.head_hidden = v.get<std::size_t>();
    else if (key == "gcn_layers") c.gcn_layers = v.get<std::size_t>();
    else if (key == "residual") c.residual = v.get<bool>();
    else if (key == "static_k") c.static_k = v.get<std::size_t>();
    else if (key == "prior_k") c.prior_k = v.get<std::size_t>();
    else if (key == "select_features") c.select_features = v.get<std::size_t>();
    else if (key == "log1p_target") c.log1p_target = v.get<bool>();
    else if (key == "init_output_bias") c.init_output_bias = v.get<bool>();
    else throw std::invalid_argument("train config: unknown field '" + key + "'");
  }
  return c;
}

// --- losses and optimiser ------------------------------------------------------------

double huber(double r, double delta) {
  const double a = std::abs(r);
  return a <= delta ? 0.5 * r * r : delta * (a - 0.5 * delta);
}

double huber_derivative(double r, double delta) { return std::clamp(r, -delta, delta); }

double huber_loss(std::span<const double> y, std::span<const double> y_hat, double delta) {
  if (y.size() != y_hat.size()) throw std::invalid_argument("huber_loss: length mismatch");
  if (y.empty()) throw std::invalid_argument("huber_loss: empty input");
  if (!(delta > 0.0)) throw std::invalid_argument("huber_loss: delta must be positive");
  double acc = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) acc += huber(y[i] - y_hat[i], delta);
  return acc / static_cast<double>(y.size());
}

ad::Var huber_loss(ad::Var y_hat, const Tensor& y, double delta) {
  if (!y_hat.value().same_shape(y))
    throw ShapeError("huber_loss: predictions " + y_hat.value().shape_string() + " vs targets " + y.shape_string());
  const double value = huber_loss(y.values(), y_hat.value().values(), delta);
  return y_hat.tape().record("huber", Tensor::scalar(value), {y_hat}, [y, delta](ad::BackwardContext& ctx) {
    const double g = ctx.grad_output().item() / static_cast<double>(y.size());
    const Tensor& p = ctx.input(0);
    Tensor& gp = ctx.input_grad(0);
    for (std::size_t i = 0; i < p.size(); ++i) gp[i] -= g * huber_derivative(y[i] - p[i], delta);
  });
}

double total_loss(double l_p, double l_c, double l_adj, double lambda, double gamma) {
  return l_p + lambda * l_c + gamma * l_adj;
}

void adam_step(model::ParamSet& params, model::AdamMoments& mom, std::span<const Tensor> grads,
               const TrainConfig& c) {
  if (grads.size() != params.size()) throw ShapeError("adam_step: gradient count does not match parameters");
  if (mom.m.size() != params.size()) mom = model::zero_moments(params);
  for (std::size_t p = 0; p < params.size(); ++p) {
    if (!grads[p].same_shape(params.values[p]))
      throw ShapeError("adam_step: gradient for " + params.names[p] + " has shape " + grads[p].shape_string());
    if (!grads[p].all_finite()) throw NumericError("adam_step: non-finite gradient for " + params.names[p]);
  }
  ++mom.step;
  const double t = static_cast<double>(mom.step);
  const double c1 = 1.0 - std::pow(c.beta1, t);
  const double c2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& w = params.values[p];
    Tensor& m = mom.m[p];
    Tensor& v = mom.v[p];
    const Tensor& g = grads[p];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
      w[i] -= c.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + c.epsilon);
    }
  }
}

// --- data preparation ----------------------------------------------------------------

Prepared prepare(const data::Territory& t, std::span<const std::size_t> train_events, const TrainConfig& c) {
  data::Territory sub;
  sub.name = t.name;
  sub.distance = t.distance;
  sub.locations = t.locations;
  sub.schema = t.schema;
  sub.static_features = t.static_features;
  for (std::size_t e : train_events) sub.events.push_back(t.events.at(e));

  data::FeatureSelection sel;
  if (c.select_features > 0) {
    sel = data::select_features(sub, std::min(c.select_features, sub.schema.size()));
    if (sel.static_count == 0 || sel.dynamic_count == 0)
      throw std::invalid_argument("feature selection kept no " +
                                  std::string(sel.static_count == 0 ? "static" : "dynamic") +
                                  " features; both channels need input");
  } else {
    for (const auto& f : sub.schema) sel.selected_names.push_back(f.name);
  }
  std::vector<std::size_t> all(sub.events.size());
  std::iota(all.begin(), all.end(), 0);
  auto standardized = data::standardize(sub, sel, all);

  Prepared p;
  p.territory = std::move(standardized.territory);
  p.scalers = std::move(standardized.scalers);
  const auto& pt = p.territory;
  p.static_norm =
      graph::normalize_for_gcn(graph::build_static_adjacency(pt.locations, c.static_k, pt.distance)).adjacency;
  for (const auto& e : pt.events) {
    p.priors.push_back(graph::build_dynamic_prior(e.dynamic_features, c.prior_k));
    Tensor y(pt.n_locations(), 1);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = c.log1p_target ? std::log1p(e.outages[i]) : e.outages[i];
    p.targets.push_back(std::move(y));
  }
  return p;
}

model::ModelConfig model_config(const TrainConfig& c, std::size_t f_static, std::size_t f_dynamic) {
  model::ModelConfig m;
  m.f_static = f_static;
  m.f_dynamic = f_dynamic;
  m.hidden = c.hidden;
  m.head_hidden = c.head_hidden;
  m.gcn_layers = c.gcn_layers;
  m.residual = c.residual;
  m.d = c.d;
  m.k = c.k;
  m.static_k = c.static_k;
  m.adjacency = c.adjacency;
  m.variant = c.variant;
  m.log1p_target = c.log1p_target;
  return m;
}

// --- objective -------------------------------------------------------------------------

LossBreakdown Objective::values() const {
  return {l_p.value().item(), l_c.value().item(), l_adj.value().item(), total.value().item()};
}

Objective build_objective(const model::ForwardOutput& fwd, const Tensor& target, const graph::Graph& prior,
                          const contrastive::ContrastiveBatch& batch, const Tensor& other_embeddings, double lambda,
                          double gamma, double delta) {
  ad::Tape& tape = fwd.predictions.tape();
  Objective o;
  {
    ad::Tape::Scope s(tape, "prediction loss");
    o.l_p = huber_loss(fwd.predictions, target, delta);
  }
  {
    ad::Tape::Scope s(tape, "contrastive loss");
    const ad::Var pool[] = {fwd.embeddings, tape.constant(other_embeddings)};
    o.l_c = batch.pair_count() > 0 ? contrastive::contrastive_loss(pool, batch) : tape.constant(Tensor::scalar(0.0));
  }
  {
    ad::Tape::Scope s(tape, "adjacency loss");
    o.l_adj = adj::adjacency_loss(fwd.scores, prior);
  }
  o.total = ad::add(ad::add(o.l_p, ad::scale(o.l_c, lambda)), ad::scale(o.l_adj, gamma));
  return o;
}

LossBreakdown evaluate_losses(const model::ModelState& state, const Prepared& data, std::size_t event,
                              const contrastive::ContrastiveBatch& batch, const Tensor& other_embeddings,
                              const TrainConfig& c) {
  const auto& ev = data.territory.events.at(event);
  ad::Tape tape;
  const auto params = model::bind(tape, state.params, false);
  const auto fwd = model::forward(params, state.config, {data.territory.static_features, ev.dynamic_features, data.static_norm});
  return build_objective(fwd, data.targets[event], data.priors[event], batch, other_embeddings, c.effective_lambda(),
                         c.effective_gamma(), c.delta)
      .values();
}

// --- training loop ----------------------------------------------------------------------

TrainingDiverged::TrainingDiverged(std::size_t epoch, std::string event_id, const std::string& detail)
    : std::runtime_error("training diverged at epoch " + std::to_string(epoch) + ", event '" + event_id +
                         "': " + detail),
      epoch_(epoch),
      event_id_(std::move(event_id)) {}

ordered_json to_json(const EpochLog& log) {
  ordered_json j;
  j["epoch"] = log.epoch;
  j["L_p"] = log.mean.l_p;
  j["L_c"] = log.mean.l_c;
  j["L_adj"] = log.mean.l_adj;
  j["total"] = log.mean.total;
  return j;
}

TrainResult train(const data::Territory& territory, std::span<const std::size_t> train_events, const TrainConfig& c,
                  const EpochCallback& on_epoch) {
  c.check();
  if (train_events.size() < 2) throw std::invalid_argument("train: need at least two training events");
  const Prepared data = prepare(territory, train_events, c);
  const auto& pt = data.territory;
  const std::size_t m = pt.events.size();
  const std::size_t n = pt.n_locations();
  if (c.k >= n || c.prior_k >= n || c.static_k >= n)
    throw std::invalid_argument("train: k, prior_k and static_k must be below the location count " + std::to_string(n));

  TrainResult result;
  model::ModelState& state = result.state;
  state.config = model_config(c, pt.count(data::FeatureRole::Static), pt.count(data::FeatureRole::Dynamic));
  state.scalers = data.scalers;
  Rng init_rng = make_rng(c.seed, "train.init");
  state.params = model::init_params(state.config, init_rng);
  if (c.init_output_bias) {
    double mean = 0.0;
    for (const auto& y : data.targets)
      for (double v : y.values()) mean += v;
    state.params.at("head.b2")(0, 0) = mean / static_cast<double>(m * n);
  }
  state.adam = model::zero_moments(state.params);

  Rng order_rng = make_rng(c.seed, "train.order");
  Rng pair_rng = make_rng(c.seed, "train.pairs");
  Rng other_rng = make_rng(c.seed, "train.other");

  // Embedding and binary-graph cache per event, refreshed as each event is
  // visited. Seeded with one pass under the initial parameters.
  std::vector<Tensor> cached_embeddings(m), cached_binary(m);
  auto run_forward = [&](const model::BoundParams& p, std::size_t e) {
    return model::forward(p, state.config, {pt.static_features, pt.events[e].dynamic_features, data.static_norm});
  };
  for (std::size_t e = 0; e < m; ++e) {
    ad::Tape tape;
    const auto p = model::bind(tape, state.params, false);
    const auto fwd = run_forward(p, e);
    cached_embeddings[e] = fwd.embeddings.value();
    cached_binary[e] = fwd.binary;
  }

  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  const std::size_t anchor_pool[] = {0};
  for (std::size_t epoch = 1; epoch <= c.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), order_rng);
    LossBreakdown sum;
    for (std::size_t e : order) {
      try {
        ad::Tape tape;
        const auto p = model::bind(tape, state.params);
        const auto fwd = run_forward(p, e);
        std::uniform_int_distribution<std::size_t> pick(0, m - 2);
        std::size_t other = pick(other_rng);
        if (other >= e) ++other;
        const Tensor binaries[] = {fwd.binary, cached_binary[other]};
        const auto batch =
            contrastive::sample_pairs(binaries, anchor_pool, c.sampling, c.temperature, pair_rng);
        const Objective obj = build_objective(fwd, data.targets[e], data.priors[e], batch, cached_embeddings[other],
                                              c.effective_lambda(), c.effective_gamma(), c.delta);
        tape.backward(obj.total);
        std::vector<Tensor> grads;
        grads.reserve(p.vars.size());
        for (const auto& v : p.vars) grads.push_back(tape.grad(v));
        adam_step(state.params, state.adam, grads, c);
        for (const auto& w : state.params.values)
          if (!w.all_finite()) throw NumericError("parameters became non-finite");
        const LossBreakdown l = obj.values();
        sum.l_p += l.l_p;
        sum.l_c += l.l_c;
        sum.l_adj += l.l_adj;
        sum.total += l.total;
        cached_embeddings[e] = fwd.embeddings.value();
        cached_binary[e] = fwd.binary;
      } catch (const NumericError& err) {
        throw TrainingDiverged(epoch, pt.events[e].event_id, err.what());
      }
    }
    const double inv = 1.0 / static_cast<double>(m);
    EpochLog log{epoch, {sum.l_p * inv, sum.l_c * inv, sum.l_adj * inv, sum.total * inv}};
    result.history.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  return result;
}

AblationComparison compare_ablations(const data::Territory& t, const TrainConfig& c) {
  TrainConfig full = c;
  full.variant = model::Variant::Full;
  std::vector<std::size_t> events(t.events.size());
  std::iota(events.begin(), events.end(), 0);
  const TrainResult tr = train(t, events, full);
  const Prepared data = prepare(t, events, full);

  std::vector<Tensor> emb, bin;
  for (std::size_t e : {0, 1}) {
    ad::Tape tape;
    const auto fwd = model::forward(model::bind(tape, tr.state.params, false), tr.state.config,
                                    {data.territory.static_features, data.territory.events[e].dynamic_features,
                                     data.static_norm});
    emb.push_back(fwd.embeddings.value());
    bin.push_back(fwd.binary);
  }
  Rng rng = make_rng(c.seed, "ablation.pairs");
  const std::size_t anchor_pool[] = {0};
  const auto batch = contrastive::sample_pairs(bin, anchor_pool, c.sampling, c.temperature, rng);

  AblationComparison out;
  out.lambda = c.lambda;
  out.gamma = c.gamma;
  out.full = evaluate_losses(tr.state, data, 0, batch, emb[1], full);
  TrainConfig v = full;
  v.variant = model::Variant::NoDsk;
  out.no_dsk = evaluate_losses(tr.state, data, 0, batch, emb[1], v);
  v.variant = model::Variant::NoCl;
  out.no_cl = evaluate_losses(tr.state, data, 0, batch, emb[1], v);
  return out;
}

// --- leave-one-out -------------------------------------------------------------------------

std::uint64_t fold_seed(std::uint64_t base_seed, std::size_t fold) { return hash64(base_seed, fold); }

LooResult leave_one_out(const data::Territory& t, const TrainConfig& c, std::size_t parallelism,
                        const std::function<void(const FoldResult&)>& on_fold) {
  c.check();
  const std::size_t m = t.events.size();
  if (m < 3) throw std::invalid_argument("leave_one_out: need at least 3 events");
  parallelism = std::clamp<std::size_t>(parallelism, 1, m);

  LooResult result;
  result.folds.resize(m);
  std::atomic<std::size_t> next{0};
  std::mutex callback_mutex;
  auto worker = [&] {
    for (std::size_t fold = next++; fold < m; fold = next++) {
      const auto start = std::chrono::steady_clock::now();
      FoldResult& r = result.folds[fold];
      r.fold = fold;
      r.event_id = t.events[fold].event_id;
      for (double v : t.events[fold].outages) r.o += v;
      try {
        TrainConfig fc = c;
        fc.seed = fold_seed(c.seed, fold);
        std::vector<std::size_t> train_events;
        for (std::size_t e = 0; e < m; ++e)
          if (e != fold) train_events.push_back(e);
        const TrainResult tr = train(t, train_events, fc);
        r.final_losses = tr.history.back().mean;
        r.predictions = model::predict(tr.state, t, t.events[fold]);
        for (double v : r.predictions) r.p += v;
        if (!std::isfinite(r.p)) throw NumericError("non-finite prediction for the held-out event");
        r.ok = true;
      } catch (const std::exception& err) {
        r.ok = false;
        r.error = err.what();
        r.predictions.clear();
        r.p = 0.0;
      }
      r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      if (on_fold) {
        std::lock_guard lock(callback_mutex);
        on_fold(r);
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t i = 1; i < parallelism; ++i) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();

  std::vector<metrics::EventScore> scores;
  for (const auto& r : result.folds) {
    if (r.ok) scores.push_back({r.event_id, r.p, r.o});
    else ++result.failed;
  }
  result.metrics = metrics::evaluate(scores);
  return result;
}

std::string folds_csv(const LooResult& result) {
  std::string out = "event_id,p,o,status\n";
  for (const auto& r : result.folds) {
    out += r.event_id + ',' + detail::format_double(r.p) + ',' + detail::format_double(r.o) + ',' +
           (r.ok ? "ok" : "failed") + '\n';
  }
  return out;
}

// --- gradient check --------------------------------------------------------------------------

ad::GradCheckReport gradcheck_total_loss(const GradCheckInstance& inst, const TrainConfig& base,
                                         const ad::GradCheckOptions& options) {
  data::SynthSpec spec;
  spec.n_locations = inst.n_locations;
  spec.n_events = 2;
  spec.n_static = inst.f_static;
  spec.n_dynamic = inst.f_dynamic;
  spec.seed = inst.seed;
  spec.name = "gradcheck";
  const data::Territory territory = data::synthesize(spec);

  TrainConfig c = base;
  c.d = inst.d;
  c.hidden = inst.hidden;
  c.head_hidden = inst.hidden;
  c.k = inst.k;
  c.static_k = inst.k;
  c.prior_k = inst.k;
  c.select_features = 0;
  c.check();
  const std::size_t events[] = {0, 1};
  const Prepared data = prepare(territory, events, c);
  const auto mc = model_config(c, inst.f_static, inst.f_dynamic);
  Rng rng = make_rng(inst.seed, "gradcheck.init");
  model::ParamSet params = model::init_params(mc, rng);
  // Non-zero biases so every head parameter carries signal.
  for (const char* name : {"head.b1", "head.b2"})
    for (double& v : params.at(name).values()) v = std::uniform_real_distribution<double>(-0.5, 0.5)(rng);

  auto inputs = [&](std::size_t e) {
    return model::EventInputs{data.territory.static_features, data.territory.events[e].dynamic_features,
                              data.static_norm};
  };
  // Frozen pieces: the other event's embeddings and the sampled batch.
  Tensor other_embeddings, own_binary, other_binary;
  {
    ad::Tape tape;
    const auto p = model::bind(tape, params, false);
    const auto f1 = model::forward(p, mc, inputs(1));
    other_embeddings = f1.embeddings.value();
    other_binary = f1.binary;
    own_binary = model::forward(p, mc, inputs(0)).binary;
  }
  Rng pair_rng = make_rng(inst.seed, "gradcheck.pairs");
  const Tensor binaries[] = {own_binary, other_binary};
  const std::size_t anchors[] = {0};
  const auto batch = contrastive::sample_pairs(binaries, anchors, c.sampling, c.temperature, pair_rng);

  ad::ScalarFunction f = [&](ad::Tape&, std::span<const ad::Var> vars) {
    model::BoundParams p;
    p.set = &params;
    p.vars.assign(vars.begin(), vars.end());
    const auto fwd = model::forward(p, mc, inputs(0));
    return build_objective(fwd, data.targets[0], data.priors[0], batch, other_embeddings, c.effective_lambda(),
                           c.effective_gamma(), c.delta)
        .total;
  };
  return ad::grad_check(f, params.values, params.names, options);
}

}  // namespace sahgnn::train
