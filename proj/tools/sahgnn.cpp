#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "sahgnn/data.hpp"
#include "sahgnn/graph.hpp"
#include "sahgnn/metrics.hpp"
#include "sahgnn/model.hpp"
#include "sahgnn/training.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace sahgnn;

namespace {

constexpr int kOk = 0;
constexpr int kCheckFailed = 1;
constexpr int kUsage = 2;
constexpr int kRunFailed = 3;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct RunError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// --- logging ----------------------------------------------------------------

enum class Level { Warn, Info, Debug };

Level log_level() {
  const char* v = std::getenv("SAHGNN_LOG");
  if (!v) return Level::Warn;
  const std::string s(v);
  if (s == "debug") return Level::Debug;
  if (s == "info") return Level::Info;
  return Level::Warn;
}

void log(Level level, const std::string& msg) {
  static const Level threshold = log_level();
  if (level > threshold) return;
  const char* tag = level == Level::Debug ? "debug" : level == Level::Info ? "info" : "warn";
  std::cerr << "[" << tag << "] " << msg << '\n';
}

// --- shared flags -------------------------------------------------------------

struct TrainFlags {
  std::string config_file;
  std::optional<double> lambda, gamma, delta, lr, temperature;
  std::optional<std::size_t> epochs, k, d, hidden, head_hidden, gcn_layers, static_k, prior_k, select, anchors;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> variant, adjacency;
  bool log1p = false, no_residual = false;

  void attach(CLI::App* app) {
    app->add_option("--config", config_file, "TrainConfig JSON; flags override its fields")->check(CLI::ExistingFile);
    app->add_option("--epochs", epochs);
    app->add_option("--lr", lr, "Adam learning rate");
    app->add_option("--lambda", lambda, "contrastive weight");
    app->add_option("--gamma", gamma, "adjacency prior weight");
    app->add_option("--delta", delta, "Huber threshold");
    app->add_option("--temperature", temperature);
    app->add_option("--seed", seed);
    app->add_option("--variant", variant, "full, no_hgnn, no_dsk or no_cl");
    app->add_option("--adjacency", adjacency, "binary or soft");
    app->add_option("--k", k, "learned graph top-k");
    app->add_option("--d", d, "adjacency embedding width");
    app->add_option("--hidden", hidden);
    app->add_option("--head-hidden", head_hidden);
    app->add_option("--gcn-layers", gcn_layers);
    app->add_option("--static-k", static_k);
    app->add_option("--prior-k", prior_k);
    app->add_option("--select-features", select, "keep the top-n features by |r| (0 keeps all)");
    app->add_option("--anchors", anchors, "contrastive anchors per event");
    app->add_flag("--log1p-target", log1p, "train on log1p(outages)");
    app->add_flag("--no-residual", no_residual);
  }

  train::TrainConfig resolve() const {
    train::TrainConfig c;
    try {
      if (!config_file.empty()) {
        std::ifstream in(config_file);
        nlohmann::json j = nlohmann::json::parse(in);
        if (j.contains("train_config")) j = j["train_config"];
        c = train::train_config_from_json(j);
      }
      if (lambda) c.lambda = *lambda;
      if (gamma) c.gamma = *gamma;
      if (delta) c.delta = *delta;
      if (lr) c.learning_rate = *lr;
      if (temperature) c.temperature = *temperature;
      if (epochs) c.epochs = *epochs;
      if (k) c.k = *k;
      if (d) c.d = *d;
      if (hidden) c.hidden = *hidden;
      if (head_hidden) c.head_hidden = *head_hidden;
      if (gcn_layers) c.gcn_layers = *gcn_layers;
      if (static_k) c.static_k = *static_k;
      if (prior_k) c.prior_k = *prior_k;
      if (select) c.select_features = *select;
      if (anchors) c.sampling.anchors_per_event = *anchors;
      if (seed) c.seed = *seed;
      if (variant) c.variant = model::parse_variant(*variant);
      if (adjacency) c.adjacency = model::parse_adjacency_mode(*adjacency);
      if (log1p) c.log1p_target = true;
      if (no_residual) c.residual = false;
      c.check();
    } catch (const nlohmann::json::exception& e) {
      throw UsageError(std::string("config: ") + e.what());
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    return c;
  }
};

std::string g_command_line;

void write_text(const fs::path& file, const std::string& text) {
  std::ofstream out(file, std::ios::binary);
  out << text;
  if (!out) throw RunError("cannot write " + file.string());
}

void prepare_out(const fs::path& dir, const std::string& command, ordered_json config) {
  fs::create_directories(dir);
  ordered_json j;
  j["command"] = command;
  j["argv"] = g_command_line;
  for (auto& [key, value] : config.items()) j[key] = value;
  write_text(dir / "config.json", j.dump(2) + "\n");
}

data::Territory load(const std::string& dir) {
  try {
    return data::load_territory(dir);
  } catch (const data::ValidationError& e) {
    throw UsageError(std::string("invalid dataset: ") + e.what());
  }
}

std::size_t event_index(const data::Territory& t, const std::string& id) {
  try {
    return t.event_index(id);
  } catch (const std::out_of_range&) {
    throw UsageError("unknown event '" + id + "'");
  }
}

std::vector<std::string> split(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

std::string fmt(double v) {
  if (!std::isfinite(v)) return "nan";
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

// --- loo output -----------------------------------------------------------------

void write_loo(const fs::path& dir, const data::Territory& t, const train::LooResult& r, const std::string& label) {
  write_text(dir / "folds.csv", train::folds_csv(r));
  std::string pred = "event_id,location_id,prediction,observed\n";
  for (const auto& f : r.folds) {
    if (!f.ok) continue;
    const auto& ev = t.events[f.fold];
    for (std::size_t i = 0; i < f.predictions.size(); ++i)
      pred += f.event_id + ',' + t.locations[i].id + ',' + fmt(f.predictions[i]) + ',' + fmt(ev.outages[i]) + '\n';
  }
  write_text(dir / "predictions.csv", pred);
  ordered_json m;
  m["variant"] = label;
  m["folds"] = r.folds.size();
  m["failed_folds"] = r.failed;
  const ordered_json report = metrics::to_json(r.metrics);
  for (const auto& [key, value] : report.items()) m[key] = value;
  write_text(dir / "metrics.json", m.dump(2) + "\n");
}

train::LooResult run_loo(const data::Territory& t, const train::TrainConfig& c, std::size_t parallel) {
  log(Level::Info, "leave-one-out over " + std::to_string(t.events.size()) + " events, variant " +
                       model::to_string(c.variant) + ", parallel " + std::to_string(parallel));
  return train::leave_one_out(t, c, parallel, [](const train::FoldResult& f) {
    if (f.ok)
      log(Level::Info, "fold " + std::to_string(f.fold) + " (" + f.event_id + ") p=" + fmt(f.p) + " o=" + fmt(f.o) +
                           " in " + fmt(f.wall_seconds) + "s");
    else
      log(Level::Warn, "fold " + std::to_string(f.fold) + " (" + f.event_id + ") failed: " + f.error);
  });
}

// --- subcommands -------------------------------------------------------------------

int cmd_synth(const data::SynthSpec& spec, const std::string& out) {
  try {
    data::check(spec);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const data::Territory t = data::synthesize(spec);
  data::save_territory(t, out);
  ordered_json j;
  j["synth"] = {{"locations", spec.n_locations}, {"events", spec.n_events},
                {"static", spec.n_static},       {"dynamic", spec.n_dynamic},
                {"correlation_strength", spec.correlation_strength}, {"seed", spec.seed},
                {"name", spec.name}};
  prepare_out(out, "synth", j);
  std::cout << "territory " << t.name << ": N=" << t.n_locations() << " m=" << t.events.size()
            << " F_s=" << t.count(data::FeatureRole::Static) << " F_d=" << t.count(data::FeatureRole::Dynamic)
            << " -> " << out << '\n';
  return kOk;
}

int cmd_validate(const std::string& dir, bool json_errors) {
  try {
    const data::Territory t = data::load_territory(dir);
    std::cout << "ok: N=" << t.n_locations() << " m=" << t.events.size()
              << " F_s=" << t.count(data::FeatureRole::Static) << " F_d=" << t.count(data::FeatureRole::Dynamic)
              << '\n';
    return kOk;
  } catch (const data::ValidationError& e) {
    for (const auto& is : e.issues()) {
      if (json_errors) std::cerr << is.to_json() << '\n';
      else std::cerr << "error [" << is.code << "] " << is.message << '\n';
    }
    return kUsage;
  }
}

int cmd_select(const std::string& dir, std::size_t count, const std::string& out, bool write_dataset) {
  const data::Territory t = load(dir);
  data::FeatureSelection sel;
  try {
    sel = data::select_features(t, count);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  prepare_out(out, "select-features", {{"dataset", dir}, {"count", count}});
  std::string csv = "rank,name,role,r\n";
  for (std::size_t i = 0; i < sel.selected_names.size(); ++i) {
    const auto& name = sel.selected_names[i];
    std::string role;
    for (const auto& f : t.schema)
      if (f.name == name) role = data::to_string(f.role);
    csv += std::to_string(i + 1) + ',' + name + ',' + role + ',' + fmt(sel.correlations[i]) + '\n';
  }
  write_text(fs::path(out) / "selection.csv", csv);
  if (write_dataset) data::save_territory(data::apply_selection(t, sel), fs::path(out) / "dataset");
  std::cout << "selected " << sel.selected_names.size() << " features (" << sel.static_count << " static, "
            << sel.dynamic_count << " dynamic)\n";
  return kOk;
}

int cmd_train(const std::string& dir, const TrainFlags& flags, const std::string& out, const std::string& events_arg,
              const std::string& graphs_dir, const std::string& learned_event) {
  const train::TrainConfig c = flags.resolve();
  const data::Territory t = load(dir);
  std::vector<std::size_t> events;
  if (events_arg.empty()) {
    events.resize(t.events.size());
    std::iota(events.begin(), events.end(), 0);
  } else {
    for (const auto& id : split(events_arg)) events.push_back(event_index(t, id));
  }
  if (events.size() < 2) throw UsageError("training needs at least two events");
  std::optional<std::size_t> learned_index;
  if (!learned_event.empty()) learned_index = event_index(t, learned_event);

  prepare_out(out, "train", {{"dataset", dir}, {"events", events_arg}, {"train_config", train::to_json(c)}});
  std::ofstream log_file(fs::path(out) / "train_log.jsonl");
  const auto start = std::chrono::steady_clock::now();
  train::TrainResult r;
  try {
    r = train::train(t, events, c, [&](const train::EpochLog& e) {
      const std::string line = train::to_json(e).dump();
      log_file << line << '\n';
      log(Level::Debug, line);
    });
  } catch (const train::TrainingDiverged& e) {
    throw RunError(e.what());
  }
  model::save_checkpoint(r.state, fs::path(out) / "model.ckpt");
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  if (!graphs_dir.empty()) {
    const fs::path gdir(graphs_dir);
    fs::create_directories(gdir);
    graph::write_edge_list(graph::build_static_adjacency(t.locations, c.static_k, t.distance).adjacency, t.locations,
                           gdir / "static.csv");
    const train::Prepared data = train::prepare(t, events, c);
    for (std::size_t i = 0; i < events.size(); ++i)
      graph::write_edge_list(data.priors[i].adjacency, t.locations,
                             gdir / ("prior_" + t.events[events[i]].event_id + ".csv"));
  }
  if (learned_index) {
    const auto& ev = t.events[*learned_index];
    const adj::LearnedGraph g = model::learned_graph(r.state, t, ev);
    graph::write_matrix_csv(g.scores, fs::path(out) / ("learned_" + ev.event_id + "_scores.csv"));
    graph::write_matrix_csv(g.binary, fs::path(out) / ("learned_" + ev.event_id + "_binary.csv"));
  }
  const auto& last = r.history.back().mean;
  std::cout << "trained " << c.epochs << " epochs on " << events.size() << " events in " << std::fixed << std::setprecision(2) << secs
            << std::defaultfloat << std::setprecision(6) << "s; final L_p=" << last.l_p << " L_c=" << last.l_c << " L_adj=" << last.l_adj
            << " total=" << last.total << '\n';
  return kOk;
}

int cmd_predict(const std::string& dir, const std::string& model_file, const std::string& out,
                const std::string& events_arg, bool geojson) {
  const data::Territory t = load(dir);
  model::ModelState state;
  try {
    state = model::load_checkpoint(model_file);
  } catch (const std::runtime_error& e) {
    throw UsageError(e.what());
  }
  std::vector<std::size_t> events;
  if (events_arg.empty()) {
    events.resize(t.events.size());
    std::iota(events.begin(), events.end(), 0);
  } else {
    for (const auto& id : split(events_arg)) events.push_back(event_index(t, id));
  }
  prepare_out(out, "predict", {{"dataset", dir}, {"model", model_file}, {"events", events_arg}});
  std::string csv = "event_id,location_id,prediction,observed\n";
  std::string totals = "event_id,p,o\n";
  ordered_json features = ordered_json::array();
  for (std::size_t e : events) {
    const auto& ev = t.events[e];
    std::vector<double> p;
    try {
      p = model::predict(state, t, ev);
    } catch (const std::invalid_argument& err) {
      throw UsageError(err.what());
    }
    double sp = 0, so = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      csv += ev.event_id + ',' + t.locations[i].id + ',' + fmt(p[i]) + ',' + fmt(ev.outages[i]) + '\n';
      sp += p[i];
      so += ev.outages[i];
      if (geojson)
        features.push_back({{"type", "Feature"},
                            {"geometry", {{"type", "Point"}, {"coordinates", {t.locations[i].lon, t.locations[i].lat}}}},
                            {"properties",
                             {{"event_id", ev.event_id},
                              {"location_id", t.locations[i].id},
                              {"prediction", p[i]},
                              {"observed", ev.outages[i]}}}});
    }
    totals += ev.event_id + ',' + fmt(sp) + ',' + fmt(so) + '\n';
  }
  write_text(fs::path(out) / "predictions.csv", csv);
  write_text(fs::path(out) / "totals.csv", totals);
  if (geojson)
    write_text(fs::path(out) / "predictions.geojson",
               ordered_json{{"type", "FeatureCollection"}, {"features", features}}.dump() + "\n");
  std::cout << "predicted " << events.size() << " events -> " << out << '\n';
  return kOk;
}

int cmd_loo(const std::string& dir, const TrainFlags& flags, const std::string& out, std::size_t parallel,
            bool table) {
  const train::TrainConfig c = flags.resolve();
  const data::Territory t = load(dir);
  if (t.events.size() < 3) throw UsageError("leave-one-out needs at least 3 events");
  prepare_out(out, "loo", {{"dataset", dir}, {"parallel", parallel}, {"train_config", train::to_json(c)}});
  const train::LooResult r = run_loo(t, c, parallel);
  const std::string label = model::to_string(c.variant);
  write_loo(out, t, r, label);
  if (table) {
    const std::vector<std::string> labels{label};
    const std::vector<metrics::MetricsReport> reports{r.metrics};
    std::cout << metrics::render_table(labels, reports);
  }
  std::cout << r.folds.size() - r.failed << "/" << r.folds.size() << " folds ok; MAPE " << fmt(r.metrics.mape)
            << '\n';
  return r.failed == r.folds.size() ? kRunFailed : kOk;
}

int cmd_gradcheck(const TrainFlags& flags, const std::string& fault, double tolerance) {
  const train::TrainConfig c = flags.resolve();
  if (!fault.empty()) ad::testing::inject_backward_fault(fault);
  ad::GradCheckOptions o;
  o.tolerance = tolerance;
  const auto report = train::gradcheck_total_loss({}, c, o);
  std::printf("%-16s %8s %12s\n", "parameter", "entries", "max_rel_err");
  for (const auto& p : report.parameters)
    std::printf("%-16s %8zu %12.3e\n", p.name.c_str(), p.entries, p.max_rel_error);
  if (report.passed) {
    std::printf("PASS: max relative error %.3e < %.0e\n", report.max_rel_error, tolerance);
    return kOk;
  }
  std::printf("FAIL: max relative error %.3e at %s\n", report.max_rel_error, report.worst_parameter.c_str());
  for (const auto& op : ad::check_ops(o))
    if (!op.passed) std::printf("FAIL: op %s backward disagrees with finite differences (%.3e)\n", op.op.c_str(),
                                op.max_rel_error);
  ad::testing::inject_backward_fault("");
  return kCheckFailed;
}

std::vector<double> parse_grid(const std::string& s, const char* what) {
  std::vector<double> out;
  for (const auto& item : split(s)) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError(std::string("bad ") + what + " value '" + item + "'");
    }
  }
  if (out.empty()) throw UsageError(std::string(what) + " grid is empty");
  return out;
}

int cmd_grid(const std::string& dir, const TrainFlags& flags, const std::string& out, const std::string& lambdas_arg,
             const std::string& gammas_arg, std::size_t parallel, const std::string& holdout) {
  const train::TrainConfig base = flags.resolve();
  const auto lambdas = parse_grid(lambdas_arg, "lambda");
  const auto gammas = parse_grid(gammas_arg, "gamma");
  const data::Territory t = load(dir);
  std::optional<std::size_t> held;
  if (!holdout.empty()) held = event_index(t, holdout);
  prepare_out(out, "grid",
              {{"dataset", dir}, {"lambdas", lambdas}, {"gammas", gammas}, {"holdout", holdout},
               {"parallel", parallel}, {"train_config", train::to_json(base)}});
  std::string csv = "lambda,gamma,mape,ae_q25,ape_q25,failed,seconds\n";
  bool any_ok = false;
  for (double l : lambdas)
    for (double g : gammas) {
      train::TrainConfig c = base;
      c.lambda = l;
      c.gamma = g;
      try {
        c.check();
      } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
      }
      const auto start = std::chrono::steady_clock::now();
      metrics::MetricsReport m;
      std::size_t failed = 0;
      if (held) {
        std::vector<std::size_t> train_events;
        for (std::size_t e = 0; e < t.events.size(); ++e)
          if (e != *held) train_events.push_back(e);
        try {
          const auto r = train::train(t, train_events, c);
          const auto p = model::predict(r.state, t, t.events[*held]);
          const double sp = std::accumulate(p.begin(), p.end(), 0.0);
          const auto& o = t.events[*held].outages;
          const std::vector<metrics::EventScore> s{{holdout, sp, std::accumulate(o.begin(), o.end(), 0.0)}};
          m = metrics::evaluate(s);
        } catch (const std::exception& e) {
          log(Level::Warn, "cell lambda=" + fmt(l) + " gamma=" + fmt(g) + " failed: " + e.what());
          failed = 1;
          m = metrics::evaluate(std::vector<metrics::EventScore>{});
        }
      } else {
        const auto r = run_loo(t, c, parallel);
        m = r.metrics;
        failed = r.failed;
        if (failed) log(Level::Warn, std::to_string(failed) + " folds failed at lambda=" + fmt(l) + " gamma=" + fmt(g));
      }
      any_ok = any_ok || failed == 0 || !held;
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      csv += fmt(l) + ',' + fmt(g) + ',' + fmt(m.mape) + ',' + fmt(m.ae_q25) + ',' + fmt(m.ape_q25) + ',' +
             std::to_string(failed) + ',' + fmt(secs) + '\n';
      log(Level::Info, "cell lambda=" + fmt(l) + " gamma=" + fmt(g) + " MAPE " + fmt(m.mape));
    }
  write_text(fs::path(out) / "grid.csv", csv);
  std::cout << csv;
  return any_ok ? kOk : kRunFailed;
}

int cmd_ablate(const std::string& dir, const TrainFlags& flags, const std::string& out, const std::string& variants_arg,
               std::size_t parallel) {
  const train::TrainConfig base = flags.resolve();
  std::vector<model::Variant> variants;
  try {
    for (const auto& v : split(variants_arg)) variants.push_back(model::parse_variant(v));
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  if (variants.empty()) throw UsageError("no variants given");
  const data::Territory t = load(dir);
  if (t.events.size() < 3) throw UsageError("leave-one-out needs at least 3 events");
  prepare_out(out, "ablate",
              {{"dataset", dir}, {"variants", variants_arg}, {"parallel", parallel},
               {"train_config", train::to_json(base)}});
  std::vector<std::string> labels;
  std::vector<metrics::MetricsReport> reports;
  bool any_ok = false;
  for (auto v : variants) {
    train::TrainConfig c = base;
    c.variant = v;
    const auto r = run_loo(t, c, parallel);
    const std::string label = model::to_string(v);
    write_loo(fs::path(out) / label, t, r, label);
    labels.push_back(label);
    reports.push_back(r.metrics);
    any_ok = any_ok || r.failed < r.folds.size();
  }
  const std::string table = metrics::render_table(labels, reports);
  write_text(fs::path(out) / "ablation.txt", table);
  std::cout << table;
  return any_ok ? kOk : kRunFailed;
}

}  // namespace

int main(int argc, char** argv) {
  for (int i = 0; i < argc; ++i) g_command_line += (i ? " " : "") + std::string(argv[i]);

  CLI::App app{"Spatially aware hybrid graph network for storm outage prediction"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "sahgnn 0.1.0");

  data::SynthSpec spec;
  std::string out, dataset, events_arg, graphs_dir, learned_event, model_file, fault, lambdas = "0,0.01,0.1,1",
                                                                                       gammas = "0.5",
                                                                                       holdout,
                                                                                       variants = "full,no_hgnn,no_dsk,no_cl";
  std::size_t count = 50, parallel = 1;
  bool json_errors = false, write_dataset = false, table = false, geojson = false;
  double tolerance = 1e-4;
  TrainFlags flags;

  auto* synth = app.add_subcommand("synth", "write a synthetic territory dataset");
  synth->add_option("--locations", spec.n_locations)->capture_default_str();
  synth->add_option("--events", spec.n_events)->capture_default_str();
  synth->add_option("--static", spec.n_static)->capture_default_str();
  synth->add_option("--dynamic", spec.n_dynamic)->capture_default_str();
  synth->add_option("--correlation-strength", spec.correlation_strength)->capture_default_str();
  synth->add_option("--seed", spec.seed)->capture_default_str();
  synth->add_option("--name", spec.name)->capture_default_str();
  synth->add_option("--out", out)->required();

  auto* validate = app.add_subcommand("validate", "check a dataset directory");
  validate->add_option("dataset", dataset)->required();
  validate->add_flag("--json-errors", json_errors, "one JSON object per issue on stderr");

  auto* select = app.add_subcommand("select-features", "rank features by pooled Pearson correlation");
  select->add_option("dataset", dataset)->required();
  select->add_option("--count", count)->capture_default_str();
  select->add_option("--out", out)->required();
  select->add_flag("--write-dataset", write_dataset, "also write the reduced dataset to <out>/dataset");

  auto* trainc = app.add_subcommand("train", "train on some or all events");
  trainc->add_option("dataset", dataset)->required();
  trainc->add_option("--out", out)->required();
  trainc->add_option("--events", events_arg, "comma separated event ids (default all)");
  trainc->add_option("--dump-graphs", graphs_dir, "write static and prior graphs as edge lists");
  trainc->add_option("--dump-learned-adjacency", learned_event, "write learned scores and binary matrix for an event");
  flags.attach(trainc);

  auto* predict = app.add_subcommand("predict", "predict outages with a trained model");
  predict->add_option("dataset", dataset)->required();
  predict->add_option("--model", model_file)->required()->check(CLI::ExistingFile);
  predict->add_option("--out", out)->required();
  predict->add_option("--events", events_arg, "comma separated event ids (default all)");
  predict->add_flag("--geojson", geojson, "also write predictions.geojson");

  auto* loo = app.add_subcommand("loo", "leave-one-out evaluation");
  loo->add_option("dataset", dataset)->required();
  loo->add_option("--out", out)->required();
  loo->add_option("--parallel", parallel)->capture_default_str()->check(CLI::PositiveNumber);
  loo->add_flag("--table", table, "print a metrics table");
  flags.attach(loo);

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of the full loss");
  gradcheck->add_option("--tolerance", tolerance)->capture_default_str();
  gradcheck->add_option("--inject-fault", fault)->group("");
  flags.attach(gradcheck);

  auto* grid = app.add_subcommand("grid", "lambda/gamma sensitivity sweep");
  grid->add_option("dataset", dataset)->required();
  grid->add_option("--out", out)->required();
  grid->add_option("--lambdas", lambdas)->capture_default_str();
  grid->add_option("--gammas", gammas)->capture_default_str();
  grid->add_option("--parallel", parallel)->capture_default_str()->check(CLI::PositiveNumber);
  grid->add_option("--holdout", holdout, "score one held-out event instead of leave-one-out");
  flags.attach(grid);

  auto* ablate = app.add_subcommand("ablate", "leave-one-out for several variants");
  ablate->add_option("dataset", dataset)->required();
  ablate->add_option("--out", out)->required();
  ablate->add_option("--variants", variants)->capture_default_str();
  ablate->add_option("--parallel", parallel)->capture_default_str()->check(CLI::PositiveNumber);
  flags.attach(ablate);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*synth) return cmd_synth(spec, out);
    if (*validate) return cmd_validate(dataset, json_errors);
    if (*select) return cmd_select(dataset, count, out, write_dataset);
    if (*trainc) return cmd_train(dataset, flags, out, events_arg, graphs_dir, learned_event);
    if (*predict) return cmd_predict(dataset, model_file, out, events_arg, geojson);
    if (*loo) return cmd_loo(dataset, flags, out, parallel, table);
    if (*gradcheck) return cmd_gradcheck(flags, fault, tolerance);
    if (*grid) return cmd_grid(dataset, flags, out, lambdas, gammas, parallel, holdout);
    if (*ablate) return cmd_ablate(dataset, flags, out, variants, parallel);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRunFailed;
  }
  return kUsage;
}
