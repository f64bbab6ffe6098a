#include "sahgnn/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>

#include "sahgnn/init.hpp"

namespace sahgnn::model {

using nlohmann::json;
using nlohmann::ordered_json;

std::string to_string(Variant v) {
  switch (v) {
    case Variant::Full: return "full";
    case Variant::NoHgnn: return "no_hgnn";
    case Variant::NoDsk: return "no_dsk";
    case Variant::NoCl: return "no_cl";
  }
  return "full";
}

std::string to_string(AdjacencyMode m) { return m == AdjacencyMode::Binary ? "binary" : "soft"; }

Variant parse_variant(const std::string& name) {
  for (Variant v : {Variant::Full, Variant::NoHgnn, Variant::NoDsk, Variant::NoCl})
    if (to_string(v) == name) return v;
  throw std::invalid_argument("unknown variant '" + name + "' (expected full, no_hgnn, no_dsk or no_cl)");
}

AdjacencyMode parse_adjacency_mode(const std::string& name) {
  if (name == "binary") return AdjacencyMode::Binary;
  if (name == "soft") return AdjacencyMode::Soft;
  throw std::invalid_argument("unknown dynamic_adjacency '" + name + "' (expected binary or soft)");
}

void ModelConfig::check() const {
  auto bad = [](const std::string& what) { throw std::invalid_argument("model config: " + what); };
  if (f_static == 0) bad("need at least one static feature");
  if (f_dynamic == 0) bad("need at least one dynamic feature");
  if (hidden == 0 || head_hidden == 0) bad("hidden sizes must be positive");
  if (gcn_layers == 0) bad("need at least one GCN layer");
  if (d == 0) bad("d must be positive");
  if (k == 0) bad("k must be positive");
  if (static_k == 0) bad("static_k must be positive");
}

std::vector<std::string> ModelConfig::gcn_stacks() const {
  if (variant == Variant::NoHgnn) return {"shared"};
  return {"static", "dynamic"};
}

std::size_t ModelConfig::embedding_dim() const { return hidden * gcn_stacks().size(); }

ordered_json to_json(const ModelConfig& c) {
  ordered_json j;
  j["f_static"] = c.f_static;
  j["f_dynamic"] = c.f_dynamic;
  j["hidden"] = c.hidden;
  j["head_hidden"] = c.head_hidden;
  j["gcn_layers"] = c.gcn_layers;
  j["residual"] = c.residual;
  j["d"] = c.d;
  j["k"] = c.k;
  j["static_k"] = c.static_k;
  j["dynamic_adjacency"] = to_string(c.adjacency);
  j["variant"] = to_string(c.variant);
  j["log1p_target"] = c.log1p_target;
  return j;
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  c.f_static = j.at("f_static").get<std::size_t>();
  c.f_dynamic = j.at("f_dynamic").get<std::size_t>();
  c.hidden = j.at("hidden").get<std::size_t>();
  c.head_hidden = j.at("head_hidden").get<std::size_t>();
  c.gcn_layers = j.at("gcn_layers").get<std::size_t>();
  c.residual = j.at("residual").get<bool>();
  c.d = j.at("d").get<std::size_t>();
  c.k = j.at("k").get<std::size_t>();
  c.static_k = j.at("static_k").get<std::size_t>();
  c.adjacency = parse_adjacency_mode(j.at("dynamic_adjacency").get<std::string>());
  c.variant = parse_variant(j.at("variant").get<std::string>());
  c.log1p_target = j.at("log1p_target").get<bool>();
  return c;
}

std::size_t ParamSet::index(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return i;
  throw std::out_of_range("no parameter named '" + name + "'");
}

bool ParamSet::contains(const std::string& name) const {
  return std::find(names.begin(), names.end(), name) != names.end();
}

std::size_t ParamSet::entry_count() const {
  std::size_t n = 0;
  for (const auto& v : values) n += v.size();
  return n;
}

namespace {

std::string layer_name(const std::string& stack, std::size_t l) { return stack + ".gcn" + std::to_string(l + 1); }

std::size_t stack_input_dim(const ModelConfig& c, const std::string& stack) {
  if (stack == "static") return c.f_static;
  if (stack == "dynamic") return c.f_dynamic;
  return c.f_static + c.f_dynamic;
}

}  // namespace

ParamSet init_params(const ModelConfig& c, Rng& rng) {
  c.check();
  ParamSet p;
  auto add = [&](std::string name, Tensor t) {
    p.names.push_back(std::move(name));
    p.values.push_back(std::move(t));
  };
  add("adj.w1", glorot_uniform(c.f_dynamic, c.d, rng));
  add("adj.w2", glorot_uniform(c.f_dynamic, c.d, rng));
  for (const auto& stack : c.gcn_stacks())
    for (std::size_t l = 0; l < c.gcn_layers; ++l)
      add(layer_name(stack, l), glorot_uniform(l == 0 ? stack_input_dim(c, stack) : c.hidden, c.hidden, rng));
  add("head.w1", glorot_uniform(c.embedding_dim(), c.head_hidden, rng));
  add("head.b1", Tensor(1, c.head_hidden));
  add("head.w2", glorot_uniform(c.head_hidden, 1, rng));
  add("head.b2", Tensor(1, 1));
  return p;
}

BoundParams bind(ad::Tape& tape, const ParamSet& params, bool trainable) {
  BoundParams b;
  b.set = &params;
  for (const auto& v : params.values) b.vars.push_back(trainable ? tape.parameter(v) : tape.constant(v));
  return b;
}

ad::Var gcn_layer(ad::Var a_norm, ad::Var h, ad::Var weight, bool residual) {
  if (a_norm.value().rows() != h.value().rows() || a_norm.value().cols() != h.value().rows())
    throw ShapeError("gcn_layer: adjacency " + a_norm.value().shape_string() + " vs features " +
                     h.value().shape_string());
  if (residual && weight.value().rows() != weight.value().cols())
    throw ShapeError("gcn_layer: residual needs equal in/out dims, weight is " + weight.value().shape_string());
  ad::Var out = ad::relu(ad::matmul(a_norm, ad::matmul(h, weight)));
  return residual ? ad::add(out, h) : out;
}

namespace {

ad::Var run_stack(const BoundParams& p, const ModelConfig& c, const std::string& stack, ad::Var a_norm, ad::Var h) {
  ad::Tape::Scope scope(h.tape(), stack + " channel");
  for (std::size_t l = 0; l < c.gcn_layers; ++l) {
    ad::Tape::Scope layer_scope(h.tape(), layer_name(stack, l));
    h = gcn_layer(a_norm, h, p[layer_name(stack, l)], c.residual && l > 0);
  }
  return h;
}

}  // namespace

ForwardOutput forward(const BoundParams& p, const ModelConfig& c, const EventInputs& in) {
  const std::size_t n = in.static_features.rows();
  if (in.static_features.cols() != c.f_static || in.dynamic_features.cols() != c.f_dynamic ||
      in.dynamic_features.rows() != n || in.static_norm.rows() != n || in.static_norm.cols() != n)
    throw ShapeError("forward: inputs static " + in.static_features.shape_string() + ", dynamic " +
                     in.dynamic_features.shape_string() + ", adjacency " + in.static_norm.shape_string() +
                     " do not match the model (F_s=" + std::to_string(c.f_static) +
                     ", F_d=" + std::to_string(c.f_dynamic) + ")");
  if (c.k >= n) throw std::invalid_argument("forward: k=" + std::to_string(c.k) + " must be below N=" + std::to_string(n));
  ad::Tape& tape = p.vars.front().tape();
  const ad::Var xs = tape.constant(in.static_features);
  const ad::Var xd = tape.constant(in.dynamic_features);
  const ad::Var a_static = tape.constant(in.static_norm);

  ForwardOutput out;
  out.scores = adj::adjacency_scores(xd, p["adj.w1"], p["adj.w2"]);
  out.binary = adj::binarize(out.scores.value(), c.k);

  if (c.variant == Variant::NoHgnn) {
    out.embeddings = run_stack(p, c, "shared", a_static, ad::concat_cols(xs, xd));
  } else {
    ad::Var a_dynamic;
    if (c.adjacency == AdjacencyMode::Binary) {
      graph::Graph g;
      g.n = n;
      g.adjacency = graph::symmetrize_union(out.binary);
      g.kind = graph::GraphKind::Learned;
      a_dynamic = tape.constant(graph::normalize_for_gcn(g).adjacency);
    } else {
      ad::Tape::Scope scope(tape, "soft adjacency");
      a_dynamic = adj::normalize_for_gcn(ad::scale(ad::add(out.scores, ad::transpose(out.scores)), 0.5));
    }
    const ad::Var hs = run_stack(p, c, "static", a_static, xs);
    const ad::Var hd = run_stack(p, c, "dynamic", a_dynamic, xd);
    out.embeddings = ad::concat_cols(hs, hd);
  }

  ad::Tape::Scope scope(tape, "head");
  const ad::Var hidden = ad::relu(ad::add_bias(ad::matmul(out.embeddings, p["head.w1"]), p["head.b1"]));
  out.predictions = ad::add_bias(ad::matmul(hidden, p["head.w2"]), p["head.b2"]);
  return out;
}

AdamMoments zero_moments(const ParamSet& params) {
  AdamMoments a;
  for (const auto& v : params.values) {
    a.m.emplace_back(v.rows(), v.cols());
    a.v.emplace_back(v.rows(), v.cols());
  }
  return a;
}

// --- checkpoints ---------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'S', 'A', 'H', 'G', 'N', 'N', 'C', 'K'};
constexpr int kCheckpointVersion = 1;

void put_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_u64(std::istream& in) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) throw std::runtime_error("checkpoint truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

void put_block(std::ostream& out, const Tensor& t) {
  for (double x : t.values()) put_u64(out, std::bit_cast<std::uint64_t>(x));
}

void get_block(std::istream& in, Tensor& t) {
  for (double& x : t.values()) x = std::bit_cast<double>(get_u64(in));
}

ordered_json scalers_json(const std::vector<data::FeatureScaler>& s) {
  ordered_json a = ordered_json::array();
  for (const auto& f : s)
    a.push_back({{"name", f.name}, {"mean", f.mean}, {"std", f.std}, {"degenerate", f.degenerate}});
  return a;
}

std::vector<data::FeatureScaler> scalers_from_json(const json& a) {
  std::vector<data::FeatureScaler> out;
  for (const auto& f : a)
    out.push_back({f.at("name").get<std::string>(), f.at("mean").get<double>(), f.at("std").get<double>(),
                   f.at("degenerate").get<bool>()});
  return out;
}

}  // namespace

void save_checkpoint(const ModelState& s, const std::filesystem::path& file) {
  ordered_json h;
  h["format"] = "sahgnn-checkpoint";
  h["version"] = kCheckpointVersion;
  h["config"] = to_json(s.config);
  h["step"] = s.adam.step;
  h["parameters"] = ordered_json::array();
  for (std::size_t i = 0; i < s.params.size(); ++i)
    h["parameters"].push_back(
        {{"name", s.params.names[i]}, {"rows", s.params.values[i].rows()}, {"cols", s.params.values[i].cols()}});
  h["static_scalers"] = scalers_json(s.scalers.static_scalers);
  h["dynamic_scalers"] = scalers_json(s.scalers.dynamic_scalers);
  const std::string header = h.dump();

  std::ofstream out(file, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + file.string());
  out.write(kMagic, 8);
  put_u64(out, header.size());
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  const bool has_moments = s.adam.m.size() == s.params.size() && s.adam.v.size() == s.params.size();
  const AdamMoments zeros = has_moments ? AdamMoments{} : zero_moments(s.params);
  const AdamMoments& mom = has_moments ? s.adam : zeros;
  for (const auto& t : s.params.values) put_block(out, t);
  for (const auto& t : mom.m) put_block(out, t);
  for (const auto& t : mom.v) put_block(out, t);
  if (!out) throw std::runtime_error("failed writing checkpoint " + file.string());
}

ModelState load_checkpoint(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + file.string());
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error(file.string() + " is not a checkpoint");
  const std::uint64_t len = get_u64(in);
  if (len > (1u << 30)) throw std::runtime_error("checkpoint header too large");
  std::string header(len, '\0');
  if (!in.read(header.data(), static_cast<std::streamsize>(len))) throw std::runtime_error("checkpoint truncated");

  ModelState s;
  try {
    const json h = json::parse(header);
    if (h.at("format") != "sahgnn-checkpoint") throw std::runtime_error("bad checkpoint format tag");
    if (h.at("version").get<int>() != kCheckpointVersion)
      throw std::runtime_error("unsupported checkpoint version " + h.at("version").dump());
    s.config = model_config_from_json(h.at("config"));
    s.adam.step = h.at("step").get<std::uint64_t>();
    for (const auto& p : h.at("parameters")) {
      s.params.names.push_back(p.at("name").get<std::string>());
      s.params.values.emplace_back(p.at("rows").get<std::size_t>(), p.at("cols").get<std::size_t>());
    }
    s.scalers.static_scalers = scalers_from_json(h.at("static_scalers"));
    s.scalers.dynamic_scalers = scalers_from_json(h.at("dynamic_scalers"));
  } catch (const json::exception& e) {
    throw std::runtime_error("bad checkpoint header: " + std::string(e.what()));
  }
  s.adam.m.clear();
  s.adam.v.clear();
  for (auto& t : s.params.values) get_block(in, t);
  for (const auto& t : s.params.values) {
    s.adam.m.emplace_back(t.rows(), t.cols());
    get_block(in, s.adam.m.back());
  }
  for (const auto& t : s.params.values) {
    s.adam.v.emplace_back(t.rows(), t.cols());
    get_block(in, s.adam.v.back());
  }
  return s;
}

// --- inference -------------------------------------------------------------------------

namespace {

Tensor select_and_scale(const std::vector<data::FeatureScaler>& scalers, const std::vector<std::string>& names,
                        const Tensor& raw, const std::string& what) {
  std::map<std::string, std::size_t> col;
  for (std::size_t j = 0; j < names.size(); ++j) col[names[j]] = j;
  Tensor out(raw.rows(), scalers.size());
  for (std::size_t f = 0; f < scalers.size(); ++f) {
    auto it = col.find(scalers[f].name);
    if (it == col.end()) throw std::invalid_argument(what + " feature '" + scalers[f].name + "' missing from territory");
    for (std::size_t i = 0; i < raw.rows(); ++i) out(i, f) = scalers[f].apply(raw(i, it->second));
  }
  return out;
}

}  // namespace

Tensor prepare_static(const ModelState& s, const data::Territory& t) {
  return select_and_scale(s.scalers.static_scalers, t.feature_names(data::FeatureRole::Static), t.static_features,
                          "static");
}

Tensor prepare_dynamic(const ModelState& s, const data::Territory& t, const data::EventRecord& e) {
  return select_and_scale(s.scalers.dynamic_scalers, t.feature_names(data::FeatureRole::Dynamic), e.dynamic_features,
                          "dynamic");
}

Tensor static_norm(const ModelConfig& c, const data::Territory& t) {
  return graph::normalize_for_gcn(graph::build_static_adjacency(t.locations, c.static_k, t.distance)).adjacency;
}

std::vector<double> predict(const ModelState& s, const data::Territory& t, const data::EventRecord& e) {
  const Tensor xs = prepare_static(s, t);
  const Tensor xd = prepare_dynamic(s, t, e);
  const Tensor a = static_norm(s.config, t);
  ad::Tape tape;
  const BoundParams p = bind(tape, s.params, false);
  const ForwardOutput out = forward(p, s.config, {xs, xd, a});
  std::vector<double> y(out.predictions.value().values().begin(), out.predictions.value().values().end());
  if (s.config.log1p_target)
    for (double& v : y) v = std::expm1(v);
  return y;
}

adj::LearnedGraph learned_graph(const ModelState& s, const data::Territory& t, const data::EventRecord& e) {
  adj::AdjacencyLearner l{s.params.at("adj.w1"), s.params.at("adj.w2"), s.config.d, s.config.k};
  return adj::learn_adjacency(l, prepare_dynamic(s, t, e));
}

}  // namespace sahgnn::model
