#include <array>
#include <cmath>
#include <cstdio>
#include <span>
#include <stdexcept>
#include <string_view>

#include "sahgnn/data.hpp"
#include "sahgnn/graph.hpp"
#include "sahgnn/rng.hpp"

namespace sahgnn::data {
namespace {

// Location attributes first, then weather variables. Generated names beyond
// these lists get a numeric suffix.
constexpr std::array<std::string_view, 20> kStaticNames = {
    "land21",   "land22",    "land23",     "land24",     "land43",    "landTotal", "prec81",
    "soilDepth", "hydNo",    "avgTPA",     "avgSDI",     "avgHardBA", "stdHardBA", "avgHardSDI",
    "stdHardSDI", "HGT",     "poleCount",  "fuseCount",  "ohLength",  "reclrCount"};
constexpr std::array<std::string_view, 31> kDynamicNames = {
    "peakGUST", "maxGUST",  "ggt17",    "ggt22",     "ggt27",   "coggt17",  "coggt22",  "coggt27",
    "stdGUST",  "peakW850", "maxW850",  "stdW850",   "maxWSPD", "peakLLWS", "avgSMOIS3", "stdSMOIS4",
    "avgLFSH",  "avgCIN",   "stdCIN",   "avgDPT",    "stdDPT",  "peakPSFC", "minPSFC",  "peakPOTT",
    "stdPOTT",  "peakSPFH", "stdTDIF",  "avgCAPE",   "maxCAPE", "stdTURB",  "maxTURB"};

std::string feature_name(std::span<const std::string_view> pool, std::size_t index, const char* prefix) {
  if (index < pool.size()) return std::string(pool[index]);
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s_%03zu", prefix, index);
  return buf;
}

// Every third feature is spatially independent noise that outages ignore.
bool is_local(std::size_t f) { return f % 3 == 2; }

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

struct Bump {
  double cx, cy, width, amplitude;
};

}  // namespace

void check(const SynthSpec& s) {
  if (s.n_locations < 2) throw std::invalid_argument("synthesize: need at least 2 locations");
  if (s.n_events < 2) throw std::invalid_argument("synthesize: need at least 2 events");
  if (s.n_static == 0 && s.n_dynamic == 0) throw std::invalid_argument("synthesize: need at least one feature");
  if (s.n_dynamic < 2) throw std::invalid_argument("synthesize: need at least 2 dynamic features");
  if (!(s.correlation_strength >= 0.0 && s.correlation_strength <= 1.0))
    throw std::invalid_argument("synthesize: correlation_strength must lie in [0, 1]");
}

Territory synthesize(const SynthSpec& spec) {
  check(spec);
  const std::size_t n = spec.n_locations;
  const double c = spec.correlation_strength;
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  Territory t;
  t.name = spec.name;
  t.distance = DistanceMetric::Euclidean;

  Rng loc_rng = make_rng(spec.seed, "synth.locations");
  for (std::size_t i = 0; i < n; ++i) {
    char id[32];
    std::snprintf(id, sizeof(id), "L%04zu", i);
    const double x = unit(loc_rng);
    const double y = unit(loc_rng);
    t.locations.push_back({id, x, y});
  }

  // Static features: smooth fields of a few Gaussian bumps, or pure noise for
  // "local" columns, then an affine map to a feature-specific magnitude.
  Rng static_rng = make_rng(spec.seed, "synth.static");
  for (std::size_t f = 0; f < spec.n_static; ++f)
    t.schema.push_back({feature_name(kStaticNames, f, "static"), FeatureRole::Static});
  for (std::size_t f = 0; f < spec.n_dynamic; ++f)
    t.schema.push_back({feature_name(kDynamicNames, f, "dynamic"), FeatureRole::Dynamic});

  t.static_features = Tensor(n, spec.n_static);
  Tensor static_unit(n, spec.n_static);  // pre-affine values, used by the outage driver
  for (std::size_t f = 0; f < spec.n_static; ++f) {
    std::array<Bump, 3> bumps{};
    for (auto& b : bumps) b = {unit(static_rng), unit(static_rng), 0.15 + 0.25 * unit(static_rng), gauss(static_rng)};
    const double magnitude = std::pow(10.0, 2.0 * unit(static_rng));
    const double offset = 10.0 * gauss(static_rng);
    for (std::size_t i = 0; i < n; ++i) {
      double v;
      if (is_local(f)) {
        v = gauss(static_rng);
      } else {
        v = 0.0;
        for (const auto& b : bumps) {
          const double dx = t.locations[i].lon - b.cx, dy = t.locations[i].lat - b.cy;
          v += b.amplitude * std::exp(-(dx * dx + dy * dy) / (2.0 * b.width * b.width));
        }
        v += 0.2 * gauss(static_rng);
      }
      static_unit(i, f) = v;
      t.static_features(i, f) = offset + magnitude * v;
    }
  }

  Rng coef_rng = make_rng(spec.seed, "synth.coefficients");
  std::vector<double> gains(spec.n_dynamic), dyn_magnitude(spec.n_dynamic), dyn_offset(spec.n_dynamic);
  for (std::size_t f = 0; f < spec.n_dynamic; ++f) {
    gains[f] = (unit(coef_rng) < 0.8 ? 1.0 : -1.0) * (0.5 + unit(coef_rng));
    dyn_magnitude[f] = std::pow(10.0, 2.0 * unit(coef_rng));
    dyn_offset[f] = 10.0 * gauss(coef_rng);
  }
  std::size_t smooth_static = spec.n_static;
  for (std::size_t f = 0; f < spec.n_static && smooth_static == spec.n_static; ++f)
    if (!is_local(f)) smooth_static = f;

  Rng event_rng = make_rng(spec.seed, "synth.events");
  std::vector<Tensor> dyn_units;
  std::vector<std::vector<double>> locals, drivers;
  for (std::size_t e = 0; e < spec.n_events; ++e) {
    EventRecord ev;
    char id[32];
    std::snprintf(id, sizeof(id), "E%03zu", e);
    ev.event_id = id;

    // A storm is a Gaussian footprint dragged along a straight track.
    const double sx = -0.1 + 1.2 * unit(event_rng), sy = -0.1 + 1.2 * unit(event_rng);
    const double heading = 2.0 * 3.141592653589793 * unit(event_rng);
    const double travel = 0.2 + 0.6 * unit(event_rng);
    const double width = 0.12 + 0.2 * unit(event_rng);
    const double intensity = 0.3 + 1.7 * unit(event_rng);
    constexpr int kSteps = 5;
    std::vector<double> storm(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (int s = 0; s < kSteps; ++s) {
        const double frac = static_cast<double>(s) / (kSteps - 1);
        const double cx = sx + frac * travel * std::cos(heading), cy = sy + frac * travel * std::sin(heading);
        const double dx = t.locations[i].lon - cx, dy = t.locations[i].lat - cy;
        storm[i] += std::exp(-(dx * dx + dy * dy) / (2.0 * width * width)) / kSteps;
      }
      storm[i] *= intensity;
    }

    Tensor dyn_unit(n, spec.n_dynamic);
    ev.dynamic_features = Tensor(n, spec.n_dynamic);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t f = 0; f < spec.n_dynamic; ++f) {
        const double v = is_local(f) ? gauss(event_rng) : gains[f] * storm[i] + 0.05 * gauss(event_rng);
        dyn_unit(i, f) = v;
        ev.dynamic_features(i, f) = dyn_offset[f] + dyn_magnitude[f] * v;
      }

    // Unobserved per-location factor, and the storm driver with an
    // exposure interaction.
    std::vector<double> local(n, 0.0), driver(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      local[i] = gauss(event_rng);
      const double exposure = smooth_static < spec.n_static ? static_unit(i, smooth_static) : 0.0;
      driver[i] = 2.0 * storm[i] + 0.5 * storm[i] * exposure;
    }
    dyn_units.push_back(std::move(dyn_unit));
    locals.push_back(std::move(local));
    drivers.push_back(std::move(driver));
    t.events.push_back(std::move(ev));
  }

  // Column scaling over every event, as a model would standardise them.
  std::vector<double> mean(spec.n_dynamic, 0.0), sd(spec.n_dynamic, 0.0);
  const double rows = static_cast<double>(n * spec.n_events);
  for (const auto& u : dyn_units)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t f = 0; f < spec.n_dynamic; ++f) mean[f] += u(i, f) / rows;
  for (const auto& u : dyn_units)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t f = 0; f < spec.n_dynamic; ++f) sd[f] += (u(i, f) - mean[f]) * (u(i, f) - mean[f]) / rows;
  for (double& v : sd) v = v > 0.0 ? std::sqrt(v) : 1.0;

  Rng outage_rng = make_rng(spec.seed, "synth.outages");
  const std::size_t k = std::min<std::size_t>(8, n - 1);
  for (std::size_t e = 0; e < spec.n_events; ++e) {
    Tensor z = dyn_units[e];
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t f = 0; f < spec.n_dynamic; ++f) z(i, f) = (z(i, f) - mean[f]) / sd[f];
    // Storm driver averaged over each location's weather-similarity
    // neighbourhood for this event.
    const Tensor nbr = graph::build_dynamic_prior(z, k).adjacency;
    const auto& driver = drivers[e];
    const auto& local = locals[e];
    auto& outages = t.events[e].outages;
    outages.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      double acc = driver[i], cnt = 1.0;
      for (std::size_t j = 0; j < n; ++j)
        if (nbr(i, j) != 0.0) {
          acc += driver[j];
          cnt += 1.0;
        }
      const double eta = (1.0 - c) * local[i] + c * acc / cnt;
      const double rate = 8.0 * softplus(1.5 * eta + 0.5);
      std::poisson_distribution<long long> draw(rate);
      outages[i] = static_cast<double>(draw(outage_rng));
    }
  }
  return t;
}

}  // namespace sahgnn::data
