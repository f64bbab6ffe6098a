#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include <unistd.h>

#include "sahgnn/data.hpp"
#include "sahgnn/graph.hpp"

using namespace sahgnn;
using namespace sahgnn::data;

namespace {

// Textbook two-pass formula, kept separate from the library version.
double pearson_oracle(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double num = 0, dx = 0, dy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    num += (x[i] - mx) * (y[i] - my);
    dx += (x[i] - mx) * (x[i] - mx);
    dy += (y[i] - my) * (y[i] - my);
  }
  return num / (std::sqrt(dx) * std::sqrt(dy));
}

std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("sahgnn_test_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(p);
  return p;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

bool bitwise_equal(const Territory& a, const Territory& b) {
  if (a.name != b.name || a.distance != b.distance || a.schema != b.schema) return false;
  if (a.locations.size() != b.locations.size()) return false;
  for (std::size_t i = 0; i < a.locations.size(); ++i) {
    const auto &la = a.locations[i], &lb = b.locations[i];
    if (la.id != lb.id || std::memcmp(&la.lon, &lb.lon, sizeof(double)) || std::memcmp(&la.lat, &lb.lat, sizeof(double)))
      return false;
  }
  if (!bitwise_equal(a.static_features, b.static_features) || a.events.size() != b.events.size()) return false;
  for (std::size_t e = 0; e < a.events.size(); ++e) {
    const auto &ea = a.events[e], &eb = b.events[e];
    if (ea.event_id != eb.event_id || !bitwise_equal(ea.dynamic_features, eb.dynamic_features)) return false;
    if (ea.outages.size() != eb.outages.size() ||
        std::memcmp(ea.outages.data(), eb.outages.data(), ea.outages.size() * sizeof(double)))
      return false;
  }
  return true;
}

// Global Moran's I with a binary weight matrix.
double morans_i(const std::vector<double>& x, const Tensor& w) {
  const std::size_t n = x.size();
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
  double num = 0, den = 0, wsum = 0;
  for (std::size_t i = 0; i < n; ++i) {
    den += (x[i] - mean) * (x[i] - mean);
    for (std::size_t j = 0; j < n; ++j) {
      num += w(i, j) * (x[i] - mean) * (x[j] - mean);
      wsum += w(i, j);
    }
  }
  return static_cast<double>(n) / wsum * num / den;
}

// Small hand-built territory: 4 locations, 2 static + 2 dynamic features, 3 events.
Territory tiny_territory() {
  Territory t;
  t.name = "tiny";
  t.distance = DistanceMetric::Euclidean;
  t.locations = {{"a", 0, 0}, {"b", 1, 0}, {"c", 0, 1}, {"d", 1, 1}};
  t.schema = {{"s1", FeatureRole::Static}, {"d1", FeatureRole::Dynamic}, {"s2", FeatureRole::Static},
              {"d2", FeatureRole::Dynamic}};
  t.static_features = Tensor::from_rows({{1, 5}, {2, 5}, {3, 5}, {4, 5}});
  for (int e = 0; e < 3; ++e) {
    EventRecord ev;
    ev.event_id = "ev" + std::to_string(e);
    ev.dynamic_features = Tensor::from_rows({{1.0 + e, 0.1}, {2.0 + e, 0.7}, {3.0 + e, -0.2}, {4.0 + e, 0.3}});
    ev.outages = {1.0 + e, 2.0 + e, 3.0 + e, 4.0 + e};
    t.events.push_back(ev);
  }
  return t;
}

}  // namespace

TEST_SUITE("pearson") {
  TEST_CASE("perfect linear and anti-linear") {
    const std::vector<double> x{1, 2, 3};
    CHECK(pearson(x, std::vector<double>{2, 4, 6}).r == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(pearson(x, std::vector<double>{3, 2, 1}).r == doctest::Approx(-1.0).epsilon(1e-15));
  }

  TEST_CASE("matches an independent evaluation") {
    const std::vector<double> x{1, 2, 3, 4}, y{1, 3, 2, 4};
    CHECK(pearson(x, y).r == doctest::Approx(pearson_oracle(x, y)).epsilon(1e-14));
    CHECK(pearson(x, y).r == doctest::Approx(0.8).epsilon(1e-14));
  }

  TEST_CASE("zero variance is flagged") {
    const auto c = pearson(std::vector<double>{2, 2, 2}, std::vector<double>{1, 2, 3});
    CHECK(c.degenerate);
    CHECK(c.r == 0.0);
  }

  TEST_CASE("bad lengths throw") {
    CHECK_THROWS_AS(pearson(std::vector<double>{1, 2}, std::vector<double>{1}), std::invalid_argument);
    CHECK_THROWS_AS(pearson(std::vector<double>{1}, std::vector<double>{1}), std::invalid_argument);
  }

  TEST_CASE("symmetric and affine equivariant") {
    std::mt19937_64 rng(11);
    std::normal_distribution<double> g;
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<double> x(20), y(20);
      for (std::size_t i = 0; i < x.size(); ++i) {
        x[i] = g(rng);
        y[i] = 0.3 * x[i] + g(rng);
      }
      const double r = pearson(x, y).r;
      CHECK(std::abs(pearson(y, x).r - r) <= 1e-12);
      for (double a : {3.5, -0.2}) {
        std::vector<double> ax(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) ax[i] = a * x[i] - 17.0;
        CHECK(std::abs(pearson(ax, y).r - (a > 0 ? r : -r)) <= 1e-10);
      }
    }
  }
}

TEST_SUITE("select_features") {
  TEST_CASE("a copy of the outages ranks first with r = 1") {
    Territory t = tiny_territory();
    const auto sel = select_features(t, 2);
    REQUIRE(sel.selected_names.size() == 2);
    // d1 = outages exactly; s1 = outages minus the event offset.
    CHECK(sel.selected_names[0] == "d1");
    CHECK(sel.correlations[0] == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(sel.static_count + sel.dynamic_count == sel.selected_names.size());
  }

  TEST_CASE("zero-variance features never qualify") {
    const auto sel = select_features(tiny_territory(), 4);
    CHECK(std::find(sel.selected_names.begin(), sel.selected_names.end(), "s2") == sel.selected_names.end());
    CHECK(sel.selected_names.size() == 3);
  }

  TEST_CASE("count bounds") {
    CHECK_THROWS_AS(select_features(tiny_territory(), 5), std::invalid_argument);
    CHECK_THROWS_AS(select_features(tiny_territory(), 0), std::invalid_argument);
  }

  TEST_CASE("noisier copies of the outages rank lower") {
    SynthSpec spec;
    spec.n_locations = 40;
    spec.n_events = 6;
    spec.n_static = 3;
    spec.n_dynamic = 3;
    Territory t = synthesize(spec);
    std::mt19937_64 rng(5);
    std::normal_distribution<double> g;
    double mean = 0, var = 0, count = 0;
    for (const auto& e : t.events)
      for (double o : e.outages) {
        mean += o;
        count += 1;
      }
    mean /= count;
    for (const auto& e : t.events)
      for (double o : e.outages) var += (o - mean) * (o - mean);
    const double sd = std::sqrt(var / count);
    const std::vector<double> sigmas{0.05 * sd, 0.3 * sd, 1.0 * sd, 3.0 * sd};
    const std::size_t base = t.count(FeatureRole::Dynamic);
    for (std::size_t k = 0; k < sigmas.size(); ++k) t.schema.push_back({"noisy" + std::to_string(k), FeatureRole::Dynamic});
    for (auto& e : t.events) {
      Tensor wider(t.n_locations(), base + sigmas.size());
      for (std::size_t i = 0; i < t.n_locations(); ++i) {
        for (std::size_t f = 0; f < base; ++f) wider(i, f) = e.dynamic_features(i, f);
        for (std::size_t k = 0; k < sigmas.size(); ++k) wider(i, base + k) = e.outages[i] + sigmas[k] * g(rng);
      }
      e.dynamic_features = wider;
    }
    const auto sel = select_features(t, t.schema.size());
    std::vector<std::string> noisy;
    for (const auto& name : sel.selected_names)
      if (name.rfind("noisy", 0) == 0) noisy.push_back(name);
    CHECK(noisy == std::vector<std::string>{"noisy0", "noisy1", "noisy2", "noisy3"});
    CHECK(sel.selected_names[0] == "noisy0");
    for (std::size_t k = 1; k < sel.correlations.size(); ++k)
      CHECK(std::abs(sel.correlations[k - 1]) >= std::abs(sel.correlations[k]));
  }

  TEST_CASE("selection does not depend on column order") {
    SynthSpec spec;
    spec.n_locations = 25;
    spec.n_events = 5;
    const Territory t = synthesize(spec);
    // Reverse the schema (and the matching matrix columns) of both roles.
    Territory r = t;
    std::reverse(r.schema.begin(), r.schema.end());
    const std::size_t fs = t.count(FeatureRole::Static), fd = t.count(FeatureRole::Dynamic);
    for (std::size_t i = 0; i < t.n_locations(); ++i)
      for (std::size_t f = 0; f < fs; ++f) r.static_features(i, f) = t.static_features(i, fs - 1 - f);
    for (std::size_t e = 0; e < t.events.size(); ++e)
      for (std::size_t i = 0; i < t.n_locations(); ++i)
        for (std::size_t f = 0; f < fd; ++f) r.events[e].dynamic_features(i, f) = t.events[e].dynamic_features(i, fd - 1 - f);
    const auto a = select_features(t, 6), b = select_features(r, 6);
    CHECK(a.selected_names == b.selected_names);
  }

  TEST_CASE("ties break on feature name") {
    Territory t = tiny_territory();
    t.schema[1].name = "zeta";  // d1
    t.schema.push_back({"alpha", FeatureRole::Dynamic});
    for (auto& e : t.events) {
      Tensor w(4, 3);
      for (std::size_t i = 0; i < 4; ++i) {
        w(i, 0) = e.dynamic_features(i, 0);
        w(i, 1) = e.dynamic_features(i, 1);
        w(i, 2) = e.dynamic_features(i, 0);
      }
      e.dynamic_features = w;
    }
    const auto sel = select_features(t, 2);
    CHECK(sel.selected_names == std::vector<std::string>{"alpha", "zeta"});
  }

  TEST_CASE("390 features down to 50, split by role") {
    SynthSpec spec;
    spec.n_locations = 40;
    spec.n_events = 6;
    spec.n_static = 310;
    spec.n_dynamic = 80;
    const Territory t = synthesize(spec);
    REQUIRE(t.schema.size() == 390);
    const auto sel = select_features(t, 50);
    CHECK(sel.selected_names.size() == 50);
    CHECK(sel.static_count + sel.dynamic_count == 50);
    const Territory reduced = apply_selection(t, sel);
    CHECK(reduced.count(FeatureRole::Static) == sel.static_count);
    CHECK(reduced.count(FeatureRole::Dynamic) == sel.dynamic_count);
    CHECK(reduced.static_features.cols() == sel.static_count);
    CHECK(reduced.events[0].dynamic_features.cols() == sel.dynamic_count);
    std::set<std::string> unique(sel.selected_names.begin(), sel.selected_names.end());
    CHECK(unique.size() == 50);
  }
}

TEST_SUITE("standardize") {
  TEST_CASE("constant feature maps to zeros with std 1") {
    const Territory t = tiny_territory();
    const std::vector<std::size_t> train{0, 1, 2};
    const auto sc = fit_scalers(t, train);
    REQUIRE(sc.static_scalers.size() == 2);
    CHECK(sc.static_scalers[1].degenerate);
    CHECK(sc.static_scalers[1].std == 1.0);
    const Territory z = apply_scalers(t, sc);
    for (std::size_t i = 0; i < 4; ++i) CHECK(z.static_features(i, 1) == 0.0);
  }

  TEST_CASE("training columns have zero mean and unit population variance") {
    SynthSpec spec;
    spec.n_locations = 20;
    spec.n_events = 6;
    const Territory t = synthesize(spec);
    const std::vector<std::size_t> train{0, 1, 2, 3, 4};
    const auto sel = select_features(t, 10);
    const auto st = standardize(t, sel, train);
    const auto& z = st.territory;
    for (std::size_t f = 0; f < z.static_features.cols(); ++f) {
      double m = 0, v = 0;
      for (std::size_t i = 0; i < 20; ++i) m += z.static_features(i, f);
      m /= 20;
      for (std::size_t i = 0; i < 20; ++i) v += (z.static_features(i, f) - m) * (z.static_features(i, f) - m);
      CHECK(std::abs(m) < 1e-10);
      CHECK(v / 20 == doctest::Approx(1.0).epsilon(1e-10));
    }
    for (std::size_t f = 0; f < z.events[0].dynamic_features.cols(); ++f) {
      double m = 0;
      for (std::size_t e : train)
        for (std::size_t i = 0; i < 20; ++i) m += z.events[e].dynamic_features(i, f);
      CHECK(std::abs(m / 100.0) < 1e-10);
    }
  }

  TEST_CASE("held-out events reuse the training scalers") {
    Territory t = tiny_territory();
    // Shift the held-out event far away; training stats must not move.
    for (std::size_t i = 0; i < 4; ++i) t.events[2].dynamic_features(i, 0) += 1000.0;
    const std::vector<std::size_t> train{0, 1};
    const auto sc = fit_scalers(t, train);
    // d1 over events 0,1: values 1..4 and 2..5.
    std::vector<double> pool{1, 2, 3, 4, 2, 3, 4, 5};
    const double mean = 3.0;
    double var = 0;
    for (double v : pool) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / 8.0);
    CHECK(sc.dynamic_scalers[0].mean == doctest::Approx(mean));
    CHECK(sc.dynamic_scalers[0].std == doctest::Approx(sd));
    const Territory z = apply_scalers(t, sc);
    CHECK(z.events[2].dynamic_features(0, 0) == doctest::Approx((1003.0 - mean) / sd));
  }
}

TEST_SUITE("territory io") {
  TEST_CASE("save then load is bitwise identical") {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
      SynthSpec spec;
      spec.seed = seed;
      spec.n_locations = 15;
      spec.n_events = 4;
      const Territory t = synthesize(spec);
      const auto dir = scratch_dir("roundtrip");
      save_territory(t, dir);
      const Territory back = load_territory(dir);
      CHECK(bitwise_equal(t, back));
      std::filesystem::remove_all(dir);
    }
  }

  TEST_CASE("hand-built territory with awkward doubles round-trips") {
    Territory t = tiny_territory();
    t.static_features(0, 0) = 0.1 + 0.2;
    t.static_features(1, 0) = 5e-324;
    t.static_features(2, 0) = -1.7976931348623157e308;
    t.locations[0].lon = -72.123456789012345;
    const auto dir = scratch_dir("awkward");
    save_territory(t, dir);
    CHECK(bitwise_equal(t, load_territory(dir)));
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("an event with N-1 rows names the event") {
    const Territory t = tiny_territory();
    const auto dir = scratch_dir("short");
    save_territory(t, dir);
    {
      std::ofstream out(dir / "events" / "ev1.csv");
      out << "d1,d2,outages\n1,2,3\n4,5,6\n7,8,9\n";
    }
    try {
      load_territory(dir);
      FAIL("expected a validation error");
    } catch (const ValidationError& e) {
      REQUIRE(!e.issues().empty());
      CHECK(e.issues()[0].event.value_or("") == "ev1");
      CHECK(std::string(e.what()).find("ev1") != std::string::npos);
    }
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("non-numeric cell reports line and feature") {
    const auto dir = scratch_dir("badcell");
    save_territory(tiny_territory(), dir);
    {
      std::ofstream out(dir / "events" / "ev0.csv");
      out << "d1,d2,outages\n1,2,3\n4,x,6\n7,8,9\n1,1,1\n";
    }
    try {
      load_territory(dir);
      FAIL("expected a validation error");
    } catch (const ValidationError& e) {
      const auto& is = e.issues().at(0);
      CHECK(is.code == "bad_number");
      CHECK(is.line.value_or(0) == 3);
      CHECK(is.feature.value_or("") == "d2");
      CHECK(is.location.value_or(99) == 1);
      CHECK(is.event.value_or("") == "ev0");
    }
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("in-memory validation catches shape and value problems") {
    Territory t = tiny_territory();
    CHECK(find_issues(t).empty());
    t.events[1].outages[2] = -1.0;
    t.events[2].dynamic_features = Tensor(3, 2);
    t.locations[3].id = "a";
    const auto issues = find_issues(t);
    std::set<std::string> codes;
    for (const auto& is : issues) codes.insert(is.code);
    CHECK(codes.count("bad_outage"));
    CHECK(codes.count("event_shape"));
    CHECK(codes.count("duplicate_location_id"));
    CHECK_THROWS_AS(validate(t), ValidationError);
    CHECK_THROWS_AS(save_territory(t, scratch_dir("invalid")), ValidationError);
  }

  TEST_CASE("issues serialise as one-line JSON") {
    ValidationIssue is;
    is.code = "event_shape";
    is.message = "bad";
    is.event = "E001";
    is.line = 4;
    const auto s = is.to_json();
    CHECK(s.find('\n') == std::string::npos);
    CHECK(s.find("\"event\":\"E001\"") != std::string::npos);
    CHECK(s.find("\"line\":4") != std::string::npos);
  }

  TEST_CASE("connecticut-sized territory validates") {
    SynthSpec spec;
    spec.n_locations = 815;
    spec.n_events = 294;
    spec.n_static = 370;
    spec.n_dynamic = 20;
    spec.name = "connecticut-shaped";
    const Territory t = synthesize(spec);
    CHECK(t.n_locations() == 815);
    CHECK(t.events.size() == 294);
    CHECK(t.schema.size() == 390);
    CHECK(find_issues(t).empty());
  }
}

TEST_SUITE("synthesize") {
  TEST_CASE("same spec gives bitwise-identical territories") {
    SynthSpec spec;
    CHECK(bitwise_equal(synthesize(spec), synthesize(spec)));
    SynthSpec other = spec;
    other.seed = spec.seed + 1;
    CHECK_FALSE(bitwise_equal(synthesize(spec), synthesize(other)));
  }

  TEST_CASE("outages are non-negative integers") {
    for (double c : {0.0, 0.5, 1.0}) {
      SynthSpec spec;
      spec.correlation_strength = c;
      for (const auto& e : synthesize(spec).events)
        for (double o : e.outages) {
          CHECK(o >= 0.0);
          CHECK(o == std::floor(o));
        }
    }
  }

  TEST_CASE("feature names come from the weather and attribute schema") {
    const Territory t = synthesize(SynthSpec{});
    CHECK(t.schema[0].name == "land21");
    CHECK(t.feature_names(FeatureRole::Dynamic)[0] == "peakGUST");
    CHECK(t.distance == DistanceMetric::Euclidean);
  }

  TEST_CASE("no spatial signal gives Moran's I near zero") {
    // Averaged over events on the geographic 8-NN graph; E[I] = -1/(N-1).
    double i0 = 0, i1 = 0;
    SynthSpec spec;
    spec.n_locations = 120;
    spec.n_events = 20;
    for (double c : {0.0, 1.0}) {
      spec.correlation_strength = c;
      const Territory t = synthesize(spec);
      const Tensor w = graph::build_static_adjacency(t.locations, 8, t.distance).adjacency;
      double acc = 0;
      for (const auto& e : t.events) acc += morans_i(e.outages, w);
      (c == 0.0 ? i0 : i1) = acc / static_cast<double>(t.events.size());
    }
    CHECK(std::abs(i0) < 0.05);
    CHECK(i1 > 0.15);
  }

  TEST_CASE("invalid specs are rejected") {
    SynthSpec spec;
    spec.correlation_strength = 1.5;
    CHECK_THROWS_AS(synthesize(spec), std::invalid_argument);
    spec = {};
    spec.n_locations = 1;
    CHECK_THROWS_AS(synthesize(spec), std::invalid_argument);
  }
}
