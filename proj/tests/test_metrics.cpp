#include "doctest.h"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <algorithm>

#include "json.hpp"
#include "sahgnn/metrics.hpp"

using namespace sahgnn::metrics;

namespace {

std::vector<EventScore> load_fixture() {
  std::ifstream in(SAHGNN_FIXTURES "/metrics_five_events.csv");
  REQUIRE(in);
  std::string line;
  std::getline(in, line);
  std::vector<EventScore> out;
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::string id, p, o;
    std::getline(ss, id, ',');
    std::getline(ss, p, ',');
    std::getline(ss, o, ',');
    out.push_back({id, std::stod(p), std::stod(o)});
  }
  return out;
}

nlohmann::json expected() {
  std::ifstream in(SAHGNN_FIXTURES "/metrics_five_events.expected.json");
  REQUIRE(in);
  return nlohmann::json::parse(in);
}

}  // namespace

TEST_CASE("five-event fixture reproduces hand-computed values") {
  const auto scores = load_fixture();
  REQUIRE(scores.size() == 5);
  const auto want = expected();
  const MetricsReport r = evaluate(scores);
  CHECK(std::abs(r.ae_q25 - want["ae_q25"].get<double>()) < 1e-9);
  CHECK(std::abs(r.ae_q50 - want["ae_q50"].get<double>()) < 1e-9);
  CHECK(std::abs(r.ape_q25 - want["ape_q25"].get<double>()) < 1e-9);
  CHECK(std::abs(r.ape_q50 - want["ape_q50"].get<double>()) < 1e-9);
  CHECK(std::abs(r.mape - want["mape"].get<double>()) < 1e-9);
  CHECK(std::abs(r.crmse - want["crmse"].get<double>()) < 1e-9);
  CHECK(std::abs(r.r2_paper - want["r2_paper"].get<double>()) < 1e-9);
  CHECK(std::abs(r.r2_std - want["r2_std"].get<double>()) < 1e-9);
  CHECK(r.n_events == 5);
  CHECK(r.n_skipped_zero_observed == 1);
  CHECK(r.n_skipped_nonpositive_r2_paper == 1);

  CHECK(ae(scores[0]) == 10.0);
  CHECK(ape(scores[0]) == doctest::Approx(10.0).epsilon(1e-15));
  CHECK(ape(scores[2]) == doctest::Approx(50.0).epsilon(1e-15));
}

TEST_CASE("APE is undefined for zero observed outages") {
  CHECK_THROWS_AS(ape({"x", 3.0, 0.0}), std::domain_error);
  const std::vector<EventScore> all_zero{{"a", 1, 0}, {"b", 2, 0}};
  CHECK_THROWS_AS(mape(all_zero), std::domain_error);
  const MetricsReport r = evaluate(all_zero);
  CHECK(std::isnan(r.mape));
  CHECK(std::isnan(r.ape_q50));
  CHECK(r.n_skipped_zero_observed == 2);
  CHECK(to_json(r)["mape"].is_null());
}

TEST_CASE("quantile interpolation") {
  const std::vector<double> v{1, 2, 3, 4};
  CHECK(quantile(v, 0.25) == doctest::Approx(1.75));
  CHECK(quantile(v, 0.5) == doctest::Approx(2.5));
  CHECK(quantile(v, 0.0) == 1.0);
  CHECK(quantile(v, 1.0) == 4.0);
  const std::vector<double> unsorted{9, 1, 5};
  CHECK(quantile(unsorted, 0.5) == 5.0);
  const std::vector<double> one{7};
  CHECK(quantile(one, 0.25) == 7.0);
  CHECK_THROWS_AS(quantile(std::vector<double>{}, 0.5), std::invalid_argument);
  CHECK_THROWS_AS(quantile(v, 1.5), std::invalid_argument);
}

TEST_CASE("CRMSE ignores a constant bias") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> obs(1, 1000);
  std::vector<EventScore> s;
  for (int i = 0; i < 10; ++i) {
    const double o = obs(rng);
    s.push_back({"e", o + 7.0, o});
  }
  CHECK(crmse(s) < 1e-9);
  const std::vector<EventScore> sym{{"a", 9, 10}, {"b", 11, 10}};
  CHECK(crmse(sym) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK_THROWS_AS(crmse(std::span<const EventScore>(sym.data(), 1)), std::domain_error);
}

TEST_CASE("r2 variants on perfect and constant predictions") {
  const std::vector<EventScore> perfect{{"a", 10, 10}, {"b", 20, 20}, {"c", 40, 40}};
  CHECK(r2_std(perfect) == 1.0);
  const std::vector<EventScore> flat_p{{"a", 20, 10}, {"b", 20, 20}, {"c", 20, 40}};
  CHECK(r2_paper(flat_p) == 0.0);
  const std::vector<EventScore> flat_o{{"a", 1, 5}, {"b", 2, 5}};
  CHECK_THROWS_AS(r2_std(flat_o), std::domain_error);
  const std::vector<EventScore> negative_p{{"a", -1, 5}, {"b", 2, 5}};
  CHECK_THROWS_AS(r2_paper(negative_p), std::domain_error);
}

TEST_CASE("table has one column per report") {
  const auto scores = load_fixture();
  const std::vector<MetricsReport> reports{evaluate(scores), evaluate(scores)};
  const std::vector<std::string> labels{"full", "no_hgnn"};
  const std::string table = render_table(labels, reports);
  CHECK(table.find("full") != std::string::npos);
  CHECK(table.find("no_hgnn") != std::string::npos);
  CHECK(table.find("MAPE") != std::string::npos);
  CHECK(table.find("17.50") != std::string::npos);
}

TEST_CASE("quantile is monotone in q and affine equivariant") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-50, 50);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> v(1 + trial % 13);
    for (double& x : v) x = u(rng);
    double prev = -1e300;
    for (int i = 0; i <= 20; ++i) {
      const double q = quantile(v, i / 20.0);
      CHECK(q >= prev);
      prev = q;
      std::vector<double> w = v;
      for (double& x : w) x = 3.0 * x + 11.0;
      CHECK(quantile(w, i / 20.0) == doctest::Approx(3.0 * q + 11.0).epsilon(1e-12));
    }
  }
  const std::vector<double> five{1, 2, 3, 4, 5};
  CHECK(quantile(five, 0.25) == 2.0);
}

TEST_CASE("metrics do not depend on event order") {
  auto scores = load_fixture();
  const MetricsReport a = evaluate(scores);
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    std::shuffle(scores.begin(), scores.end(), rng);
    const MetricsReport b = evaluate(scores);
    CHECK(b.ae_q25 == doctest::Approx(a.ae_q25).epsilon(1e-12));
    CHECK(b.ape_q50 == doctest::Approx(a.ape_q50).epsilon(1e-12));
    CHECK(b.mape == doctest::Approx(a.mape).epsilon(1e-12));
    CHECK(b.crmse == doctest::Approx(a.crmse).epsilon(1e-12));
    CHECK(b.r2_paper == doctest::Approx(a.r2_paper).epsilon(1e-12));
    CHECK(b.r2_std == doctest::Approx(a.r2_std).epsilon(1e-12));
  }
}
