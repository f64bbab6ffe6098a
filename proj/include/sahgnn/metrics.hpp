#pragma once

// Event-level evaluation metrics over total predicted (p) and observed (o)
// outages per event.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace sahgnn::metrics {

struct EventScore {
  std::string event_id;
  double p = 0.0;  // predicted total
  double o = 0.0;  // observed total
};

double ae(const EventScore& s);
/// Percentage. Throws std::domain_error when o = 0.
double ape(const EventScore& s);

/// Linear interpolation between order statistics at zero-based rank
/// q (n - 1). Throws std::invalid_argument on empty input or q outside [0, 1].
double quantile(std::span<const double> values, double q);

/// Mean APE over events with o > 0. Throws std::domain_error if there are none.
double mape(std::span<const EventScore> scores);
/// sqrt(mean((e - mean(e))^2)) with e = p - o. Needs n >= 2.
double crmse(std::span<const EventScore> scores);
/// (1/n) sum (o - mean o)(p - mean p) / (o p) over events with o > 0 and
/// p > 0; means are taken over the same events.
double r2_paper(std::span<const EventScore> scores);
/// 1 - SS_res / SS_tot. Throws std::domain_error for constant observations.
double r2_std(std::span<const EventScore> scores);

struct MetricsReport {
  double ae_q25 = 0.0;
  double ae_q50 = 0.0;
  double ape_q25 = 0.0;
  double ape_q50 = 0.0;
  double mape = 0.0;
  double crmse = 0.0;
  double r2_paper = 0.0;
  double r2_std = 0.0;
  std::size_t n_events = 0;
  std::size_t n_skipped_zero_observed = 0;
  std::size_t n_skipped_nonpositive_r2_paper = 0;
};

/// Full suite; metrics that are undefined for the input are reported as NaN.
MetricsReport evaluate(std::span<const EventScore> scores);

/// NaN fields become null.
nlohmann::ordered_json to_json(const MetricsReport& r);

/// Table-2-shaped text table, one column per labelled report.
std::string render_table(std::span<const std::string> labels, std::span<const MetricsReport> reports);

}  // namespace sahgnn::metrics
