#include "sahgnn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>

namespace sahgnn::metrics {

double ae(const EventScore& s) { return std::abs(s.p - s.o); }

double ape(const EventScore& s) {
  if (s.o == 0.0) throw std::domain_error("APE undefined for event '" + s.event_id + "' with zero observed outages");
  return 100.0 * std::abs(s.p - s.o) / s.o;
}

double quantile(std::span<const double> values, double q) {
  if (values.empty()) throw std::invalid_argument("quantile of an empty set");
  if (!(q >= 0.0 && q <= 1.0)) throw std::invalid_argument("quantile level must lie in [0, 1]");
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  const double rank = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  const double frac = rank - static_cast<double>(lo);
  return v[lo] + frac * (v[hi] - v[lo]);
}

double mape(std::span<const EventScore> scores) {
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& s : scores)
    if (s.o > 0.0) {
      total += ape(s);
      ++n;
    }
  if (n == 0) throw std::domain_error("MAPE needs at least one event with non-zero observed outages");
  return total / static_cast<double>(n);
}

double crmse(std::span<const EventScore> scores) {
  if (scores.size() < 2) throw std::domain_error("CRMSE needs at least two events");
  const double n = static_cast<double>(scores.size());
  double mean = 0.0;
  for (const auto& s : scores) mean += s.p - s.o;
  mean /= n;
  double ss = 0.0;
  for (const auto& s : scores) {
    const double d = (s.p - s.o) - mean;
    ss += d * d;
  }
  return std::sqrt(ss / n);
}

double r2_paper(std::span<const EventScore> scores) {
  std::vector<EventScore> ok;
  for (const auto& s : scores)
    if (s.o > 0.0 && s.p > 0.0) ok.push_back(s);
  if (ok.size() < 2) throw std::domain_error("r2_paper needs at least two events with positive p and o");
  const double n = static_cast<double>(ok.size());
  double mo = 0.0, mp = 0.0;
  for (const auto& s : ok) {
    mo += s.o;
    mp += s.p;
  }
  mo /= n;
  mp /= n;
  double acc = 0.0;
  for (const auto& s : ok) acc += (s.o - mo) * (s.p - mp) / (s.o * s.p);
  return acc / n;
}

double r2_std(std::span<const EventScore> scores) {
  if (scores.size() < 2) throw std::domain_error("r2_std needs at least two events");
  double mo = 0.0;
  for (const auto& s : scores) mo += s.o;
  mo /= static_cast<double>(scores.size());
  double res = 0.0, tot = 0.0;
  for (const auto& s : scores) {
    res += (s.o - s.p) * (s.o - s.p);
    tot += (s.o - mo) * (s.o - mo);
  }
  if (tot == 0.0) throw std::domain_error("r2_std undefined for constant observations");
  return 1.0 - res / tot;
}

MetricsReport evaluate(std::span<const EventScore> scores) {
  constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
  MetricsReport r;
  r.n_events = scores.size();
  std::vector<double> aes, apes;
  for (const auto& s : scores) {
    aes.push_back(ae(s));
    if (s.o > 0.0) apes.push_back(ape(s));
    else ++r.n_skipped_zero_observed;
    if (!(s.o > 0.0 && s.p > 0.0)) ++r.n_skipped_nonpositive_r2_paper;
  }
  auto guarded = [&](auto fn) {
    try {
      return fn();
    } catch (const std::exception&) {
      return kNaN;
    }
  };
  r.ae_q25 = aes.empty() ? kNaN : quantile(aes, 0.25);
  r.ae_q50 = aes.empty() ? kNaN : quantile(aes, 0.50);
  r.ape_q25 = apes.empty() ? kNaN : quantile(apes, 0.25);
  r.ape_q50 = apes.empty() ? kNaN : quantile(apes, 0.50);
  r.mape = guarded([&] { return mape(scores); });
  r.crmse = guarded([&] { return crmse(scores); });
  r.r2_paper = guarded([&] { return r2_paper(scores); });
  r.r2_std = guarded([&] { return r2_std(scores); });
  return r;
}

nlohmann::ordered_json to_json(const MetricsReport& r) {
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::ordered_json(v) : nlohmann::ordered_json(nullptr); };
  nlohmann::ordered_json j;
  j["ae_q25"] = num(r.ae_q25);
  j["ae_q50"] = num(r.ae_q50);
  j["ape_q25"] = num(r.ape_q25);
  j["ape_q50"] = num(r.ape_q50);
  j["mape"] = num(r.mape);
  j["crmse"] = num(r.crmse);
  j["r2_paper"] = num(r.r2_paper);
  j["r2_std"] = num(r.r2_std);
  j["n_events"] = r.n_events;
  j["n_skipped_zero_observed"] = r.n_skipped_zero_observed;
  j["n_skipped_nonpositive_r2_paper"] = r.n_skipped_nonpositive_r2_paper;
  return j;
}

std::string render_table(std::span<const std::string> labels, std::span<const MetricsReport> reports) {
  if (labels.size() != reports.size()) throw std::invalid_argument("render_table: one label per report");
  struct Row {
    const char* name;
    double MetricsReport::*field;
  };
  const Row rows[] = {{"AE q25", &MetricsReport::ae_q25},   {"AE q50", &MetricsReport::ae_q50},
                      {"APE q25", &MetricsReport::ape_q25}, {"APE q50", &MetricsReport::ape_q50},
                      {"MAPE", &MetricsReport::mape},       {"CRMSE", &MetricsReport::crmse},
                      {"R2 (paper)", &MetricsReport::r2_paper}, {"R2 (std)", &MetricsReport::r2_std}};
  std::string out;
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%-12s", "metric");
  out += buf;
  for (const auto& l : labels) {
    std::snprintf(buf, sizeof(buf), " %12s", l.c_str());
    out += buf;
  }
  out += '\n';
  for (const auto& row : rows) {
    std::snprintf(buf, sizeof(buf), "%-12s", row.name);
    out += buf;
    for (const auto& r : reports) {
      const double v = r.*(row.field);
      if (std::isfinite(v)) std::snprintf(buf, sizeof(buf), " %12.2f", v);
      else std::snprintf(buf, sizeof(buf), " %12s", "n/a");
      out += buf;
    }
    out += '\n';
  }
  return out;
}

}  // namespace sahgnn::metrics
