#include "sahgnn/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"
#include "text_io.hpp"

namespace sahgnn::data {

using nlohmann::json;
using nlohmann::ordered_json;

std::string to_string(FeatureRole role) { return role == FeatureRole::Static ? "static" : "dynamic"; }

std::string to_string(DistanceMetric metric) {
  return metric == DistanceMetric::Haversine ? "haversine" : "euclidean";
}

std::vector<std::string> Territory::feature_names(FeatureRole role) const {
  std::vector<std::string> out;
  for (const auto& f : schema)
    if (f.role == role) out.push_back(f.name);
  return out;
}

std::size_t Territory::count(FeatureRole role) const {
  return static_cast<std::size_t>(
      std::count_if(schema.begin(), schema.end(), [role](const FeatureSpec& f) { return f.role == role; }));
}

std::size_t Territory::event_index(const std::string& event_id) const {
  for (std::size_t i = 0; i < events.size(); ++i)
    if (events[i].event_id == event_id) return i;
  throw std::out_of_range("unknown event id '" + event_id + "'");
}

// --- validation -----------------------------------------------------------------

std::string ValidationIssue::to_json() const {
  json j;
  j["code"] = code;
  j["message"] = message;
  if (event) j["event"] = *event;
  if (location) j["location"] = *location;
  if (feature) j["feature"] = *feature;
  if (file) j["file"] = *file;
  if (line) j["line"] = *line;
  return j.dump();
}

namespace {

std::string summarize(const std::vector<ValidationIssue>& issues) {
  if (issues.empty()) return "validation failed";
  std::string msg = issues.front().message;
  if (issues.size() > 1) msg += " (and " + std::to_string(issues.size() - 1) + " more issues)";
  return msg;
}

bool safe_id(const std::string& id) {
  if (id.empty() || id == "." || id == "..") return false;
  return std::all_of(id.begin(), id.end(), [](unsigned char c) {
    return std::isalnum(c) || c == '_' || c == '-' || c == '.';
  });
}

ValidationIssue issue(std::string code, std::string message) {
  ValidationIssue i;
  i.code = std::move(code);
  i.message = std::move(message);
  return i;
}

}  // namespace

ValidationError::ValidationError(std::vector<ValidationIssue> issues)
    : std::runtime_error(summarize(issues)), issues_(std::move(issues)) {}

std::vector<ValidationIssue> find_issues(const Territory& t) {
  std::vector<ValidationIssue> out;
  const std::size_t n = t.n_locations();
  if (n < 2) out.push_back(issue("too_few_locations", "territory needs at least 2 locations"));
  if (t.events.size() < 2) out.push_back(issue("too_few_events", "territory needs at least 2 events"));

  std::set<std::string> ids;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& loc = t.locations[i];
    if (loc.id.empty() || !ids.insert(loc.id).second) {
      auto is = issue("duplicate_location_id", "location id '" + loc.id + "' is empty or repeated");
      is.location = i;
      out.push_back(std::move(is));
    }
    if (!std::isfinite(loc.lon) || !std::isfinite(loc.lat)) {
      auto is = issue("bad_coordinate", "location '" + loc.id + "' has non-finite coordinates");
      is.location = i;
      out.push_back(std::move(is));
    }
  }

  std::set<std::string> names;
  for (const auto& f : t.schema)
    if (f.name.empty() || f.name.find(',') != std::string::npos || !names.insert(f.name).second) {
      auto is = issue("bad_feature_name", "feature name '" + f.name + "' is empty, contains a comma, or repeats");
      is.feature = f.name;
      out.push_back(std::move(is));
    }

  const auto static_names = t.feature_names(FeatureRole::Static);
  const auto dynamic_names = t.feature_names(FeatureRole::Dynamic);
  if (t.static_features.rows() != n || t.static_features.cols() != static_names.size()) {
    out.push_back(issue("static_shape", "static feature matrix is " + t.static_features.shape_string() +
                                            ", expected [" + std::to_string(n) + "x" +
                                            std::to_string(static_names.size()) + "]"));
  } else {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t f = 0; f < static_names.size(); ++f)
        if (!std::isfinite(t.static_features(i, f))) {
          auto is = issue("non_finite", "static feature value is not finite");
          is.location = i;
          is.feature = static_names[f];
          out.push_back(std::move(is));
        }
  }

  std::set<std::string> event_ids;
  for (const auto& e : t.events) {
    if (!safe_id(e.event_id) || !event_ids.insert(e.event_id).second) {
      auto is = issue("bad_event_id", "event id '" + e.event_id + "' is unsafe or repeated");
      is.event = e.event_id;
      out.push_back(std::move(is));
    }
    if (e.dynamic_features.rows() != n || e.dynamic_features.cols() != dynamic_names.size()) {
      auto is = issue("event_shape", "event '" + e.event_id + "' has dynamic matrix " +
                                         e.dynamic_features.shape_string() + ", expected [" + std::to_string(n) +
                                         "x" + std::to_string(dynamic_names.size()) + "]");
      is.event = e.event_id;
      out.push_back(std::move(is));
    } else {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t f = 0; f < dynamic_names.size(); ++f)
          if (!std::isfinite(e.dynamic_features(i, f))) {
            auto is = issue("non_finite", "event '" + e.event_id + "' has a non-finite dynamic value");
            is.event = e.event_id;
            is.location = i;
            is.feature = dynamic_names[f];
            out.push_back(std::move(is));
          }
    }
    if (e.outages.size() != n) {
      auto is = issue("outage_length", "event '" + e.event_id + "' has " + std::to_string(e.outages.size()) +
                                           " outage values, expected " + std::to_string(n));
      is.event = e.event_id;
      out.push_back(std::move(is));
    } else {
      for (std::size_t i = 0; i < n; ++i)
        if (!std::isfinite(e.outages[i]) || e.outages[i] < 0.0) {
          auto is = issue("bad_outage", "event '" + e.event_id + "' has a negative or non-finite outage count");
          is.event = e.event_id;
          is.location = i;
          out.push_back(std::move(is));
        }
    }
  }
  return out;
}

void validate(const Territory& territory) {
  auto issues = find_issues(territory);
  if (!issues.empty()) throw ValidationError(std::move(issues));
}

// --- file format ------------------------------------------------------------------

namespace {

[[noreturn]] void fail(std::string code, std::string message, const std::filesystem::path& file,
                       std::optional<std::size_t> line = std::nullopt) {
  ValidationIssue is = issue(std::move(code), std::move(message));
  is.file = file.string();
  is.line = line;
  throw ValidationError({std::move(is)});
}

void write_row(std::ostream& out, std::span<const double> values, std::optional<double> extra = std::nullopt) {
  for (std::size_t j = 0; j < values.size(); ++j) {
    if (j) out << ',';
    out << detail::format_double(values[j]);
  }
  if (extra) out << (values.empty() ? "" : ",") << detail::format_double(*extra);
  out << '\n';
}

void write_header(std::ostream& out, const std::vector<std::string>& names) {
  for (std::size_t j = 0; j < names.size(); ++j) out << (j ? "," : "") << names[j];
  out << '\n';
}

// Reads `expected_rows` numeric rows under a header that must equal `header`.
std::vector<std::vector<double>> read_numeric_csv(const std::filesystem::path& file,
                                                  const std::vector<std::string>& header,
                                                  std::size_t expected_rows) {
  std::ifstream in(file);
  if (!in) fail("missing_file", "cannot open " + file.string(), file);
  std::string line;
  if (!std::getline(in, line)) fail("empty_file", file.string() + " is empty", file, 1);
  const auto cols = detail::split_csv(line);
  const bool empty_header = header.empty() && cols.size() == 1 && cols[0].empty();
  if (!empty_header) {
    if (cols.size() != header.size())
      fail("header_mismatch", file.string() + ": header has " + std::to_string(cols.size()) + " columns, expected " +
                                  std::to_string(header.size()),
           file, 1);
    for (std::size_t j = 0; j < header.size(); ++j)
      if (cols[j] != header[j]) {
        ValidationIssue is = issue("header_mismatch", file.string() + ": column " + std::to_string(j + 1) + " is '" +
                                                          std::string(cols[j]) + "', expected '" + header[j] + "'");
        is.file = file.string();
        is.line = 1;
        is.feature = header[j];
        throw ValidationError({std::move(is)});
      }
  }
  std::vector<std::vector<double>> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto fields = detail::split_csv(line);
    std::vector<double> row;
    if (!(header.empty() && fields.size() == 1 && fields[0].empty())) {
      if (fields.size() != header.size()) {
        ValidationIssue is = issue("row_width", file.string() + ": row has " + std::to_string(fields.size()) +
                                                    " fields, expected " + std::to_string(header.size()));
        is.file = file.string();
        is.line = line_no;
        is.location = rows.size();
        throw ValidationError({std::move(is)});
      }
      for (std::size_t j = 0; j < fields.size(); ++j) {
        auto v = detail::parse_double(fields[j]);
        if (!v) {
          ValidationIssue is = issue("bad_number", file.string() + ": '" + std::string(fields[j]) + "' is not a number");
          is.file = file.string();
          is.line = line_no;
          is.location = rows.size();
          is.feature = header[j];
          throw ValidationError({std::move(is)});
        }
        row.push_back(*v);
      }
    }
    rows.push_back(std::move(row));
  }
  if (rows.size() != expected_rows)
    fail("row_count", file.string() + ": " + std::to_string(rows.size()) + " rows, expected " +
                          std::to_string(expected_rows),
         file);
  return rows;
}

Tensor to_tensor(const std::vector<std::vector<double>>& rows, std::size_t cols) {
  Tensor t(rows.size(), cols);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < cols; ++j) t(i, j) = rows[i][j];
  return t;
}

}  // namespace

void save_territory(const Territory& t, const std::filesystem::path& dir) {
  validate(t);
  std::filesystem::create_directories(dir / "events");

  ordered_json meta;
  meta["format"] = "sahgnn-territory";
  meta["version"] = 1;
  meta["name"] = t.name;
  meta["distance"] = to_string(t.distance);
  meta["locations"] = ordered_json::array();
  for (const auto& l : t.locations) meta["locations"].push_back({{"id", l.id}, {"lon", l.lon}, {"lat", l.lat}});
  meta["features"] = ordered_json::array();
  for (const auto& f : t.schema) meta["features"].push_back({{"name", f.name}, {"role", to_string(f.role)}});
  meta["events"] = ordered_json::array();
  for (const auto& e : t.events) meta["events"].push_back(e.event_id);
  {
    std::ofstream out(dir / "territory.json");
    out << meta.dump(2) << '\n';
  }
  {
    std::ofstream out(dir / "static.csv");
    write_header(out, t.feature_names(FeatureRole::Static));
    for (std::size_t i = 0; i < t.n_locations(); ++i) write_row(out, t.static_features.row(i));
  }
  auto dyn = t.feature_names(FeatureRole::Dynamic);
  dyn.push_back("outages");
  for (const auto& e : t.events) {
    std::ofstream out(dir / "events" / (e.event_id + ".csv"));
    write_header(out, dyn);
    for (std::size_t i = 0; i < t.n_locations(); ++i) write_row(out, e.dynamic_features.row(i), e.outages[i]);
  }
}

EventRecord load_event_csv(const std::filesystem::path& file, std::span<const std::string> dynamic_names,
                           std::size_t n_locations, std::string event_id) {
  std::vector<std::string> header(dynamic_names.begin(), dynamic_names.end());
  header.push_back("outages");
  auto rows = read_numeric_csv(file, header, n_locations);
  EventRecord e;
  e.event_id = std::move(event_id);
  e.dynamic_features = Tensor(n_locations, dynamic_names.size());
  e.outages.resize(n_locations);
  for (std::size_t i = 0; i < n_locations; ++i) {
    for (std::size_t j = 0; j < dynamic_names.size(); ++j) e.dynamic_features(i, j) = rows[i][j];
    e.outages[i] = rows[i].back();
  }
  return e;
}

Territory load_territory(const std::filesystem::path& dir) {
  const auto meta_path = dir / "territory.json";
  std::ifstream in(meta_path);
  if (!in) fail("missing_file", "cannot open " + meta_path.string(), meta_path);
  json meta;
  try {
    meta = json::parse(in);
  } catch (const json::parse_error& e) {
    fail("bad_json", meta_path.string() + ": " + e.what(), meta_path);
  }

  Territory t;
  try {
    if (meta.value("format", "") != "sahgnn-territory") fail("bad_format", "not a territory file", meta_path);
    t.name = meta.at("name").get<std::string>();
    const auto distance = meta.value("distance", "haversine");
    if (distance == "haversine") t.distance = DistanceMetric::Haversine;
    else if (distance == "euclidean") t.distance = DistanceMetric::Euclidean;
    else fail("bad_distance", "unknown distance metric '" + distance + "'", meta_path);
    for (const auto& l : meta.at("locations"))
      t.locations.push_back({l.at("id").get<std::string>(), l.at("lon").get<double>(), l.at("lat").get<double>()});
    for (const auto& f : meta.at("features")) {
      const auto role = f.at("role").get<std::string>();
      if (role != "static" && role != "dynamic")
        fail("bad_role", "feature '" + f.at("name").get<std::string>() + "' has unknown role '" + role + "'", meta_path);
      t.schema.push_back({f.at("name").get<std::string>(), role == "static" ? FeatureRole::Static : FeatureRole::Dynamic});
    }
    for (const auto& e : meta.at("events")) {
      EventRecord ev;
      ev.event_id = e.get<std::string>();
      t.events.push_back(std::move(ev));
    }
  } catch (const json::exception& e) {
    fail("bad_json", meta_path.string() + ": " + e.what(), meta_path);
  }

  const std::size_t n = t.n_locations();
  const auto static_names = t.feature_names(FeatureRole::Static);
  t.static_features = to_tensor(read_numeric_csv(dir / "static.csv", static_names, n), static_names.size());
  const auto dynamic_names = t.feature_names(FeatureRole::Dynamic);
  for (auto& e : t.events) {
    if (!safe_id(e.event_id)) {
      ValidationIssue is = issue("bad_event_id", "event id '" + e.event_id + "' is not a safe file name");
      is.event = e.event_id;
      throw ValidationError({std::move(is)});
    }
    const auto file = dir / "events" / (e.event_id + ".csv");
    try {
      e = load_event_csv(file, dynamic_names, n, e.event_id);
    } catch (ValidationError& err) {
      auto issues = err.issues();
      for (auto& is : issues) is.event = e.event_id;
      throw ValidationError(std::move(issues));
    }
  }
  validate(t);
  return t;
}

// --- correlation and selection ------------------------------------------------------

Correlation pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("pearson: length mismatch");
  if (x.size() < 2) throw std::invalid_argument("pearson: need at least two samples");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) return {0.0, true};
  const double r = sxy / std::sqrt(sxx * syy);
  return {std::clamp(r, -1.0, 1.0), false};
}

FeatureSelection select_features(const Territory& t, std::size_t count) {
  if (count == 0) throw std::invalid_argument("select_features: count must be positive");
  if (count > t.schema.size())
    throw std::invalid_argument("select_features: requested " + std::to_string(count) + " features but only " +
                                std::to_string(t.schema.size()) + " exist");
  const std::size_t n = t.n_locations();
  std::vector<double> y;
  y.reserve(n * t.events.size());
  for (const auto& e : t.events) y.insert(y.end(), e.outages.begin(), e.outages.end());

  struct Scored {
    std::string name;
    FeatureRole role;
    double r;
  };
  std::vector<Scored> scored;
  std::vector<double> x(y.size());
  std::size_t s_col = 0, d_col = 0;
  for (const auto& f : t.schema) {
    const bool is_static = f.role == FeatureRole::Static;
    const std::size_t col = is_static ? s_col++ : d_col++;
    for (std::size_t e = 0; e < t.events.size(); ++e)
      for (std::size_t i = 0; i < n; ++i)
        x[e * n + i] = is_static ? t.static_features(i, col) : t.events[e].dynamic_features(i, col);
    const Correlation c = pearson(x, y);
    if (!c.degenerate) scored.push_back({f.name, f.role, c.r});
  }
  std::sort(scored.begin(), scored.end(), [](const Scored& a, const Scored& b) {
    const double fa = std::abs(a.r), fb = std::abs(b.r);
    if (fa != fb) return fa > fb;
    return a.name < b.name;
  });
  if (scored.size() > count) scored.resize(count);

  FeatureSelection sel;
  for (const auto& s : scored) {
    sel.selected_names.push_back(s.name);
    sel.correlations.push_back(s.r);
    (s.role == FeatureRole::Static ? sel.static_count : sel.dynamic_count)++;
  }
  return sel;
}

Territory apply_selection(const Territory& t, const FeatureSelection& selection) {
  std::map<std::string, std::pair<FeatureRole, std::size_t>> column;
  std::size_t s_col = 0, d_col = 0;
  for (const auto& f : t.schema)
    column[f.name] = {f.role, f.role == FeatureRole::Static ? s_col++ : d_col++};

  Territory out;
  out.name = t.name;
  out.distance = t.distance;
  out.locations = t.locations;
  std::vector<std::size_t> s_keep, d_keep;
  for (const auto& name : selection.selected_names) {
    auto it = column.find(name);
    if (it == column.end()) throw std::invalid_argument("apply_selection: unknown feature '" + name + "'");
    out.schema.push_back({name, it->second.first});
    (it->second.first == FeatureRole::Static ? s_keep : d_keep).push_back(it->second.second);
  }
  const std::size_t n = t.n_locations();
  out.static_features = Tensor(n, s_keep.size());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < s_keep.size(); ++j) out.static_features(i, j) = t.static_features(i, s_keep[j]);
  for (const auto& e : t.events) {
    EventRecord r;
    r.event_id = e.event_id;
    r.outages = e.outages;
    r.dynamic_features = Tensor(n, d_keep.size());
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d_keep.size(); ++j) r.dynamic_features(i, j) = e.dynamic_features(i, d_keep[j]);
    out.events.push_back(std::move(r));
  }
  return out;
}

// --- standardisation ------------------------------------------------------------------

namespace {

template <typename ColumnFn>
FeatureScaler fit_column(std::string name, std::size_t count, ColumnFn value) {
  FeatureScaler s;
  s.name = std::move(name);
  if (count == 0) {
    s.degenerate = true;
    return s;
  }
  double mean = 0.0;
  for (std::size_t i = 0; i < count; ++i) mean += value(i);
  mean /= static_cast<double>(count);
  double var = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    const double d = value(i) - mean;
    var += d * d;
  }
  var /= static_cast<double>(count);
  s.mean = mean;
  if (var == 0.0) {
    s.degenerate = true;
    s.std = 1.0;
  } else {
    s.std = std::sqrt(var);
  }
  return s;
}

}  // namespace

Scalers fit_scalers(const Territory& t, std::span<const std::size_t> training_events) {
  Scalers sc;
  const std::size_t n = t.n_locations();
  const auto static_names = t.feature_names(FeatureRole::Static);
  for (std::size_t f = 0; f < static_names.size(); ++f)
    sc.static_scalers.push_back(fit_column(static_names[f], n, [&](std::size_t i) { return t.static_features(i, f); }));
  const auto dynamic_names = t.feature_names(FeatureRole::Dynamic);
  for (std::size_t f = 0; f < dynamic_names.size(); ++f)
    sc.dynamic_scalers.push_back(fit_column(dynamic_names[f], n * training_events.size(), [&](std::size_t k) {
      return t.events.at(training_events[k / n]).dynamic_features(k % n, f);
    }));
  return sc;
}

Tensor apply_scalers(std::span<const FeatureScaler> scalers, const Tensor& features) {
  if (features.cols() != scalers.size())
    throw ShapeError("apply_scalers: " + std::to_string(scalers.size()) + " scalers for " + features.shape_string());
  Tensor out(features.rows(), features.cols());
  for (std::size_t i = 0; i < features.rows(); ++i)
    for (std::size_t j = 0; j < features.cols(); ++j) out(i, j) = scalers[j].apply(features(i, j));
  return out;
}

Territory apply_scalers(const Territory& t, const Scalers& scalers) {
  Territory out = t;
  out.static_features = apply_scalers(scalers.static_scalers, t.static_features);
  for (auto& e : out.events) e.dynamic_features = apply_scalers(scalers.dynamic_scalers, e.dynamic_features);
  return out;
}

StandardizedTerritory standardize(const Territory& territory, const FeatureSelection& selection,
                                  std::span<const std::size_t> training_events) {
  Territory selected = apply_selection(territory, selection);
  Scalers scalers = fit_scalers(selected, training_events);
  Territory scaled = apply_scalers(selected, scalers);
  return {std::move(scaled), std::move(scalers)};
}

}  // namespace sahgnn::data
