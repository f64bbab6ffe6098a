#pragma once

// Territory datasets: in-memory model, validation, the on-disk directory
// format, Pearson-based feature selection, standardisation and the synthetic
// generator.
//
// On disk a territory is a directory:
//   territory.json      name, distance metric, locations, feature schema, event ids
//   static.csv          header of static feature names, then N rows
//   events/<id>.csv     header of dynamic feature names + "outages", then N rows
// CSV is comma separated with '.' decimals, independent of locale. Numbers are
// written in shortest round-trip form so save/load is bitwise exact.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sahgnn/tensor.hpp"

namespace sahgnn::data {

enum class FeatureRole { Static, Dynamic };
enum class DistanceMetric { Haversine, Euclidean };

std::string to_string(FeatureRole role);
std::string to_string(DistanceMetric metric);

struct Location {
  std::string id;
  double lon = 0.0;  // degrees, or x for Euclidean territories
  double lat = 0.0;
  friend bool operator==(const Location&, const Location&) = default;
};

struct FeatureSpec {
  std::string name;
  FeatureRole role = FeatureRole::Static;
  friend bool operator==(const FeatureSpec&, const FeatureSpec&) = default;
};

struct EventRecord {
  std::string event_id;
  Tensor dynamic_features;       // N x F_d, columns in schema order of dynamic features
  std::vector<double> outages;   // length N, non-negative
  friend bool operator==(const EventRecord&, const EventRecord&) = default;
};

struct Territory {
  std::string name;
  DistanceMetric distance = DistanceMetric::Haversine;
  std::vector<Location> locations;
  std::vector<FeatureSpec> schema;
  Tensor static_features;  // N x F_s, columns in schema order of static features
  std::vector<EventRecord> events;

  std::size_t n_locations() const noexcept { return locations.size(); }
  std::vector<std::string> feature_names(FeatureRole role) const;
  std::size_t count(FeatureRole role) const;
  /// Throws std::out_of_range for unknown ids.
  std::size_t event_index(const std::string& event_id) const;

  friend bool operator==(const Territory&, const Territory&) = default;
};

/// One schema problem, with whatever coordinates apply.
struct ValidationIssue {
  std::string code;
  std::string message;
  std::optional<std::string> event;
  std::optional<std::size_t> location;
  std::optional<std::string> feature;
  std::optional<std::string> file;
  std::optional<std::size_t> line;

  /// Single-line JSON object.
  std::string to_json() const;
};

class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(std::vector<ValidationIssue> issues);
  const std::vector<ValidationIssue>& issues() const noexcept { return issues_; }

 private:
  std::vector<ValidationIssue> issues_;
};

std::vector<ValidationIssue> find_issues(const Territory& territory);
/// Throws ValidationError listing every issue.
void validate(const Territory& territory);

Territory load_territory(const std::filesystem::path& dir);
void save_territory(const Territory& territory, const std::filesystem::path& dir);
/// Reads one event file in the events/<id>.csv layout against a known
/// dynamic schema and location count.
EventRecord load_event_csv(const std::filesystem::path& file, std::span<const std::string> dynamic_names,
                           std::size_t n_locations, std::string event_id);

// --- correlation and selection ----------------------------------------------

struct Correlation {
  double r = 0.0;
  /// Either input had zero variance; r is reported as 0.
  bool degenerate = false;
};

/// Pearson product-moment correlation. Throws std::invalid_argument for
/// mismatched lengths or fewer than two samples.
Correlation pearson(std::span<const double> x, std::span<const double> y);

struct FeatureSelection {
  std::vector<std::string> selected_names;  // ordered by |r| descending, ties by name
  std::vector<double> correlations;
  std::size_t static_count = 0;
  std::size_t dynamic_count = 0;
};

/// Rank features by |r| against outages pooled over every (event, location)
/// pair (static features repeated per event) and keep the top `count`.
/// Zero-variance features never qualify. Throws std::invalid_argument when
/// count exceeds the number of features in the schema.
FeatureSelection select_features(const Territory& territory, std::size_t count);

/// Territory restricted to the selected features, in selection order within
/// each role.
Territory apply_selection(const Territory& territory, const FeatureSelection& selection);

// --- standardisation ----------------------------------------------------------

struct FeatureScaler {
  std::string name;
  double mean = 0.0;
  double std = 1.0;         // 1 for degenerate features
  bool degenerate = false;  // zero variance over the fitting pool
  double apply(double x) const { return degenerate ? 0.0 : (x - mean) / std; }
};

struct Scalers {
  std::vector<FeatureScaler> static_scalers;
  std::vector<FeatureScaler> dynamic_scalers;
};

/// Fit per-feature mean/std (population) over the static matrix and over the
/// dynamic features of the listed training events.
Scalers fit_scalers(const Territory& territory, std::span<const std::size_t> training_events);
Tensor apply_scalers(std::span<const FeatureScaler> scalers, const Tensor& features);
/// Every event (training or not) transformed with the given scalers.
Territory apply_scalers(const Territory& territory, const Scalers& scalers);

struct StandardizedTerritory {
  Territory territory;
  Scalers scalers;
};
StandardizedTerritory standardize(const Territory& territory, const FeatureSelection& selection,
                                  std::span<const std::size_t> training_events);

// --- synthetic generation -------------------------------------------------------

struct SynthSpec {
  std::size_t n_locations = 30;
  std::size_t n_events = 12;
  std::size_t n_static = 8;
  std::size_t n_dynamic = 8;
  double correlation_strength = 0.8;
  std::uint64_t seed = 7;
  std::string name = "synthetic";
};

/// Throws std::invalid_argument on non-positive sizes or a strength outside [0, 1].
void check(const SynthSpec& spec);

/// Unit-square territory. Static features mix smooth spatial fields with
/// per-location noise; dynamic features follow a moving Gaussian storm. The
/// outage rate blends an unobserved per-location factor (weight 1 - s)
/// with a storm driver smoothed over each event's weather-similarity
/// neighbourhood (weight s), where s is correlation_strength. Pure function
/// of the spec.
Territory synthesize(const SynthSpec& spec);

}  // namespace sahgnn::data
