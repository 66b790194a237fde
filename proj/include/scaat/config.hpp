#pragma once

// Run configuration files and the JSON/CSV artifacts a run leaves behind.

#include "scaat/metrics.hpp"
#include "scaat/scaat.hpp"

#include <json.hpp>

#include <filesystem>

namespace scaat {

using Json = nlohmann::ordered_json;

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

constexpr int kSchemaVersion = 1;

struct DatasetConfig {
  DatasetFormat format = DatasetFormat::synthetic;
  /// File, directory or synthetic spec string, per format.
  std::string train = "half-informative:n=2000,size=16,classes=2,ratios=0.25/0.75";
  std::string test = "half-informative:n=500,size=16,classes=2,ratios=0.25/0.75";
  /// Keep only the first N samples; 0 keeps all.
  std::size_t train_limit = 0;
  std::size_t test_limit = 0;
};

/// Architecture choices; input shape and class count come from the data.
struct ModelConfig {
  Arch arch = Arch::cnn;
  std::vector<std::size_t> hidden{16, 32};
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::string output_dir = "runs/default";
  DatasetConfig dataset;
  ModelConfig model;
  /// train.seed is ignored; the run seed is used.
  TrainConfig train;
  EvalConfig eval;

  ModelSpec model_spec(const Dataset& data) const;
  TrainConfig train_config() const;
  EvalConfig eval_config() const;
  void validate() const;
};

/// Every field is written, defaults included.
Json to_json(const RunConfig& c);
/// Missing keys keep their defaults; unknown keys and a wrong
/// schema_version are errors.
RunConfig run_config_from_json(const Json& j);
RunConfig load_run_config(const std::filesystem::path& path);

Dataset load_split(const RunConfig& c, const std::string& split);

Json to_json(const ModelSpec& s);
ModelSpec model_spec_from_json(const Json& j);

Json to_json(const LogRecord& r);
/// One JSON object per line.
std::string training_log_jsonl(std::span<const LogRecord> log);

Json to_json(const QState& q, std::span<const std::vector<double>> history);

Json to_json(const PerturbationCurve& c);
PerturbationCurve curve_from_json(const Json& j);

/// NaN fields become null.
Json to_json(const MetricsReport& r);
MetricsReport report_from_json(const Json& j);
bool same_report(const MetricsReport& a, const MetricsReport& b);

/// Header plus one row per sample.
std::string report_csv(const MetricsReport& r);
/// step,mean_decay,std with steps counted from 1.
std::string curve_csv(const PerturbationCurve& c);

struct ReportFiles {
  std::filesystem::path json, csv, lerf_csv, morf_csv;
};

/// Writes metrics.json (aggregates, samples, curves and the echoed config),
/// metrics.csv and the two curve files under `dir`, each atomically.
ReportFiles export_report(const MetricsReport& r, const std::filesystem::path& dir,
                          const Json& config_echo);

/// Canonical text form used for every JSON artifact.
std::string dump_json(const Json& j);

}  // namespace scaat
