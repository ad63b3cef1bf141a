#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "naslab/attacks/report.hpp"
#include "naslab/trainer/data.hpp"

namespace naslab {

inline constexpr const char* kExperimentSchema = "naslab.experiment/1";
inline constexpr const char* kStoreSchema = "naslab.store/1";

/// One pipeline stage. `config` holds the whole stage object, including "name" and "kind".
struct StageSpec {
  std::string name;
  /// search | train | attack | diagnose
  std::string kind;
  nlohmann::json config = nlohmann::json::object();
};

struct ExperimentSpec {
  std::string name = "experiment";
  std::uint64_t seed = 0;
  DatasetSpec dataset;
  std::string output_dir;
  std::vector<StageSpec> stages;

  /// Unique stage names, known kinds, and every reference pointing to an earlier stage.
  void validate() const;
};

void to_json(nlohmann::json& j, const ExperimentSpec& s);
void from_json(const nlohmann::json& j, ExperimentSpec& s);
ExperimentSpec load_experiment(const std::string& path);
/// First 16 hex digits of the SHA-256 of the canonical spec JSON.
std::string run_id(const ExperimentSpec& spec);

struct IngestedData {
  DataSplit split;
  std::string fingerprint;
};

IngestedData ingest_dataset(const DatasetSpec& spec, const std::string& data_root = "");

struct StageRecord {
  std::string name;
  std::string kind;
  /// SHA-256 over the effective stage config, the dataset fingerprint and the keys of upstream stages.
  std::string key;
  /// Directory of the stage's artifacts, relative to the store root.
  std::string dir;
  /// Artifact file name -> SHA-256 at the time it was written.
  std::map<std::string, std::string> outputs;
  nlohmann::json summary = nlohmann::json::object();
  /// Effective config (seeds filled in).
  nlohmann::json config = nlohmann::json::object();
};

void to_json(nlohmann::json& j, const StageRecord& r);
void from_json(const nlohmann::json& j, StageRecord& r);

/// On-disk results: `<root>/manifest.json` plus one artifact directory per stage key.
/// Artifact directories are never rewritten; a changed config lands in a new directory.
struct ResultStore {
  std::string root;
  std::string run_id;
  nlohmann::json spec = nlohmann::json::object();
  std::vector<StageRecord> stages;
  /// Every stage execution, in order, as {name, key, action}.
  nlohmann::json history = nlohmann::json::array();

  static ResultStore open(const std::string& root);
  void save() const;
  const StageRecord* find(const std::string& name) const;
  std::string path(const StageRecord& r, const std::string& file) const;
  /// Attack report of an attack stage.
  AttackReport report(const StageRecord& r) const;
  nlohmann::json result(const StageRecord& r) const;
};

struct RunOptions {
  std::string data_root;
  /// Stage kinds to execute; empty runs everything. Stages of other kinds are skipped.
  std::set<std::string> kinds;
  std::function<void(const std::string&)> log;
};

struct RunSummary {
  int executed = 0;
  int cached = 0;
  int skipped = 0;
};

/// Runs the stages in order and persists each before the next. A stage whose key and artifacts
/// are already present is reused. Errors halt the run; finished stages stay on disk.
ResultStore run_experiment(const ExperimentSpec& spec, const std::string& out_dir, const RunOptions& options = {},
                           RunSummary* summary = nullptr);

}  // namespace naslab
