#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "steel/common.hpp"

namespace steel {

/// One learner in a sweep. `params` holds the method options (see README for
/// the accepted keys per method); `name` labels the records and defaults to
/// the id.
struct MethodSpec {
  std::string id;  // steel | bandit_steel | adaptive | regression | kernel_smoothing
  std::string name;
  nlohmann::json params = nlohmann::json::object();
};

struct EvalSettings {
  Index states = 4096;          // evaluation states (bandit) or loan records (pricing)
  std::uint64_t seed = 999;
  int restarts = 0;             // reference search restarts; 0 picks 512 (bandit) or 64 (mdp)
};

struct ExperimentConfig {
  /// {"kind": "bandit" | "mdp" | "pricing", ...}; see README.
  nlohmann::json env;
  std::vector<MethodSpec> methods;
  std::vector<std::uint64_t> seeds;
  std::vector<Index> sample_sizes;
  std::vector<Index> horizons{1};  // T; only the MDP uses more than one step
  EvalSettings eval;
  std::string output_dir = "results";

  std::string env_kind() const;
  void validate() const;

  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load(const std::string& path);

  /// FNV-1a over the canonical JSON of every field except output_dir.
  std::uint64_t hash() const;
  std::string hash_hex() const;
};

struct Cell {
  std::size_t method = 0;  // index into ExperimentConfig::methods
  Index n = 0;
  Index horizon = 1;
  std::uint64_t seed = 0;
};

struct ResultRecord {
  std::string method;
  Index n = 0;
  Index horizon = 1;
  std::uint64_t seed = 0;
  double regret = 0.0;
  double regret_clamped = 0.0;
  double value = 0.0;
  double std_error = 0.0;
  double reference = 0.0;
  double wall_clock_ms = 0.0;  // data generation and training
  std::string config_hash;

  nlohmann::json to_json() const;
  static ResultRecord from_json(const nlohmann::json& j);
};

struct CellOutput {
  ResultRecord record;
  /// Learner output (policy, Q, duals, trace ...). Contains no timing, so it
  /// is a pure function of the config and the cell.
  nlohmann::json result;

  /// Text of the per-cell result file: the record without its wall clock
  /// and the learner output.
  std::string file_contents() const;
};

std::vector<Cell> expand_cells(const ExperimentConfig& cfg);

/// Generates the data for one cell, trains the method and scores it.
CellOutput run_cell(const ExperimentConfig& cfg, const Cell& cell);

/// Per-cell result file path below the output directory.
std::string cell_file_name(const ExperimentConfig& cfg, const Cell& cell);

struct RunOptions {
  int workers = 1;
  bool overwrite = false;  // discard existing records and cell files first
  bool quiet = false;
};

struct RunReport {
  Index added = 0;
  Index skipped = 0;
  Index failed = 0;
};

/// Runs every cell not yet recorded under this config hash, appending one
/// line per cell to <output_dir>/results.jsonl. Failing cells are logged to
/// stderr and counted; the others still run.
RunReport run_experiment(const ExperimentConfig& cfg, const RunOptions& opts = {});

std::vector<ResultRecord> read_records(const std::string& path);

struct SummaryRow {
  std::string config_hash;
  std::string method;
  Index n = 0;
  Index horizon = 1;
  Index seeds = 0;
  double mean_regret = 0.0;
  double se_regret = 0.0;
  double mean_value = 0.0;
  double se_value = 0.0;
  bool single_seed = false;
};

/// Mean and standard error (sample sd / sqrt(k)) per (config, method, N, T).
/// A single seed reports SE 0 with the flag set.
std::vector<SummaryRow> summarize_records(const std::vector<ResultRecord>& records);

/// Reads <dir>/results.jsonl and writes <dir>/summary.csv. Returns the CSV path.
std::string summarize(const std::string& output_dir);

}  // namespace steel
