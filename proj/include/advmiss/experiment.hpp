#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "advmiss/dataset.hpp"
#include "advmiss/graph.hpp"
#include "advmiss/lamm.hpp"
#include "advmiss/mechanisms.hpp"
#include "advmiss/missdag.hpp"
#include "advmiss/scm.hpp"

namespace advmiss {

// ---- config ---------------------------------------------------------------

struct ScmSpec {
  Matrix B;
  Vector noise;
};

struct AdversaryTargetSpec {
  std::string kind = "edge_reweight";  // edge_reweight | optimal | covariance_zeroing
  double weight = 0.0;                 // edge_reweight
  double child_noise = -1.0;           // edge_reweight; < 0 keeps the reference value
  std::vector<std::pair<int, int>> zero_pairs;  // covariance_zeroing
};

struct MechanismSpec {
  std::string kind = "lamm";  // localized_rs | all_or_none_rs | generalized_rs | mcar | lamm
  std::vector<int> v;
  LambdaMode lambda_mode = LambdaMode::Empirical;
  double mcar_rate = 0.0;  // per-entry masking probability inside V (mcar)
  LammConfig lamm;         // sigma_alpha and v are filled at setup
};

struct ModelerSpec {
  std::string algorithm;  // missdag | mean_notears | misspc | mean_pc
  std::vector<std::string> inits{"emp_diag"};
  MissDagOptions missdag;
  double alpha = 0.01;
};

struct ExperimentConfig {
  std::string name = "experiment";
  std::vector<std::string> columns;
  std::optional<ScmSpec> scm;                   // simulated data ...
  std::optional<std::filesystem::path> dataset; // ... or a CSV (centered on load)
  Index n = 1000;
  MissDagOptions reference_fit;  // NOTEARS on the full data when no SCM is given
  Edge target{0, 1};
  AdversaryTargetSpec adversary;
  MechanismSpec mechanism;
  std::vector<ModelerSpec> modelers;
  int replicates = 10;
  std::uint64_t base_seed = 1;
  bool mcar_arm = true;
  std::filesystem::path output_dir = "out";
  std::string profile;
};

/// Parses a config document. Profile overrides under "profiles" are merged
/// onto the root before parsing. Throws ConfigError.
ExperimentConfig parse_config(const nlohmann::json& doc, const std::string& profile = "fast");
ExperimentConfig load_config(const std::filesystem::path& path, const std::string& profile = "fast");

// ---- setup ----------------------------------------------------------------

/// Everything fixed across replicates: data, reference graph, θα and mechanisms.
struct ExperimentSetup {
  Dataset data;
  Dag reference;
  Dag adversarial;  // reference without the target edge
  CovMatrix sigma_p;
  CovMatrix sigma_alpha;
  std::optional<GaussianScm> scm_p, scm_alpha;
  MechanismPtr mnar;
  MechanismPtr mcar;
  double lambda = std::numeric_limits<double>::quiet_NaN();  // RS mechanisms
  std::optional<LammResult> lamm;
};

ExperimentSetup prepare(const ExperimentConfig& cfg);

std::uint64_t replicate_seed(const ExperimentConfig& cfg, int r);
/// Masks for replicate r; arm is "MNAR" or "MCAR".
MaskedDataset draw_masks(const ExperimentConfig& cfg, const ExperimentSetup& setup, int r, const std::string& arm);

// ---- report ---------------------------------------------------------------

struct CellRecord {
  int replicate = 0;
  std::string arm;      // MNAR | MCAR
  std::string modeler;  // missdag | mean_notears | misspc | mean_pc
  std::string init;     // "-" outside missdag
  bool failed = false;
  std::string error;
  int hd = -1;        // against the reference graph
  int hd_alpha = -1;  // against the adversarial graph
  int success = -1;
  double kl_alpha = std::numeric_limits<double>::quiet_NaN();  // KL(θ̂ ‖ θα)
  double kl_p = std::numeric_limits<double>::quiet_NaN();      // KL(θ̂ ‖ θp)
  double rate_overall = 0.0;
  double rate_masked = 0.0;  // over the V columns
  int iterations = 0;
};

struct AggregateRow {
  std::string arm, modeler, init;
  int count = 0;  // successful cells
  int failed = 0;
  double hd = 0.0, hd_alpha = 0.0, success = 0.0, kl_alpha = 0.0, kl_p = 0.0, rate_overall = 0.0, rate_masked = 0.0;
};

struct AttackReport {
  std::string name;
  std::string mechanism;
  std::vector<std::string> columns;
  std::vector<std::string> v;
  Edge target{0, 1};
  double lambda = std::numeric_limits<double>::quiet_NaN();
  int lamm_epochs = 0;
  double lamm_loss = std::numeric_limits<double>::quiet_NaN();
  std::vector<CellRecord> records;

  /// Means over non-failed records, grouped by (modeler, init, arm) in first-seen order.
  std::vector<AggregateRow> aggregate() const;
  bool all_failed() const;
};

/// Runs one (modeler, init) cell on a masked dataset; failures land in the record.
CellRecord run_cell(const ModelerSpec& m, const std::string& init, const MaskedDataset& mds,
                    const ExperimentSetup& setup, const std::vector<int>& v, Edge target, std::uint64_t seed);

/// threads = 0 uses the OpenMP default; 1 runs everything in order.
AttackReport run_experiment(const ExperimentConfig& cfg, int threads = 0);
AttackReport run_experiment(const ExperimentConfig& cfg, const ExperimentSetup& setup, int threads = 0);

/// Writes records.csv, aggregate.csv, table.md, plot_long.csv and report.json.
/// `formats` selects a subset by those base names; empty means all.
void emit_report(const AttackReport& report, const std::filesystem::path& dir,
                 const std::vector<std::string>& formats = {});
/// Reads report.json and records.csv back.
AttackReport load_report(const std::filesystem::path& dir);

}  // namespace advmiss
