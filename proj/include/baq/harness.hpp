#pragma once

// Experiment orchestration: data preparation, per-user sessions for every
// policy with budget snapshots, metric aggregation and reporting.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "baq/dataset_io.hpp"
#include "baq/irt.hpp"
#include "baq/persona_model.hpp"
#include "baq/policies.hpp"
#include "baq/prior_fit.hpp"
#include "baq/scoring.hpp"
#include "json.hpp"

namespace baq {

struct SyntheticSpec {
  std::size_t n_personas = 50;
  std::size_t n_questions = 30;
  std::size_t n_categories = 4;
  double concentration = 0.5;
  std::size_t n_users = 2500;
  std::uint64_t seed = 0;
  /// Generating prior; empty means uniform.
  std::vector<double> prior;
};

struct CatSettings {
  std::optional<GridConfig> grid;  // default_grid(kind) when absent
  IrtEmConfig em;
  /// Per CAT policy; defaults to MEPV in 1D and A_OPT otherwise.
  std::map<std::string, CatCriterion> criteria;
  /// Pre-fitted bank files per CAT policy. Without one the bank is fitted on
  /// the training split unless fit_inline is false.
  std::map<std::string, std::string> banks;
  bool fit_inline = true;
};

struct ExperimentConfig {
  std::string tensor_path;
  std::string responses_path;
  std::optional<SyntheticSpec> synthetic;

  std::string prior_mode = "uniform";  // uniform | em | file
  std::string prior_path;
  EmConfig em;

  double train_fraction = 0.8;
  std::uint64_t split_seed = 0;

  std::vector<std::string> target_ids;
  std::size_t n_targets = 5;
  std::uint64_t target_seed = 0;

  std::vector<std::string> policies = {"greedy", "nonadaptive", "random", "random_fixed", "full"};
  /// Budget checkpoints; budget_all appends |feasible|.
  std::vector<std::size_t> budgets = {5, 10, 15, 20, 30, 50};
  bool budget_all = true;
  UncertaintyKind uncertainty = UncertaintyKind::ShannonEntropy;
  std::vector<Metric> metrics = {Metric::LogLoss, Metric::Brier, Metric::OrdinalMse};

  std::uint64_t seed = 0;
  std::size_t mc_samples = kDefaultMcSamples;
  std::size_t threads = 1;
  std::size_t max_test_users = 0;  // 0 = all
  CatSettings cat;

  std::string output_dir;
  /// Keep per-user mean scores in the result (needed for paired tests).
  bool record_user_scores = false;
};

ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ExperimentConfig& config);
ExperimentConfig load_experiment_config(const std::string& path);

bool is_cat_policy(const std::string& name);
IrtModelKind cat_policy_model(const std::string& name);

/// Everything a run needs once data are loaded, split and targets drawn.
struct PreparedExperiment {
  TensorBundle tensor;
  ResponseDataset train;
  ResponseDataset test;
  PersonaPrior prior;
  std::optional<PriorFit> prior_fit;
  std::vector<std::size_t> targets;
  std::vector<std::size_t> feasible;
  std::vector<std::size_t> budgets;  // sorted, unique, resolved
  double fit_seconds = 0.0;
};

/// Loads or generates the data, splits users, picks targets and sets up the
/// prior. Responses are reordered to the tensor's question order.
PreparedExperiment prepare_experiment(const ExperimentConfig& config);

/// Targets by id, or n_targets drawn with target_seed.
std::vector<std::size_t> choose_targets(const ExperimentConfig& config,
                                        const std::vector<std::string>& question_ids);

struct ResultCell {
  std::string policy;
  std::size_t budget = 0;
  std::string metric;
  double mean = 0.0;
  double se = 0.0;
  std::size_t count = 0;  // scored (user, target) pairs
  std::size_t users = 0;

  bool operator==(const ResultCell&) const = default;
};

struct PolicyTiming {
  double fit_seconds = 0.0;
  double inference_seconds = 0.0;
};

struct ResultTable {
  std::vector<ResultCell> cells;
  std::vector<std::string> target_ids;
  std::size_t n_test_users = 0;
  std::map<std::string, PolicyTiming> timing;
  /// "policy/budget/metric" -> per-user mean score (NaN when the user has no
  /// observed target). Present only with record_user_scores.
  std::map<std::string, std::vector<double>> user_scores;
  nlohmann::json config;

  const ResultCell* find(const std::string& policy, std::size_t budget, const std::string& metric) const;
};

std::string user_score_key(const std::string& policy, std::size_t budget, const std::string& metric);

ResultTable run_experiment(const ExperimentConfig& config);

/// Timing is included only when asked, so that reruns compare equal.
nlohmann::json to_json(const ResultTable& table, bool include_timing = true);
ResultTable result_table_from_json(const nlohmann::json& j);
std::string result_cells_csv(const ResultTable& table);
/// Writes results.json and results.csv into `dir`.
void save_results(const ResultTable& table, const std::string& dir);

/// Aligned text tables, one per metric, policies by budgets.
std::string render_report(const ResultTable& table);

struct InteractiveOptions {
  TensorBundle tensor;
  PersonaPrior prior;
  std::vector<std::size_t> targets;
  std::vector<std::size_t> feasible;
  UncertaintyKind uncertainty = UncertaintyKind::ShannonEntropy;
  std::size_t max_questions = 0;  // 0 = every feasible question
  std::map<std::string, std::string> question_text;  // by question id
  std::size_t top_personas = 5;
};

struct TranscriptStep {
  std::size_t question = 0;
  std::string question_id;
  std::size_t answer = 0;  // 0-based
};

struct Transcript {
  std::string tensor_sha256;
  std::vector<double> prior;
  std::vector<std::string> target_ids;
  std::vector<TranscriptStep> steps;
  std::vector<double> final_weights;
  std::vector<std::vector<double>> final_predictions;  // per target
};

/// Greedy REPL: asks, reads 1..K or "quit", prints target predictions and
/// the heaviest personas. Malformed input re-prompts.
Transcript interactive_session(const InteractiveOptions& options, std::istream& in, std::ostream& out);

/// Folds the recorded answers into the prior again.
SessionState replay_transcript(const Transcript& transcript, const LikelihoodTensor& tensor);

nlohmann::json to_json(const Transcript& transcript);
Transcript transcript_from_json(const nlohmann::json& j);

}  // namespace baq
