#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "otnas/dataio.hpp"
#include "otnas/ot.hpp"
#include "otnas/supernet.hpp"
#include "otnas/zoo.hpp"

namespace otnas {

/// Runs fn(0..n-1) on up to `jobs` threads. If several calls throw, the
/// exception of the lowest index is rethrown after all workers finish.
void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn);

struct OtSettings {
  EmbeddingConfig embedding;
  double epsilon = 0.1;
  Index sample_count = 1000;
  double label_weight = 1.0;
  Seed sample_seed = 0;
  int max_iter = 5000;
  double tol = 1e-9;
  double ridge = 1e-4;

  OtddOptions otdd_options() const;
  void validate() const;
};

/// Name-keyed set of datasets available to the experiments.
class DatasetCatalog {
 public:
  static DatasetCatalog load_dir(const std::filesystem::path& dir);

  void add(LabeledDataset dataset);
  bool contains(const std::string& name) const { return datasets_.count(name) != 0; }
  const LabeledDataset& get(const std::string& name) const;
  std::vector<std::string> names() const;
  std::size_t size() const { return datasets_.size(); }

 private:
  std::map<std::string, LabeledDataset> datasets_;
};

struct DistanceReport {
  std::vector<std::string> names;
  MatrixXd distances;  // distances(i, j) = d_ot(names[i], names[j])
  OtSettings settings;

  std::string to_csv() const;
};

DistanceReport distance_matrix(std::span<const LabeledDataset> datasets, const OtSettings& settings, int jobs = 1);

/// argmin over the candidates, skipping `exclude`; ties go to the
/// lexicographically smaller name. Throws PreconditionError if nothing is left.
std::string select_by_distance(const std::vector<std::pair<std::string, double>>& distances,
                               const std::string& exclude = {});

struct SourceSelection {
  std::string source;
  std::vector<std::pair<std::string, double>> distances;  // zoo order, eligible entries only
};

/// Entries named like the target, or with its fingerprint, are never eligible.
SourceSelection select_source(const LabeledDataset& target, const ZooIndex& zoo, const DatasetCatalog& catalog,
                              const OtSettings& settings, int jobs = 1);

enum class RunMode { scratch, ot_transfer, loo_transfer, grid_source };
std::string to_string(RunMode mode);
RunMode run_mode_from_string(const std::string& name);

struct RunResult {
  RunMode mode = RunMode::scratch;
  std::string target;
  std::optional<std::string> source;
  double accuracy = 0;  // final supernet val accuracy
  std::optional<double> retrained_accuracy;
  TrainingCurve curve;
  Seed seed = 0;
  double seconds = 0;  // wall clock; not persisted

  std::string run_id() const;
};

std::string run_to_json(const RunResult& run);
RunResult run_from_json(const std::string& text);
void save_run(const RunResult& run, const std::filesystem::path& path);
RunResult load_run(const std::filesystem::path& path);

/// When `retrain` is given, the final supernet is discretized and the
/// genotype retrained with it; the test accuracy lands in retrained_accuracy.
RunResult scratch_run(const LabeledDataset& target, const SearchSpaceConfig& space, const TrainConfig& config,
                      const std::optional<TrainConfig>& retrain = std::nullopt);

/// Warm start from `source` and fine-tune on the target.
RunResult transfer_run(const LabeledDataset& target, const SupernetState& source, const std::string& source_name,
                       RunMode mode, const TrainConfig& config,
                       const std::optional<TrainConfig>& retrain = std::nullopt);

struct OtTransferResult {
  RunResult run;
  SourceSelection selection;
};

OtTransferResult ot_transfer_run(const LabeledDataset& target, const ZooIndex& zoo, const DatasetCatalog& catalog,
                                 const OtSettings& settings, const SearchSpaceConfig& space, const TrainConfig& config,
                                 int jobs = 1, const std::optional<TrainConfig>& retrain = std::nullopt);

struct OracleResult {
  std::vector<RunResult> runs;  // one per eligible zoo entry, zoo order
  std::string best;
  std::string worst;
};

OracleResult grid_search_oracle(const LabeledDataset& target, const ZooIndex& zoo, const SearchSpaceConfig& space,
                                const TrainConfig& config, int jobs = 1);

struct LooPretrainResult {
  SupernetState state;  // shared trunk + alpha; the head is whatever was active last
  std::vector<std::string> provenance;  // dataset name used at every pretraining step
  std::vector<std::string> sources;
};

/// One supernet over every dataset except the target: shared trunk and
/// alpha, one head per dataset, round-robin batches.
LooPretrainResult loo_pretrain(const std::string& target_name, std::span<const LabeledDataset> datasets,
                               const SearchSpaceConfig& space, const TrainConfig& config);

/// Fresh head on the target, then fine-tune.
RunResult loo_transfer_run(const LabeledDataset& target, const LooPretrainResult& pretrained, const TrainConfig& config,
                           const std::optional<TrainConfig>& retrain = std::nullopt);

struct LooRunResult {
  RunResult run;
  std::vector<std::string> provenance;
};

LooRunResult loo_pretrain_run(const LabeledDataset& target, std::span<const LabeledDataset> datasets,
                              const SearchSpaceConfig& space, const TrainConfig& pretrain_config,
                              const TrainConfig& finetune_config);

/// (acc_a - acc_b) / acc_b. Throws PreconditionError when acc_b is 0.
double relative_improvement(double acc_a, double acc_b);

/// Ratio of the first steps at which curve_b and curve_a reach `threshold`
/// train accuracy. Returns +inf if curve_b never does; throws
/// PreconditionError if curve_a never does or either curve is empty.
double convergence_speedup(const TrainingCurve& curve_a, const TrainingCurve& curve_b, double threshold);

std::string format_shortest(double value);
std::string format_fixed4(double value);

struct ComparisonRow {
  std::string target;
  std::string mode;  // scratch, ot_transfer, loo_transfer, oracle_best, oracle_worst
  std::string source;
  double accuracy = 0;
  std::optional<double> ri_vs_scratch;
  std::optional<double> speedup;  // +inf when scratch never reaches the threshold

  std::string to_csv_line() const;
};

struct ReportOptions {
  double speedup_threshold = 0.7;
  double gap_margin = 0.05;
};

/// Per target: median accuracy over seeds for each mode, RI against the
/// scratch median, and the median paired (same seed) convergence speedup.
std::vector<ComparisonRow> comparison_rows(const std::vector<RunResult>& runs, const ReportOptions& options = {});

std::string comparison_csv(const std::vector<ComparisonRow>& rows);

/// Targets whose oracle_best accuracy exceeds ot_transfer by more than the margin.
int gap_count(const std::vector<ComparisonRow>& rows, double margin = 0.05);

/// Writes comparison.csv, gapcount.txt and curves/<run_id>.csv, plus
/// distances.csv when a report is given.
void write_reports(const std::vector<RunResult>& runs, const std::optional<DistanceReport>& distances,
                   const std::filesystem::path& out_dir, const ReportOptions& options = {});

}  // namespace otnas
