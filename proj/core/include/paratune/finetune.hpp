#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "paratune/corpus.hpp"
#include "paratune/encoder.hpp"
#include "paratune/injection.hpp"

namespace paratune {

/// Undefined metric (e.g. Pearson on a constant series) or mismatched inputs.
class MetricError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// accuracy: fraction equal. f1: positive class 1. pearson: sample correlation.
double compute_metric(std::span<const double> preds, std::span<const double> golds, Metric metric);

struct TaskSpec {
  std::string name;
  TaskKind kind = TaskKind::pair_classification;
  Metric metric = Metric::accuracy;
  std::vector<TaskExample> train;
  std::vector<TaskExample> dev;
  std::vector<TaskExample> test;

  /// Number of output classes (1 for regression). Throws std::invalid_argument when labels
  /// are not dense 0..C-1, or when the metric does not fit the task kind.
  std::size_t validate() const;
};

struct FinetuneHyper {
  std::size_t batch = 32;
  double lr = 3e-5;
  std::size_t epochs = 4;
  double dropout = 0.1;
  std::size_t max_len = 64;
  std::uint64_t seed = 1;
};

struct TaskModel {
  EncoderParams params;
  TaskKind kind = TaskKind::pair_classification;
  std::size_t outputs = 2;
  double label_min = 0.0;  ///< regression scaling range
  double label_max = 1.0;
};

EncodedPair encode_example(const WordPieceTokenizer& tok, const TaskExample& ex, TaskKind kind, std::size_t max_len);

/// One affine head on h_1 over a copy of the checkpoint's encoder (existing heads are
/// dropped). Cross-entropy for classification, squared error on min-max scaled targets
/// for regression. Runs exactly `epochs` passes over `train`.
TaskModel finetune(const TaskSpec& task, std::span<const TaskExample> train, const EncoderParams& checkpoint,
                   const WordPieceTokenizer& tok, const FinetuneHyper& hyper);

/// Class indices for classification, rescaled scores for regression.
std::vector<double> predict(TaskModel& model, std::span<const TaskExample> data, const WordPieceTokenizer& tok,
                            std::size_t max_len);
double evaluate_task(TaskModel& model, std::span<const TaskExample> data, Metric metric, const WordPieceTokenizer& tok,
                     std::size_t max_len);

struct ReportRow {
  std::string variant;
  std::string task;
  std::size_t train_size = 0;
  std::string metric;
  double value = 0.0;
  std::uint64_t seed = 0;
};

class ExperimentReport {
 public:
  /// Throws std::invalid_argument on a repeated (variant, task, size, seed) cell.
  void add(ReportRow row);
  const std::vector<ReportRow>& rows() const { return rows_; }
  std::size_t size() const { return rows_.size(); }

 private:
  std::vector<ReportRow> rows_;
};

/// Columns variant,task,train_size,metric,value,seed.
void write_report_csv(const std::filesystem::path& path, const ExperimentReport& report);

struct DeltaRow {
  std::string task;
  std::size_t train_size = 0;
  std::string seed;  ///< seed number, or "mean"
  double baseline = 0.0;
  double injected = 0.0;
  double delta = 0.0;
};
/// injected - baseline per (task, size, seed) plus a mean row per (task, size).
std::vector<DeltaRow> delta_table(const ExperimentReport& report, const std::string& baseline,
                                  const std::string& injected);
void write_delta_csv(const std::filesystem::path& path, const std::vector<DeltaRow>& rows);

/// First `size` entries of a seed-specific permutation, so smaller draws nest inside larger ones.
std::vector<TaskExample> nested_subsample(std::span<const TaskExample> train, std::size_t size, std::uint64_t seed);

struct NamedCheckpoint {
  std::string name;
  const EncoderParams* params = nullptr;
};

/// For each size and seed, fine-tunes every checkpoint on the same subsample and records
/// the dev metric. Size 0 means the full training set.
ExperimentReport subsample_experiment(const TaskSpec& task, std::span<const NamedCheckpoint> checkpoints,
                                      std::span<const std::size_t> sizes, std::span<const std::uint64_t> seeds,
                                      const WordPieceTokenizer& tok, const FinetuneHyper& hyper, std::size_t jobs = 1);

struct AblationConfig {
  std::vector<Variant> variants;
  std::vector<std::uint64_t> seeds{1};
  SamplerConfig sampler;
  InjectionHyper inject;
  FinetuneHyper finetune;
};

struct AblationResult {
  ExperimentReport report;
  /// Parameter names of each variant's model right after injection (heads included).
  std::map<std::string, std::vector<std::string>> inventory;
  std::map<std::string, InjectionResult> injection;
  std::map<std::string, EncoderParams> checkpoints;  ///< heads stripped
};

/// Injects each variant from the same base checkpoint, then fine-tunes it on every task
/// for every seed (full training sets, dev metric).
AblationResult ablation_experiment(const CorpusSplits& corpus, std::span<const TaskSpec> tasks,
                                   const EncoderParams& base, const WordPieceTokenizer& tok,
                                   const AblationConfig& config, std::size_t jobs = 1);

}  // namespace paratune
