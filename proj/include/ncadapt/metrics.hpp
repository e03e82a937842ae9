#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "ncadapt/nqm.hpp"
#include "ncadapt/synth.hpp"

namespace ncadapt {

/// 2|P∩T| / (|P| + |T|), 1 when both masks are empty.
double dice_score(const Tensor& pred, const Tensor& target);

enum class InferenceMode {
  Oracle,  // use the task's own head; NQM over existing heads when it has none
  Nqm,     // always select the head by NQM
};

InferenceMode parse_inference_mode(std::string_view name);
std::string_view to_string(InferenceMode mode);

struct InferenceConfig {
  InferenceMode mode = InferenceMode::Oracle;
  NqmRule rule = NqmRule::Min;
  std::size_t n_samples = 10;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};

struct TestTask {
  std::string label;
  std::vector<Sample> test;
};

struct TaskEvaluation {
  std::vector<double> case_dice;
  std::size_t selections = 0;          // cases where a head was picked by NQM
  std::size_t correct_selections = 0;  // ... and it was the task's own head
  double mean() const;
};

/// Scores one model on one task's test cases. The fire masks of case c come
/// from a stream keyed by (task label, c) only, so every model sees the same
/// masks for the same case.
TaskEvaluation evaluate_task(const NcadaptModel& model, const TestTask& task, const InferenceConfig& config);

struct DiceMatrix {
  std::vector<std::string> tasks;
  std::vector<std::vector<double>> d;                 // d[i][j]: model after stage i+1 on task j+1
  std::vector<std::vector<std::vector<double>>> cases;  // per-case Dice behind d
  std::vector<double> baseline;                       // b[j]: single-task model of task j+1; empty if none
  std::vector<std::vector<double>> baseline_cases;
  std::size_t selections = 0;  // NQM selection counts over the final model's row
  std::size_t correct_selections = 0;

  std::size_t size() const { return tasks.size(); }
};

nlohmann::json to_json(const DiceMatrix& matrix);
DiceMatrix dice_matrix_from_json(const nlohmann::json& j);

/// stages[i] is the checkpoint after stage i+1; baselines may be empty.
DiceMatrix build_dice_matrix(std::span<const NcadaptModel> stages, std::span<const NcadaptModel> baselines,
                             std::span<const TestTask> tasks, const InferenceConfig& config);

struct MeanSd {
  double mean = 0.0;
  double sd = 0.0;  // population
  friend bool operator==(const MeanSd&, const MeanSd&) = default;
};

MeanSd mean_sd(std::span<const double> values);

struct TransferReport {
  std::vector<std::string> tasks;
  std::vector<double> bwt;  // tasks 1..n-1: d[n][j] - d[j][j]
  std::vector<double> fwt;  // tasks 2..n: d[i-1][i] - b[i]; empty without baselines
  MeanSd bwt_summary;
  MeanSd fwt_summary;
  MeanSd final_dice;       // across tasks, final stage
  MeanSd final_case_dice;  // across all test cases of all tasks, final stage
  std::vector<std::size_t> trainable_params;  // per stage
  std::string config_hash;

  friend bool operator==(const TransferReport&, const TransferReport&) = default;
};

TransferReport transfer_metrics(const DiceMatrix& matrix);

/// Writes dice_matrix.csv and report.json into `dir`. Both are plain
/// functions of their inputs; values are percentages with six decimals.
void emit_report(const std::filesystem::path& dir, const TransferReport& report, const DiceMatrix& matrix);

std::string report_json(const TransferReport& report);
std::string dice_matrix_csv(const DiceMatrix& matrix);
TransferReport parse_report(std::string_view json_text);

/// The report as it reads back from its JSON form (six-decimal percentages).
TransferReport quantized(const TransferReport& report);

}  // namespace ncadapt
