#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ncadapt/loss.hpp"
#include "ncadapt/model.hpp"
#include "ncadapt/optim.hpp"
#include "ncadapt/synth.hpp"

namespace ncadapt {

struct TrainConfig {
  std::size_t epochs = 500;
  std::size_t batch_size = 8;
  AdamConfig adam;
  double lr_gamma = 0.9999;  // exponential decay, applied once per epoch
  std::uint64_t seed = 42;
  DiceFocalOptions loss;
  std::optional<double> ewc_lambda;
  std::size_t fisher_batches = 8;

  void validate() const;
};

struct TrainReport {
  std::string domain;
  std::size_t stage = 0;
  std::size_t epochs = 0;
  double final_loss = 0.0;
  double wall_seconds = 0.0;
  std::size_t trainable_params = 0;
  std::vector<double> loss_curve;  // mean training loss per epoch
};

nlohmann::json to_json(const TrainReport& report);

/// Anchor for elastic weight consolidation: a snapshot of the protected
/// tensors and their diagonal Fisher estimate.
struct EwcState {
  std::vector<std::string> names;
  std::vector<Tensor> reference;
  std::vector<Tensor> fisher;
  double lambda = 0.4;
};

/// Fisher diagonal as the mean over batches of the squared batch gradient,
/// covering the model's trainable tensors. Each batch is a list of sample
/// indices; its fire masks derive from the batch contents, so repeating a
/// batch does not change the estimate.
EwcState ewc_fisher_from_batches(const NcadaptModel& model, int domain, std::span<const Sample> data,
                                 std::span<const std::vector<std::size_t>> batches, const TrainConfig& config);

/// Draws n_batches random batches of config.batch_size samples.
EwcState ewc_fisher(const NcadaptModel& model, int domain, std::span<const Sample> data, std::size_t n_batches,
                    Rng& rng, const TrainConfig& config);

/// (lambda / 2) * sum over states and entries of F * (theta - theta*)^2.
double ewc_penalty(const NcadaptModel& model, std::span<const EwcState> states);

/// Gradient of ewc_penalty, keyed by canonical parameter index.
std::vector<Tensor> ewc_penalty_gradient(const NcadaptModel& model, std::span<const EwcState> states);

/// Trains the model's trainable tensors on `data` for `domain`'s head.
/// Deterministic given config.seed. On a non-finite loss the trainable
/// tensors are rolled back to the last completed epoch and NumericError is
/// thrown.
TrainReport train_stage(NcadaptModel& model, std::span<const Sample> data, const TrainConfig& config, int domain,
                        std::span<const EwcState> ewc = {}, OptimizerState* optimizer = nullptr);

struct TaskData {
  std::string label;
  std::vector<Sample> train;
};

struct StageResult {
  NcadaptModel model;
  TrainReport report;
  OptimizerState optimizer;
  std::vector<EwcState> ewc;  // anchors accumulated so far (empty without EWC)
};

/// The continual protocol: add domain 1, train, apply the freeze policy, then
/// add and train every later domain. `on_stage` sees each finished stage.
std::vector<StageResult> run_continual(NcadaptModel model, std::span<const TaskData> tasks, const TrainConfig& config,
                                       const std::function<void(const StageResult&)>& on_stage = {});

/// One step of the continual protocol: registers the task's domain, trains
/// it, applies the freeze policy after the first stage and, with EWC enabled,
/// appends a Fisher anchor for the task.
StageResult continue_stage(NcadaptModel model, const TaskData& task, const TrainConfig& config,
                           std::vector<EwcState> ewc = {});

/// Single-task model (policy None) trained on one task alone.
StageResult train_baseline(const ArchConfig& arch, std::uint64_t init_seed, const TaskData& task,
                           const TrainConfig& config);

}  // namespace ncadapt
