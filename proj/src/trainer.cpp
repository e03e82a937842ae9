#include "ncadapt/trainer.hpp"

#include <chrono>
#include <cmath>
#include <unordered_map>

namespace ncadapt {

using nlohmann::json;

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw UsageError("train: " + m); };
  if (epochs < 1 || batch_size < 1) fail("epochs and batch size must be >= 1");
  if (!(adam.lr >= 0)) fail("learning rate must be >= 0");
  if (!(adam.beta1 >= 0 && adam.beta1 < 1 && adam.beta2 >= 0 && adam.beta2 < 1)) fail("betas must be in [0, 1)");
  if (!(adam.eps > 0)) fail("eps must be positive");
  if (!(lr_gamma > 0 && lr_gamma <= 1)) fail("lr gamma must be in (0, 1]");
  if (ewc_lambda && !(*ewc_lambda >= 0)) fail("ewc lambda must be >= 0");
  if (fisher_batches < 1) fail("fisher_batches must be >= 1");
}

json to_json(const TrainReport& r) {
  return json{{"domain", r.domain},           {"stage", r.stage},
              {"epochs", r.epochs},           {"final_loss", r.final_loss},
              {"wall_seconds", r.wall_seconds}, {"trainable_params", r.trainable_params},
              {"loss_curve", r.loss_curve}};
}

namespace {

std::unordered_map<const Param*, std::size_t> param_index(const NcadaptModel& model) {
  std::unordered_map<const Param*, std::size_t> idx;
  const auto params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) idx[params[i]] = i;
  return idx;
}

// Accumulates d(mean batch loss)/d(param) into grads (indexed canonically);
// returns the summed per-sample loss.
double batch_gradient(const NcadaptModel& model, int domain, std::span<const Sample> data,
                      std::span<const std::size_t> batch, const DiceFocalOptions& loss_options,
                      const std::function<Rng(std::size_t)>& rng_for, std::vector<Tensor>& grads,
                      const std::unordered_map<const Param*, std::size_t>& index) {
  double total = 0;
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (std::size_t i : batch) {
    const Sample& s = data[i];
    Tape<float> tape;
    auto bound = bind_model(tape, model, domain, true);
    Rng rng = rng_for(i);
    Var logits = m3d_forward<float>(tape, model.arch(), bound.levels, s.image, rng);
    Var loss = dice_focal_loss(tape, logits, s.label, loss_options);
    total += tape.value(loss)[0];
    if (bound.leaves.empty()) continue;
    const auto g = tape.backward(scale(tape, loss, inv));
    for (const auto& [var, param] : bound.leaves) {
      Tensor& acc = grads[index.at(param)];
      const auto& gv = g[var];
      for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += gv[k];
    }
  }
  return total;
}

std::vector<Tensor> zero_grads(const NcadaptModel& model) {
  std::vector<Tensor> g;
  for (const Param* p : model.parameters()) g.push_back(Tensor::zeros(p->value.shape()));
  return g;
}

}  // namespace

EwcState ewc_fisher_from_batches(const NcadaptModel& model, int domain, std::span<const Sample> data,
                                 std::span<const std::vector<std::size_t>> batches, const TrainConfig& config) {
  if (data.empty() || batches.empty()) throw DataError("ewc_fisher: empty dataset");
  const auto index = param_index(model);
  const auto params = model.parameters();
  std::vector<Tensor> fisher = zero_grads(model);
  for (const auto& batch : batches) {
    if (batch.empty()) throw DataError("ewc_fisher: empty batch");
    std::uint64_t tag = label_hash("fisher");
    for (std::size_t i : batch) tag = stream_id({tag, i});
    std::vector<Tensor> g = zero_grads(model);
    batch_gradient(model, domain, data, batch, config.loss,
                   [&](std::size_t i) { return Rng(config.seed, stream_id({tag, i})); }, g, index);
    for (std::size_t p = 0; p < g.size(); ++p)
      for (std::size_t k = 0; k < g[p].size(); ++k) fisher[p][k] += g[p][k] * g[p][k];
  }
  EwcState state;
  state.lambda = config.ewc_lambda.value_or(0.0);
  const float inv = 1.0f / static_cast<float>(batches.size());
  for (std::size_t p = 0; p < params.size(); ++p) {
    if (!params[p]->trainable) continue;
    for (float& f : fisher[p].data()) f *= inv;
    state.names.push_back(params[p]->name);
    state.reference.push_back(params[p]->value);
    state.fisher.push_back(std::move(fisher[p]));
  }
  return state;
}

EwcState ewc_fisher(const NcadaptModel& model, int domain, std::span<const Sample> data, std::size_t n_batches,
                    Rng& rng, const TrainConfig& config) {
  if (data.empty()) throw DataError("ewc_fisher: empty dataset");
  std::vector<std::vector<std::size_t>> batches(n_batches);
  for (auto& b : batches)
    for (std::size_t k = 0; k < std::min(config.batch_size, data.size()); ++k) b.push_back(rng.below(data.size()));
  return ewc_fisher_from_batches(model, domain, data, batches, config);
}

double ewc_penalty(const NcadaptModel& model, std::span<const EwcState> states) {
  double total = 0;
  for (const auto& s : states) {
    double acc = 0;
    for (std::size_t i = 0; i < s.names.size(); ++i) {
      const Tensor& theta = model.param(s.names[i]).value;
      for (std::size_t k = 0; k < theta.size(); ++k) {
        const double d = static_cast<double>(theta[k]) - s.reference[i][k];
        acc += s.fisher[i][k] * d * d;
      }
    }
    total += 0.5 * s.lambda * acc;
  }
  return total;
}

std::vector<Tensor> ewc_penalty_gradient(const NcadaptModel& model, std::span<const EwcState> states) {
  const auto index = param_index(model);
  std::vector<Tensor> grads = zero_grads(model);
  for (const auto& s : states)
    for (std::size_t i = 0; i < s.names.size(); ++i) {
      const Param& p = model.param(s.names[i]);
      Tensor& g = grads[index.at(&p)];
      for (std::size_t k = 0; k < g.size(); ++k)
        g[k] += static_cast<float>(s.lambda * s.fisher[i][k] * (static_cast<double>(p.value[k]) - s.reference[i][k]));
    }
  return grads;
}

TrainReport train_stage(NcadaptModel& model, std::span<const Sample> data, const TrainConfig& config, int domain,
                        std::span<const EwcState> ewc, OptimizerState* optimizer) {
  config.validate();
  if (data.empty()) throw DataError("train_stage: empty dataset");
  if (domain < 0 || domain >= static_cast<int>(model.domain_count()))
    throw UsageError("train_stage: domain is not registered");
  const auto start = std::chrono::steady_clock::now();

  OptimizerState local = OptimizerState::zeros_like(model);
  OptimizerState& opt = optimizer ? *optimizer : local;
  if (optimizer) *optimizer = OptimizerState::zeros_like(model);

  const auto params = model.parameters();
  const auto index = param_index(model);
  const std::size_t stage = model.domain_count();

  TrainReport report;
  report.domain = model.domain(domain).label;
  report.stage = stage;
  report.trainable_params = model.count_params(ParamFilter::Trainable);

  std::vector<std::size_t> order(data.size());
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::vector<Tensor> snapshot;
    for (const Param* p : params) snapshot.push_back(p->value);
    try {
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      Rng shuffle(config.seed, stream_id({label_hash("shuffle"), stage, epoch}));
      for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[shuffle.below(i + 1)]);

      const double lr = config.adam.lr * std::pow(config.lr_gamma, static_cast<double>(epoch));
      double epoch_loss = 0;
      for (std::size_t b = 0; b < order.size(); b += config.batch_size) {
        const std::size_t e = std::min(order.size(), b + config.batch_size);
        std::span<const std::size_t> batch(order.data() + b, e - b);
        std::vector<Tensor> grads = zero_grads(model);
        epoch_loss += batch_gradient(
            model, domain, data, batch, config.loss,
            [&](std::size_t i) { return Rng(config.seed, stream_id({label_hash("train"), stage, epoch, i})); }, grads,
            index);
        if (!ewc.empty()) {
          const auto pg = ewc_penalty_gradient(model, ewc);
          for (std::size_t p = 0; p < grads.size(); ++p)
            for (std::size_t k = 0; k < grads[p].size(); ++k) grads[p][k] += pg[p][k];
        }
        ++opt.step;
        for (std::size_t p = 0; p < params.size(); ++p)
          adam_step(*params[p], grads[p], opt.moments[p], opt.step, lr, config.adam);
      }
      epoch_loss /= static_cast<double>(data.size());
      if (!std::isfinite(epoch_loss)) throw NumericError("training loss is not finite");
      report.loss_curve.push_back(epoch_loss);
    } catch (const NumericError& e) {
      for (std::size_t p = 0; p < params.size(); ++p) params[p]->value = snapshot[p];
      throw NumericError(std::string(e.what()) + " (stage " + std::to_string(stage) + ", epoch " +
                         std::to_string(epoch) + "; parameters rolled back to the last completed epoch)");
    }
  }
  report.epochs = config.epochs;
  report.final_loss = report.loss_curve.back();
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

StageResult continue_stage(NcadaptModel model, const TaskData& task, const TrainConfig& config,
                           std::vector<EwcState> ewc) {
  const bool first = model.domain_count() == 0;
  const int id = model.add_domain(task.label);
  OptimizerState opt;
  TrainReport report = train_stage(model, task.train, config, id, ewc, &opt);
  if (config.ewc_lambda) {
    Rng rng(config.seed, stream_id({label_hash("fisher-sample"), model.domain_count()}));
    ewc.push_back(ewc_fisher(model, id, task.train, config.fisher_batches, rng, config));
  }
  if (first) model.apply_freeze_policy(model.policy());
  return StageResult{std::move(model), std::move(report), std::move(opt), std::move(ewc)};
}

std::vector<StageResult> run_continual(NcadaptModel model, std::span<const TaskData> tasks, const TrainConfig& config,
                                       const std::function<void(const StageResult&)>& on_stage) {
  if (tasks.empty()) throw UsageError("run_continual: need at least one task");
  std::vector<StageResult> out;
  std::vector<EwcState> ewc;
  for (const auto& task : tasks) {
    StageResult r = continue_stage(out.empty() ? std::move(model) : out.back().model, task, config, ewc);
    ewc = r.ewc;
    if (on_stage) on_stage(r);
    out.push_back(std::move(r));
  }
  return out;
}

StageResult train_baseline(const ArchConfig& arch, std::uint64_t init_seed, const TaskData& task,
                           const TrainConfig& config) {
  TrainConfig plain = config;
  plain.ewc_lambda.reset();
  return continue_stage(NcadaptModel(arch, FreezePolicy::None, PerceptionScope::Shared, init_seed), task, plain);
}

}  // namespace ncadapt
