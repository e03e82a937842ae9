#include "ncadapt/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>

#include "ncadapt/errors.hpp"
#include "ncadapt/rti.hpp"

namespace ncadapt {

using nlohmann::ordered_json;

double dice_score(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape())
    throw UsageError("dice_score: shape mismatch " + shape_str(pred.shape()) + " vs " + shape_str(target.shape()));
  double inter = 0, p = 0, t = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool a = pred[i] > 0.5f, b = target[i] > 0.5f;
    inter += a && b;
    p += a;
    t += b;
  }
  if (p + t == 0) return 1.0;
  return 2.0 * inter / (p + t);
}

InferenceMode parse_inference_mode(std::string_view name) {
  if (name == "oracle") return InferenceMode::Oracle;
  if (name == "nqm") return InferenceMode::Nqm;
  throw UsageError("unknown inference mode '" + std::string(name) + "' (expected oracle or nqm)");
}

std::string_view to_string(InferenceMode mode) { return mode == InferenceMode::Oracle ? "oracle" : "nqm"; }

double TaskEvaluation::mean() const {
  if (case_dice.empty()) return 0.0;
  double s = 0;
  for (double v : case_dice) s += v;
  return s / static_cast<double>(case_dice.size());
}

TaskEvaluation evaluate_task(const NcadaptModel& model, const TestTask& task, const InferenceConfig& config) {
  if (task.test.empty()) throw DataError("task '" + task.label + "' has no test cases");
  if (config.n_samples < 1) throw UsageError("n_samples must be >= 1");
  if (model.domain_count() == 0) throw UsageError("cannot evaluate a model without domains");
  const int own = model.find_domain(task.label);
  TaskEvaluation ev;
  for (std::size_t c = 0; c < task.test.size(); ++c) {
    const Sample& s = task.test[c];
    const Rng rng(config.seed, stream_id({label_hash("eval"), label_hash(task.label), c}));
    Tensor pred;
    if (config.mode == InferenceMode::Oracle && own >= 0) {
      const auto maps = sample_probabilities(model, own, s.image, config.n_samples, rng, config.threads);
      pred = threshold(mean_map(maps));
    } else {
      auto sel = select_head(model, s.image, std::max<std::size_t>(config.n_samples, 2), rng, config.rule,
                             config.threads);
      if (own >= 0) {
        ++ev.selections;
        ev.correct_selections += sel.domain == own;
      }
      pred = std::move(sel.prediction);
    }
    ev.case_dice.push_back(dice_score(pred, s.label));
  }
  return ev;
}

DiceMatrix build_dice_matrix(std::span<const NcadaptModel> stages, std::span<const NcadaptModel> baselines,
                             std::span<const TestTask> tasks, const InferenceConfig& config) {
  const std::size_t n = tasks.size();
  if (n == 0) throw UsageError("build_dice_matrix: no tasks");
  if (stages.size() != n)
    throw UsageError("build_dice_matrix: expected " + std::to_string(n) + " stage checkpoints, got " +
                     std::to_string(stages.size()));
  if (!baselines.empty() && baselines.size() != n)
    throw UsageError("build_dice_matrix: expected " + std::to_string(n) + " baselines, got " +
                     std::to_string(baselines.size()));
  DiceMatrix m;
  for (const auto& t : tasks) m.tasks.push_back(t.label);
  m.d.assign(n, std::vector<double>(n));
  m.cases.assign(n, std::vector<std::vector<double>>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      auto ev = evaluate_task(stages[i], tasks[j], config);
      m.d[i][j] = ev.mean();
      m.cases[i][j] = std::move(ev.case_dice);
      if (i + 1 == n) {
        m.selections += ev.selections;
        m.correct_selections += ev.correct_selections;
      }
    }
  for (std::size_t j = 0; j < baselines.size(); ++j) {
    auto ev = evaluate_task(baselines[j], tasks[j], config);
    m.baseline.push_back(ev.mean());
    m.baseline_cases.push_back(std::move(ev.case_dice));
  }
  return m;
}

nlohmann::json to_json(const DiceMatrix& m) {
  return nlohmann::json{{"tasks", m.tasks},
                        {"d", m.d},
                        {"cases", m.cases},
                        {"baseline", m.baseline},
                        {"baseline_cases", m.baseline_cases},
                        {"selections", m.selections},
                        {"correct_selections", m.correct_selections}};
}

DiceMatrix dice_matrix_from_json(const nlohmann::json& j) {
  try {
    DiceMatrix m;
    m.tasks = j.at("tasks").get<std::vector<std::string>>();
    m.d = j.at("d").get<std::vector<std::vector<double>>>();
    m.cases = j.at("cases").get<std::vector<std::vector<std::vector<double>>>>();
    m.baseline = j.at("baseline").get<std::vector<double>>();
    m.baseline_cases = j.at("baseline_cases").get<std::vector<std::vector<double>>>();
    m.selections = j.at("selections").get<std::size_t>();
    m.correct_selections = j.at("correct_selections").get<std::size_t>();
    const std::size_t n = m.tasks.size();
    bool ok = m.d.size() == n && m.cases.size() == n && (m.baseline.empty() || m.baseline.size() == n);
    for (const auto& row : m.d) ok = ok && row.size() == n;
    if (!ok) throw DataError("Dice matrix dimensions do not match its task list");
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed Dice matrix: ") + e.what());
  }
}

MeanSd mean_sd(std::span<const double> values) {
  if (values.empty()) return {};
  double mean = 0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double var = 0;
  for (double v : values) var += (v - mean) * (v - mean);
  return {mean, std::sqrt(var / static_cast<double>(values.size()))};
}

TransferReport transfer_metrics(const DiceMatrix& m) {
  const std::size_t n = m.size();
  if (n == 0 || m.d.size() != n) throw UsageError("transfer_metrics: incomplete Dice matrix");
  for (const auto& row : m.d) {
    if (row.size() != n) throw UsageError("transfer_metrics: incomplete Dice matrix");
    for (double v : row)
      if (!(v >= 0 && v <= 1)) throw DataError("transfer_metrics: Dice value outside [0, 1]");
  }
  if (!m.baseline.empty() && m.baseline.size() != n) throw UsageError("transfer_metrics: baseline row incomplete");

  TransferReport r;
  r.tasks = m.tasks;
  if (n >= 2) {
    for (std::size_t j = 0; j + 1 < n; ++j) r.bwt.push_back(m.d[n - 1][j] - m.d[j][j]);
    if (!m.baseline.empty())
      for (std::size_t i = 1; i < n; ++i) r.fwt.push_back(m.d[i - 1][i] - m.baseline[i]);
  }
  r.bwt_summary = mean_sd(r.bwt);
  r.fwt_summary = mean_sd(r.fwt);
  r.final_dice = mean_sd(m.d[n - 1]);
  std::vector<double> all;
  if (m.cases.size() == n)
    for (const auto& c : m.cases[n - 1]) all.insert(all.end(), c.begin(), c.end());
  r.final_case_dice = mean_sd(all);
  return r;
}

namespace {

std::string fixed6(double v) {
  if (!std::isfinite(v)) throw NumericError("cannot write a non-finite value to a report");
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  std::string s = buf;
  return s == "-0.000000" ? "0.000000" : s;
}

double pct(double v) { return std::strtod(fixed6(100.0 * v).c_str(), nullptr) / 100.0; }

// nlohmann's dump prints the shortest round-trip form; reports want fixed
// decimals, so floats are written by hand.
void write_json(std::string& out, const ordered_json& j, int indent) {
  const std::string pad(static_cast<std::size_t>(indent) * 2, ' ');
  if (j.is_object()) {
    if (j.empty()) {
      out += "{}";
      return;
    }
    out += "{\n";
    std::size_t k = 0;
    for (auto it = j.begin(); it != j.end(); ++it, ++k) {
      out += pad + "  " + ordered_json(it.key()).dump() + ": ";
      write_json(out, it.value(), indent + 1);
      out += k + 1 < j.size() ? ",\n" : "\n";
    }
    out += pad + "}";
  } else if (j.is_array()) {
    out += "[";
    for (std::size_t k = 0; k < j.size(); ++k) {
      if (k) out += ", ";
      write_json(out, j[k], indent + 1);
    }
    out += "]";
  } else if (j.is_number_float()) {
    out += fixed6(j.get<double>());
  } else {
    out += j.dump();
  }
}

ordered_json percent_array(std::span<const double> v) {
  ordered_json a = ordered_json::array();
  for (double x : v) a.push_back(100.0 * x);
  return a;
}

ordered_json percent_or_null(const MeanSd& s, bool defined, bool sd) {
  if (!defined) return nullptr;
  return 100.0 * (sd ? s.sd : s.mean);
}

std::vector<double> fractions(const nlohmann::json& a) {
  std::vector<double> out;
  for (const auto& x : a) out.push_back(x.get<double>() / 100.0);
  return out;
}

double fraction_or_zero(const nlohmann::json& j) { return j.is_null() ? 0.0 : j.get<double>() / 100.0; }

}  // namespace

std::string report_json(const TransferReport& r) {
  ordered_json j;
  j["schema_version"] = 1;
  j["units"] = "percent";
  j["config_hash"] = r.config_hash;
  j["tasks"] = r.tasks;
  j["bwt"] = percent_array(r.bwt);
  j["bwt_mean"] = percent_or_null(r.bwt_summary, !r.bwt.empty(), false);
  j["bwt_sd"] = percent_or_null(r.bwt_summary, !r.bwt.empty(), true);
  j["fwt"] = percent_array(r.fwt);
  j["fwt_mean"] = percent_or_null(r.fwt_summary, !r.fwt.empty(), false);
  j["fwt_sd"] = percent_or_null(r.fwt_summary, !r.fwt.empty(), true);
  j["final_dice_mean"] = 100.0 * r.final_dice.mean;
  j["final_dice_sd"] = 100.0 * r.final_dice.sd;
  j["final_case_dice_mean"] = 100.0 * r.final_case_dice.mean;
  j["final_case_dice_sd"] = 100.0 * r.final_case_dice.sd;
  j["trainable_params"] = r.trainable_params;
  std::string out;
  write_json(out, j, 0);
  out += "\n";
  return out;
}

TransferReport parse_report(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("report is not valid JSON: ") + e.what());
  }
  try {
    if (j.at("schema_version").get<int>() != 1) throw DataError("unsupported report schema version");
    TransferReport r;
    r.config_hash = j.at("config_hash").get<std::string>();
    r.tasks = j.at("tasks").get<std::vector<std::string>>();
    r.bwt = fractions(j.at("bwt"));
    r.fwt = fractions(j.at("fwt"));
    r.bwt_summary = {fraction_or_zero(j.at("bwt_mean")), fraction_or_zero(j.at("bwt_sd"))};
    r.fwt_summary = {fraction_or_zero(j.at("fwt_mean")), fraction_or_zero(j.at("fwt_sd"))};
    r.final_dice = {fraction_or_zero(j.at("final_dice_mean")), fraction_or_zero(j.at("final_dice_sd"))};
    r.final_case_dice = {fraction_or_zero(j.at("final_case_dice_mean")), fraction_or_zero(j.at("final_case_dice_sd"))};
    r.trainable_params = j.at("trainable_params").get<std::vector<std::size_t>>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed report: ") + e.what());
  }
}

TransferReport quantized(const TransferReport& r) {
  TransferReport q = r;
  for (double& v : q.bwt) v = pct(v);
  for (double& v : q.fwt) v = pct(v);
  for (MeanSd* s : {&q.bwt_summary, &q.fwt_summary, &q.final_dice, &q.final_case_dice}) {
    s->mean = pct(s->mean);
    s->sd = pct(s->sd);
  }
  return q;
}

std::string dice_matrix_csv(const DiceMatrix& m) {
  std::string out = "stage";
  for (const auto& t : m.tasks) out += "," + t;
  out += "\n";
  for (std::size_t i = 0; i < m.d.size(); ++i) {
    out += std::to_string(i + 1);
    for (double v : m.d[i]) out += "," + fixed6(100.0 * v);
    out += "\n";
  }
  out += "baseline";
  for (std::size_t j = 0; j < m.size(); ++j) out += "," + (m.baseline.empty() ? std::string() : fixed6(100.0 * m.baseline[j]));
  out += "\n";
  return out;
}

void emit_report(const std::filesystem::path& dir, const TransferReport& report, const DiceMatrix& matrix) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError("cannot create report directory " + dir.string() + ": " + ec.message());
  const std::string json = report_json(report);
  const std::string csv = dice_matrix_csv(matrix);
  write_file(dir / "report.json", std::as_bytes(std::span(json.data(), json.size())));
  write_file(dir / "dice_matrix.csv", std::as_bytes(std::span(csv.data(), csv.size())));
}

}  // namespace ncadapt
