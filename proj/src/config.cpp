#include "ncadapt/config.hpp"

#include <fstream>
#include <sstream>

#include "ncadapt/errors.hpp"
#include "ncadapt/hash.hpp"
#include "ncadapt/json_util.hpp"

namespace ncadapt {

using nlohmann::json;
using nlohmann::ordered_json;

ordered_json to_json(const ArchConfig& a) {
  ordered_json j;
  j["channels"] = a.channels;
  j["hidden"] = a.hidden;
  j["levels"] = a.levels;
  j["kernels"] = a.kernels;
  j["steps"] = a.steps;
  j["coarse_factor"] = a.coarse_factor;
  j["fire_rate"] = a.fire_rate;
  j["spatial_rank"] = a.spatial_rank;
  j["adapter_width"] = a.adapter_width;
  j["adapter_placement"] = a.adapter_placement == AdapterPlacement::Update ? "update" : "post_state";
  return j;
}

ArchConfig arch_from_json(const json& j) {
  reject_unknown(j,
                 {"channels", "hidden", "levels", "kernels", "steps", "coarse_factor", "fire_rate", "spatial_rank",
                  "adapter_width", "adapter_placement"},
                 "arch");
  ArchConfig a;
  a.channels = field(j, "channels", a.channels);
  a.hidden = field(j, "hidden", a.hidden);
  a.levels = field(j, "levels", a.levels);
  a.kernels = field(j, "kernels", a.kernels);
  a.steps = field(j, "steps", a.steps);
  a.coarse_factor = field(j, "coarse_factor", a.coarse_factor);
  a.fire_rate = field(j, "fire_rate", a.fire_rate);
  a.spatial_rank = field(j, "spatial_rank", a.spatial_rank);
  a.adapter_width = field(j, "adapter_width", a.adapter_width);
  if (j.contains("adapter_placement")) {
    const auto p = j["adapter_placement"].get<std::string>();
    if (p == "update")
      a.adapter_placement = AdapterPlacement::Update;
    else if (p == "post_state")
      a.adapter_placement = AdapterPlacement::PostState;
    else
      throw UsageError("arch: unknown adapter placement '" + p + "'");
  }
  a.validate();
  return a;
}

void RunConfig::validate() const {
  arch.validate();
  train.validate();
  if (policy != FreezePolicy::NCAdapt && scope == PerceptionScope::PerDomain)
    throw UsageError("per_domain perception scope needs the ncadapt policy");
  if (inference.n_samples < 2) throw UsageError("inference.n_samples must be >= 2");
  if (!(test_fraction > 0 && test_fraction < 1)) throw UsageError("test_fraction must be in (0, 1)");
  for (const auto& d : domains) {
    d.validate();
    if (d.resolution.size() != arch.spatial_rank)
      throw UsageError("domain '" + d.name + "' has rank " + std::to_string(d.resolution.size()) +
                       " but the architecture is " + std::to_string(arch.spatial_rank) + "-D");
  }
}

void RunConfig::sync_seeds() {
  train.seed = seed;
  inference.seed = seed;
}

ordered_json to_json(const RunConfig& c) {
  ordered_json j;
  j["schema_version"] = RunConfig::kSchemaVersion;
  j["seed"] = c.seed;
  j["arch"] = to_json(c.arch);
  ordered_json t;
  t["epochs"] = c.train.epochs;
  t["batch_size"] = c.train.batch_size;
  t["lr"] = c.train.adam.lr;
  t["betas"] = {c.train.adam.beta1, c.train.adam.beta2};
  t["eps"] = c.train.adam.eps;
  t["lr_gamma"] = c.train.lr_gamma;
  t["focal_gamma"] = c.train.loss.focal_gamma;
  t["dice_smooth"] = c.train.loss.dice_smooth;
  t["ewc_lambda"] = c.train.ewc_lambda ? ordered_json(*c.train.ewc_lambda) : ordered_json(nullptr);
  t["fisher_batches"] = c.train.fisher_batches;
  j["train"] = t;
  j["policy"] = to_string(c.policy);
  j["perception_scope"] = to_string(c.scope);
  ordered_json inf;
  inf["mode"] = to_string(c.inference.mode);
  inf["nqm_rule"] = to_string(c.inference.rule);
  inf["n_samples"] = c.inference.n_samples;
  j["inference"] = inf;
  j["paths"] = {{"data", c.data_dir.generic_string()}, {"runs", c.runs_dir.generic_string()}};
  j["test_fraction"] = c.test_fraction;
  ordered_json domains = ordered_json::array();
  for (const auto& d : c.domains) domains.push_back(ordered_json::parse(to_json(d).dump()));
  j["domains"] = domains;
  return j;
}

RunConfig run_config_from_json(const json& j) {
  reject_unknown(j,
                 {"schema_version", "seed", "arch", "train", "policy", "perception_scope", "inference", "paths",
                  "test_fraction", "domains"},
                 "config");
  RunConfig c;
  try {
    if (!j.contains("schema_version")) throw UsageError("config: missing schema_version");
    if (j["schema_version"].get<int>() != RunConfig::kSchemaVersion)
      throw UsageError("config: unsupported schema_version " + j["schema_version"].dump());
    c.seed = field(j, "seed", c.seed);
    if (j.contains("arch")) c.arch = arch_from_json(j["arch"]);
    if (j.contains("train")) {
      const json& t = j["train"];
      reject_unknown(t,
                     {"epochs", "batch_size", "lr", "betas", "eps", "lr_gamma", "focal_gamma", "dice_smooth",
                      "ewc_lambda", "fisher_batches"},
                     "train");
      auto& tr = c.train;
      tr.epochs = field(t, "epochs", tr.epochs);
      tr.batch_size = field(t, "batch_size", tr.batch_size);
      tr.adam.lr = field(t, "lr", tr.adam.lr);
      if (t.contains("betas")) {
        const auto b = t["betas"].get<std::vector<double>>();
        if (b.size() != 2) throw UsageError("train.betas needs two values");
        tr.adam.beta1 = b[0];
        tr.adam.beta2 = b[1];
      }
      tr.adam.eps = field(t, "eps", tr.adam.eps);
      tr.lr_gamma = field(t, "lr_gamma", tr.lr_gamma);
      tr.loss.focal_gamma = field(t, "focal_gamma", tr.loss.focal_gamma);
      tr.loss.dice_smooth = field(t, "dice_smooth", tr.loss.dice_smooth);
      if (t.contains("ewc_lambda") && !t["ewc_lambda"].is_null()) tr.ewc_lambda = t["ewc_lambda"].get<double>();
      tr.fisher_batches = field(t, "fisher_batches", tr.fisher_batches);
    }
    if (j.contains("policy")) c.policy = parse_freeze_policy(j["policy"].get<std::string>());
    if (j.contains("perception_scope")) c.scope = parse_perception_scope(j["perception_scope"].get<std::string>());
    if (j.contains("inference")) {
      const json& i = j["inference"];
      reject_unknown(i, {"mode", "nqm_rule", "n_samples"}, "inference");
      if (i.contains("mode")) c.inference.mode = parse_inference_mode(i["mode"].get<std::string>());
      if (i.contains("nqm_rule")) c.inference.rule = parse_nqm_rule(i["nqm_rule"].get<std::string>());
      c.inference.n_samples = field(i, "n_samples", c.inference.n_samples);
    }
    if (j.contains("paths")) {
      const json& p = j["paths"];
      reject_unknown(p, {"data", "runs"}, "paths");
      if (p.contains("data")) c.data_dir = p["data"].get<std::string>();
      if (p.contains("runs")) c.runs_dir = p["runs"].get<std::string>();
    }
    c.test_fraction = field(j, "test_fraction", c.test_fraction);
    if (j.contains("domains")) {
      c.domains.clear();
      for (const auto& d : j["domains"]) c.domains.push_back(domain_spec_from_json(d));
    }
  } catch (const json::exception& e) {
    throw UsageError(std::string("config: ") + e.what());
  }
  c.sync_seeds();
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  json j;
  try {
    j = json::parse(ss.str());
  } catch (const json::exception& e) {
    throw UsageError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

void save_run_config(const std::filesystem::path& path, const RunConfig& config) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << to_json(config).dump(2) << '\n';
}

std::string config_hash(const RunConfig& config) { return sha256_hex(to_json(config).dump()); }

}  // namespace ncadapt
