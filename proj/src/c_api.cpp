#include "ncadapt/ncadapt.h"

#include <chrono>
#include <cstdlib>
#include <cstring>
#include <memory>
#include <string>

#include "ncadapt/checkpoint.hpp"
#include "ncadapt/config.hpp"
#include "ncadapt/errors.hpp"
#include "ncadapt/rti.hpp"

struct ncadapt_config {
  ncadapt::RunConfig config;
};

struct ncadapt_model {
  ncadapt::Checkpoint checkpoint;
};

namespace {

using namespace ncadapt;
using nlohmann::json;
using nlohmann::ordered_json;
namespace fs = std::filesystem;

thread_local std::string g_last_error;

template <class F>
ncadapt_status guarded(F&& f) {
  try {
    f();
    g_last_error.clear();
    return NCADAPT_OK;
  } catch (const UsageError& e) {
    g_last_error = e.what();
    return NCADAPT_ERR_USAGE;
  } catch (const DataError& e) {
    g_last_error = e.what();
    return NCADAPT_ERR_DATA;
  } catch (const NumericError& e) {
    g_last_error = e.what();
    return NCADAPT_ERR_NUMERIC;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return NCADAPT_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown error";
    return NCADAPT_ERR_INTERNAL;
  }
}

void require(const void* p, const char* what) {
  if (!p) throw UsageError(std::string(what) + " must not be NULL");
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void put_text(const fs::path& path, const std::string& text) {
  write_file(path, std::as_bytes(std::span(text.data(), text.size())));
}

std::string get_text(const fs::path& path) {
  const auto b = read_file(path);
  return std::string(reinterpret_cast<const char*>(b.data()), b.size());
}

fs::path data_root(const RunConfig& c, const char* dir) { return dir ? fs::path(dir) : c.data_dir; }

TaskData load_task(const fs::path& root, const std::string& domain) {
  DomainData d = load_domain(root, domain);
  return TaskData{d.name, std::move(d.train)};
}

// Checkpoint plus the deterministic training record and the wall-clock time kept apart.
std::string persist_stage(const fs::path& out, StageResult& r, const std::string& hash) {
  Checkpoint ck{std::move(r.model), std::move(r.optimizer), std::move(r.ewc), hash, r.report.stage};
  save_checkpoint(out, ck);
  json report = to_json(r.report);
  const double seconds = report["wall_seconds"].get<double>();
  report.erase("wall_seconds");
  put_text(out / "train_report.json", report.dump(2) + "\n");
  put_text(out / "timings.json", json{{"wall_seconds", seconds}}.dump(2) + "\n");
  ordered_json summary;
  summary["checkpoint"] = out.generic_string();
  summary["domain"] = r.report.domain;
  summary["stage"] = r.report.stage;
  summary["epochs"] = r.report.epochs;
  summary["final_loss"] = r.report.final_loss;
  summary["trainable_params"] = r.report.trainable_params;
  summary["stored_params"] = ck.model.count_params(ParamFilter::All);
  summary["wall_seconds"] = seconds;
  return summary.dump();
}

void emit_summary(char** summary, const std::string& s) {
  if (summary) *summary = dup_string(s);
}

json read_json_file(const fs::path& path) {
  try {
    return json::parse(get_text(path));
  } catch (const json::exception& e) {
    throw DataError(path.string() + " is not valid JSON: " + e.what());
  }
}

}  // namespace

extern "C" {

const char* ncadapt_last_error(void) { return g_last_error.c_str(); }

const char* ncadapt_version(void) { return "1.0.0"; }

void ncadapt_string_free(char* s) { std::free(s); }

ncadapt_status ncadapt_param_audit_run(const char* arch, ncadapt_param_audit* out) {
  return guarded([&] {
    require(arch, "arch");
    require(out, "out");
    const std::string name = arch;
    ArchConfig a;
    if (name == "default2d")
      a = ArchConfig::default2d();
    else if (name == "default3d")
      a = ArchConfig::default3d();
    else
      throw UsageError("unknown architecture '" + name + "' (expected default2d or default3d)");
    const ParamAudit p = param_audit(a);
    *out = {p.all, p.ncadapt_trainable, p.per_domain, p.fc, p.fh, p.fl, p.sa_total};
  });
}

ncadapt_status ncadapt_config_default(ncadapt_config** out) {
  return guarded([&] {
    require(out, "out");
    auto c = std::make_unique<ncadapt_config>();
    c->config.sync_seeds();
    *out = c.release();
  });
}

ncadapt_status ncadapt_config_load(const char* path, ncadapt_config** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = new ncadapt_config{load_run_config(path)};
  });
}

ncadapt_status ncadapt_config_set(ncadapt_config* config, const char* key, const char* json_value) {
  return guarded([&] {
    require(config, "config");
    require(key, "key");
    require(json_value, "value");
    json value;
    try {
      value = json::parse(json_value);
    } catch (const json::exception&) {
      value = std::string(json_value);  // bare words such as policy names
    }
    std::string pointer = "/" + std::string(key);
    for (char& c : pointer)
      if (c == '.') c = '/';
    json j = json::parse(to_json(config->config).dump());
    const json::json_pointer ptr(pointer);
    if (!j.contains(ptr.parent_pointer())) throw UsageError(std::string("unknown config key '") + key + "'");
    j[ptr] = value;
    config->config = run_config_from_json(j);
  });
}

ncadapt_status ncadapt_config_to_json(const ncadapt_config* config, char** out) {
  return guarded([&] {
    require(config, "config");
    require(out, "out");
    *out = dup_string(to_json(config->config).dump(2));
  });
}

ncadapt_status ncadapt_config_hash(const ncadapt_config* config, char** out) {
  return guarded([&] {
    require(config, "config");
    require(out, "out");
    *out = dup_string(config_hash(config->config));
  });
}

void ncadapt_config_free(ncadapt_config* config) { delete config; }

ncadapt_status ncadapt_generate_data(const ncadapt_config* config, const char* data_dir) {
  return guarded([&] {
    require(config, "config");
    const RunConfig& c = config->config;
    write_dataset(data_root(c, data_dir), c.domains, c.test_fraction, c.seed);
  });
}

ncadapt_status ncadapt_train_first(const ncadapt_config* config, const char* data_dir, const char* domain,
                                   const char* out_dir, char** summary) {
  return guarded([&] {
    require(config, "config");
    require(domain, "domain");
    require(out_dir, "out_dir");
    const RunConfig& c = config->config;
    if (fs::exists(fs::path(out_dir) / "manifest.json"))
      throw UsageError(std::string("checkpoint directory ") + out_dir + " already holds a checkpoint");
    const TaskData task = load_task(data_root(c, data_dir), domain);
    NcadaptModel model(c.arch, c.policy, c.scope, c.seed);
    StageResult r = continue_stage(std::move(model), task, c.train);
    emit_summary(summary, persist_stage(out_dir, r, config_hash(c)));
  });
}

ncadapt_status ncadapt_adapt(const ncadapt_config* config, const char* data_dir, const char* domain,
                             const char* prev_dir, const char* out_dir, char** summary) {
  return guarded([&] {
    require(config, "config");
    require(domain, "domain");
    require(prev_dir, "prev_dir");
    require(out_dir, "out_dir");
    const RunConfig& c = config->config;
    if (fs::exists(fs::path(out_dir) / "manifest.json"))
      throw UsageError(std::string("checkpoint directory ") + out_dir + " already holds a checkpoint");
    Checkpoint prev = load_checkpoint(prev_dir);
    if (prev.model.domain_count() == 0) throw DataError("previous checkpoint has no trained domain");
    if (!(prev.model.arch() == c.arch) || prev.model.policy() != c.policy || prev.model.scope() != c.scope)
      throw UsageError("config does not match the previous checkpoint's architecture or policy");
    const TaskData task = load_task(data_root(c, data_dir), domain);
    const auto before = tensor_hashes(prev.model);
    StageResult r = continue_stage(prev.model, task, c.train, prev.ewc);

    // Every tensor the new stage was not allowed to touch must be byte-identical.
    const std::string own = "domain-" + std::to_string(r.model.domain_count());
    for (const auto& [name, hash] : before) {
      const Param& p = r.model.param(name);
      const bool protected_tensor = !p.trainable || (p.owner != "backbone" && p.owner != own);
      if (protected_tensor && tensor_sha256(p.value) != hash)
        throw NumericError("audit failed: frozen tensor " + name + " changed during adaptation");
    }
    emit_summary(summary, persist_stage(out_dir, r, config_hash(c)));
  });
}

ncadapt_status ncadapt_train_baseline(const ncadapt_config* config, const char* data_dir, const char* domain,
                                      const char* out_dir, char** summary) {
  return guarded([&] {
    require(config, "config");
    require(domain, "domain");
    require(out_dir, "out_dir");
    const RunConfig& c = config->config;
    if (fs::exists(fs::path(out_dir) / "manifest.json"))
      throw UsageError(std::string("checkpoint directory ") + out_dir + " already holds a checkpoint");
    const TaskData task = load_task(data_root(c, data_dir), domain);
    StageResult r = train_baseline(c.arch, c.seed, task, c.train);
    emit_summary(summary, persist_stage(out_dir, r, config_hash(c)));
  });
}

ncadapt_status ncadapt_evaluate(const ncadapt_config* config, const char* data_dir, const char* const* stage_dirs,
                                size_t n_stages, const char* const* baseline_dirs, size_t n_baselines,
                                const char* out_dir, size_t threads) {
  return guarded([&] {
    require(config, "config");
    require(out_dir, "out_dir");
    if (n_stages == 0) throw UsageError("need at least one stage checkpoint");
    require(stage_dirs, "stage_dirs");
    if (n_baselines) require(baseline_dirs, "baseline_dirs");
    const RunConfig& c = config->config;
    const auto start = std::chrono::steady_clock::now();

    std::vector<NcadaptModel> stages, baselines;
    std::vector<std::size_t> trainable;
    std::string hash;
    for (std::size_t i = 0; i < n_stages; ++i) {
      Checkpoint ck = load_checkpoint(stage_dirs[i]);
      if (ck.model.domain_count() != i + 1)
        throw UsageError(std::string("checkpoint ") + stage_dirs[i] + " is not stage " + std::to_string(i + 1));
      if (i == 0) hash = ck.config_hash;
      if (ck.config_hash != hash) throw UsageError("stage checkpoints were trained with different configs");
      const json tr = read_json_file(fs::path(stage_dirs[i]) / "train_report.json");
      trainable.push_back(tr.at("trainable_params").get<std::size_t>());
      stages.push_back(std::move(ck.model));
    }
    std::vector<TestTask> tasks;
    const fs::path root = data_root(c, data_dir);
    for (int d = 0; d < static_cast<int>(stages.back().domain_count()); ++d) {
      const std::string& label = stages.back().domain(d).label;
      tasks.push_back({label, load_domain(root, label).test});
    }
    for (std::size_t j = 0; j < n_baselines; ++j) {
      Checkpoint ck = load_checkpoint(baseline_dirs[j]);
      if (ck.model.domain_count() != 1 || ck.model.domain(0).label != tasks.at(j).label)
        throw UsageError(std::string("baseline ") + baseline_dirs[j] + " is not the single-task model of '" +
                         tasks.at(j).label + "'");
      baselines.push_back(std::move(ck.model));
    }

    InferenceConfig ic = c.inference;
    ic.threads = std::max<std::size_t>(threads, 1);
    const DiceMatrix m = build_dice_matrix(stages, baselines, tasks, ic);

    ordered_json ev;
    ev["schema_version"] = 1;
    ev["config_hash"] = hash;
    ev["inference"] = {{"mode", to_string(ic.mode)}, {"nqm_rule", to_string(ic.rule)}, {"n_samples", ic.n_samples}};
    ev["trainable_params"] = trainable;
    ev["matrix"] = ordered_json::parse(to_json(m).dump());
    fs::create_directories(out_dir);
    put_text(fs::path(out_dir) / "evaluation.json", ev.dump(2) + "\n");

    ordered_json timings;
    json stage_seconds = json::array();
    for (std::size_t i = 0; i < n_stages; ++i) {
      const fs::path t = fs::path(stage_dirs[i]) / "timings.json";
      stage_seconds.push_back(fs::exists(t) ? read_json_file(t).at("wall_seconds") : json(nullptr));
    }
    timings["train_wall_seconds"] = stage_seconds;
    timings["eval_wall_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    put_text(fs::path(out_dir) / "timings.json", timings.dump(2) + "\n");
  });
}

ncadapt_status ncadapt_report(const char* eval_dir, const char* out_dir, char** report) {
  return guarded([&] {
    require(eval_dir, "eval_dir");
    require(out_dir, "out_dir");
    const json ev = read_json_file(fs::path(eval_dir) / "evaluation.json");
    TransferReport r;
    DiceMatrix m;
    try {
      if (ev.at("schema_version").get<int>() != 1) throw DataError("unsupported evaluation schema");
      m = dice_matrix_from_json(ev.at("matrix"));
      r = transfer_metrics(m);
      r.config_hash = ev.at("config_hash").get<std::string>();
      r.trainable_params = ev.at("trainable_params").get<std::vector<std::size_t>>();
    } catch (const json::exception& e) {
      throw DataError(std::string("malformed evaluation.json: ") + e.what());
    }
    emit_report(out_dir, r, m);
    const fs::path timings = fs::path(eval_dir) / "timings.json";
    if (fs::exists(timings) && fs::path(eval_dir) != fs::path(out_dir))
      fs::copy_file(timings, fs::path(out_dir) / "timings.json", fs::copy_options::overwrite_existing);
    if (report) *report = dup_string(report_json(r));
  });
}

ncadapt_status ncadapt_model_load(const char* dir, ncadapt_model** out) {
  return guarded([&] {
    require(dir, "dir");
    require(out, "out");
    *out = new ncadapt_model{load_checkpoint(dir)};
  });
}

void ncadapt_model_free(ncadapt_model* model) { delete model; }

size_t ncadapt_model_domain_count(const ncadapt_model* model) {
  return model ? model->checkpoint.model.domain_count() : 0;
}

const char* ncadapt_model_domain_label(const ncadapt_model* model, size_t index) {
  if (!model || index >= model->checkpoint.model.domain_count()) return nullptr;
  return model->checkpoint.model.domain(static_cast<int>(index)).label.c_str();
}

ncadapt_status ncadapt_model_param_count(const ncadapt_model* model, ncadapt_param_filter filter, size_t* out) {
  return guarded([&] {
    require(model, "model");
    require(out, "out");
    switch (filter) {
      case NCADAPT_PARAMS_ALL: *out = model->checkpoint.model.count_params(ParamFilter::All); break;
      case NCADAPT_PARAMS_TRAINABLE: *out = model->checkpoint.model.count_params(ParamFilter::Trainable); break;
      case NCADAPT_PARAMS_PER_DOMAIN: *out = model->checkpoint.model.count_params(ParamFilter::PerDomain); break;
      default: throw UsageError("unknown parameter filter");
    }
  });
}

ncadapt_status ncadapt_infer(const ncadapt_model* model, const char* image_rti, int domain, size_t samples,
                             uint64_t seed, const char* rule, const char* out_rti, int* chosen, double* scores,
                             size_t n_scores) {
  return guarded([&] {
    require(model, "model");
    require(image_rti, "image_rti");
    require(out_rti, "out_rti");
    const NcadaptModel& m = model->checkpoint.model;
    if (m.domain_count() == 0) throw DataError("checkpoint has no trained domain");
    if (samples < 1) throw UsageError("samples must be >= 1");
    const Tensor image = read_rti(image_rti);
    if (image.rank() != m.arch().spatial_rank)
      throw DataError("image has rank " + std::to_string(image.rank()) + ", the model expects " +
                      std::to_string(m.arch().spatial_rank));
    const Rng rng(seed, label_hash("infer"));
    Tensor pred;
    int used = domain;
    if (domain < 0) {
      if (samples < 2) throw UsageError("automatic head selection needs --samples >= 2");
      auto sel = select_head(m, image, samples, rng, parse_nqm_rule(rule ? rule : "min"));
      used = sel.domain;
      pred = std::move(sel.prediction);
      if (scores)
        for (std::size_t i = 0; i < std::min(n_scores, sel.scores.size()); ++i) scores[i] = sel.scores[i];
    } else {
      if (domain >= static_cast<int>(m.domain_count()))
        throw UsageError("domain " + std::to_string(domain) + " does not exist (model has " +
                         std::to_string(m.domain_count()) + ")");
      pred = threshold(mean_map(sample_probabilities(m, domain, image, samples, rng)));
    }
    write_rti(out_rti, pred);
    if (chosen) *chosen = used;
  });
}

}  // extern "C"
