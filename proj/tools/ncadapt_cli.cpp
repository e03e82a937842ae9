// Command-line front end. Talks to the library only through the C API.
#include <cstdio>
#include <cstdlib>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ncadapt/ncadapt.h"

namespace {

const char* category(ncadapt_status s) {
  switch (s) {
    case NCADAPT_ERR_USAGE: return "usage";
    case NCADAPT_ERR_DATA: return "data";
    case NCADAPT_ERR_NUMERIC: return "numeric";
    default: return "internal";
  }
}

// Throws the status so that main can turn it into an exit code.
struct Failure {
  ncadapt_status status;
};

void check(ncadapt_status s) {
  if (s != NCADAPT_OK) {
    std::fprintf(stderr, "ncadapt: error[%s]: %s\n", category(s), ncadapt_last_error());
    throw Failure{s};
  }
}

struct ConfigDeleter {
  void operator()(ncadapt_config* c) const { ncadapt_config_free(c); }
};
struct ModelDeleter {
  void operator()(ncadapt_model* m) const { ncadapt_model_free(m); }
};
using ConfigPtr = std::unique_ptr<ncadapt_config, ConfigDeleter>;
using ModelPtr = std::unique_ptr<ncadapt_model, ModelDeleter>;

struct ConfigOptions {
  std::string path;
  std::vector<std::string> overrides;
};

void add_config_options(CLI::App* cmd, ConfigOptions& o) {
  cmd->add_option("-c,--config", o.path, "Run configuration (JSON)")->check(CLI::ExistingFile);
  cmd->add_option("--set", o.overrides, "Override a config entry, e.g. --set train.epochs=50")->take_all();
}

ConfigPtr make_config(const ConfigOptions& o) {
  ncadapt_config* raw = nullptr;
  check(o.path.empty() ? ncadapt_config_default(&raw) : ncadapt_config_load(o.path.c_str(), &raw));
  ConfigPtr c(raw);
  for (const auto& kv : o.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      std::fprintf(stderr, "ncadapt: error[usage]: --set expects key=value, got '%s'\n", kv.c_str());
      throw Failure{NCADAPT_ERR_USAGE};
    }
    check(ncadapt_config_set(c.get(), kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str()));
  }
  return c;
}

void print_owned(char* s) {
  if (!s) return;
  std::printf("%s\n", s);
  ncadapt_string_free(s);
}

const char* opt(const std::string& s) { return s.empty() ? nullptr : s.c_str(); }

std::vector<const char*> c_strings(const std::vector<std::string>& v) {
  std::vector<const char*> out;
  for (const auto& s : v) out.push_back(s.c_str());
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"NCAdapt: neural cellular automata segmentation with per-domain adapters"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(ncadapt_version()));

  // param-audit
  std::string audit_arch = "default3d";
  auto* audit = app.add_subcommand("param-audit", "Print parameter counts of the default architectures");
  audit->add_option("--arch", audit_arch, "default3d or default2d")->check(CLI::IsMember({"default3d", "default2d"}));

  // gen-data
  ConfigOptions gen_cfg;
  std::string gen_data;
  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic domains and their splits");
  add_config_options(gen, gen_cfg);
  gen->add_option("--data", gen_data, "Output directory (default: paths.data)");

  // train / adapt / baseline share their options
  ConfigOptions train_cfg;
  std::string train_data, train_domain, train_out, train_from;
  auto* train = app.add_subcommand("train", "Train the first stage of a continual run");
  auto* adapt = app.add_subcommand("adapt", "Train the next stage on top of an existing checkpoint");
  auto* baseline = app.add_subcommand("baseline", "Train a single-task model");
  for (auto* cmd : {train, adapt, baseline}) {
    add_config_options(cmd, train_cfg);
    cmd->add_option("--data", train_data, "Dataset directory (default: paths.data)");
    cmd->add_option("--domain", train_domain, "Domain to train on")->required();
    cmd->add_option("--out", train_out, "New checkpoint directory")->required();
  }
  adapt->add_option("--from", train_from, "Checkpoint of the previous stage")->required()->check(CLI::ExistingDirectory);

  // eval
  ConfigOptions eval_cfg;
  std::string eval_data, eval_out;
  std::vector<std::string> eval_stages, eval_baselines;
  std::size_t eval_threads = 1;
  auto* eval = app.add_subcommand("eval", "Build the stage-by-task Dice matrix");
  add_config_options(eval, eval_cfg);
  eval->add_option("--data", eval_data, "Dataset directory (default: paths.data)");
  eval->add_option("--stages", eval_stages, "Stage checkpoints in order")->required()->delimiter(',');
  eval->add_option("--baselines", eval_baselines, "Single-task checkpoints in task order")->delimiter(',');
  eval->add_option("--out", eval_out, "Output directory")->required();
  eval->add_option("--threads", eval_threads, "Worker threads")->check(CLI::PositiveNumber);

  // report
  std::string report_eval, report_out;
  auto* report = app.add_subcommand("report", "Compute BWT/FWT and write report.json and dice_matrix.csv");
  report->add_option("--eval", report_eval, "Directory written by eval")->required()->check(CLI::ExistingDirectory);
  report->add_option("--out", report_out, "Output directory (default: the eval directory)");

  // infer
  std::string infer_ckpt, infer_image, infer_out, infer_domain = "auto", infer_rule = "min";
  std::size_t infer_samples = 10;
  std::uint64_t infer_seed = 42;
  auto* infer = app.add_subcommand("infer", "Segment one RTI image");
  infer->add_option("--checkpoint", infer_ckpt, "Checkpoint directory")->required()->check(CLI::ExistingDirectory);
  infer->add_option("--image", infer_image, "Input image (.rti)")->required()->check(CLI::ExistingFile);
  infer->add_option("--out", infer_out, "Output mask (.rti)")->required();
  infer->add_option("--domain", infer_domain, "auto, or the 1-based domain number");
  infer->add_option("--samples", infer_samples, "Stochastic passes per head")->check(CLI::PositiveNumber);
  infer->add_option("--seed", infer_seed, "Fire-mask seed");
  infer->add_option("--rule", infer_rule, "NQM selection rule")->check(CLI::IsMember({"min", "max"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*audit) {
      ncadapt_param_audit a{};
      check(ncadapt_param_audit_run(audit_arch.c_str(), &a));
      std::printf("%-20s %8s\n", "row", "params");
      std::printf("%-20s %8zu\n", "all", a.all);
      std::printf("%-20s %8zu\n", "ncadapt-trainable", a.ncadapt_trainable);
      std::printf("%-20s %8zu\n", "per-domain", a.per_domain);
      std::printf("%-20s %8zu\n", "fc", a.fc);
      std::printf("%-20s %8zu\n", "fh", a.fh);
      std::printf("%-20s %8zu\n", "fl", a.fl);
      std::printf("%-20s %8zu\n", "sa-total", a.sa_total);
    } else if (*gen) {
      auto c = make_config(gen_cfg);
      check(ncadapt_generate_data(c.get(), opt(gen_data)));
    } else if (*train || *adapt || *baseline) {
      auto c = make_config(train_cfg);
      char* summary = nullptr;
      if (*train)
        check(ncadapt_train_first(c.get(), opt(train_data), train_domain.c_str(), train_out.c_str(), &summary));
      else if (*adapt)
        check(ncadapt_adapt(c.get(), opt(train_data), train_domain.c_str(), train_from.c_str(), train_out.c_str(),
                            &summary));
      else
        check(ncadapt_train_baseline(c.get(), opt(train_data), train_domain.c_str(), train_out.c_str(), &summary));
      print_owned(summary);
    } else if (*eval) {
      auto c = make_config(eval_cfg);
      const auto stages = c_strings(eval_stages);
      const auto baselines = c_strings(eval_baselines);
      check(ncadapt_evaluate(c.get(), opt(eval_data), stages.data(), stages.size(), baselines.data(), baselines.size(),
                             eval_out.c_str(), eval_threads));
    } else if (*report) {
      char* text = nullptr;
      check(ncadapt_report(report_eval.c_str(), report_out.empty() ? report_eval.c_str() : report_out.c_str(), &text));
      std::printf("%s", text);
      ncadapt_string_free(text);
    } else if (*infer) {
      ncadapt_model* raw = nullptr;
      check(ncadapt_model_load(infer_ckpt.c_str(), &raw));
      ModelPtr model(raw);
      int domain = -1;
      if (infer_domain != "auto") {
        try {
          domain = std::stoi(infer_domain) - 1;
        } catch (const std::exception&) {
          domain = -2;
        }
        if (domain < 0) {
          std::fprintf(stderr, "ncadapt: error[usage]: --domain expects auto or a positive number\n");
          return 1;
        }
      }
      const std::size_t n = ncadapt_model_domain_count(model.get());
      std::vector<double> scores(n, 0.0);
      int chosen = -1;
      check(ncadapt_infer(model.get(), infer_image.c_str(), domain, infer_samples, infer_seed, infer_rule.c_str(),
                          infer_out.c_str(), &chosen, scores.data(), scores.size()));
      std::printf("domain %d (%s)\n", chosen + 1, ncadapt_model_domain_label(model.get(), chosen));
      if (domain < 0)
        for (std::size_t i = 0; i < n; ++i)
          std::printf("nqm %zu %s %.6f\n", i + 1, ncadapt_model_domain_label(model.get(), i), scores[i]);
    }
  } catch (const Failure& f) {
    return f.status == NCADAPT_ERR_INTERNAL ? 4 : static_cast<int>(f.status);
  }
  return 0;
}
