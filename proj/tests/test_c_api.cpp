#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <string>

#include "ncadapt/ncadapt.h"

namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("ncadapt_capi_" + name);
  fs::remove_all(p);
  return p;
}

std::string take(char* s) {
  std::string out = s ? s : "";
  ncadapt_string_free(s);
  return out;
}

ncadapt_config* tiny_config() {
  ncadapt_config* c = nullptr;
  REQUIRE(ncadapt_config_default(&c) == NCADAPT_OK);
  const char* domains =
      R"([{"name":"d1","resolution":[16,16],"n_cases":6,"scale":0.6,"shift":0.1,"seed":1},
          {"name":"d2","resolution":[20,16],"n_cases":6,"scale":0.3,"shift":0.6,"seed":2}])";
  REQUIRE(ncadapt_config_set(c, "domains", domains) == NCADAPT_OK);
  REQUIRE(ncadapt_config_set(c, "train.epochs", "2") == NCADAPT_OK);
  REQUIRE(ncadapt_config_set(c, "inference.n_samples", "2") == NCADAPT_OK);
  REQUIRE(ncadapt_config_set(c, "arch.hidden", "8") == NCADAPT_OK);
  return c;
}

}  // namespace

TEST_CASE("param audit through the C API") {
  ncadapt_param_audit a{};
  REQUIRE(ncadapt_param_audit_run("default3d", &a) == NCADAPT_OK);
  CHECK(a.all == 12480);
  CHECK(a.ncadapt_trainable == 6336);
  CHECK(a.per_domain == 384);
  CHECK(a.fc == 5952);
  CHECK(a.fh == 3712);
  CHECK(a.fl == 8768);
  CHECK(a.sa_total == 12864);
  CHECK(ncadapt_param_audit_run("default4d", &a) == NCADAPT_ERR_USAGE);
  CHECK(std::string(ncadapt_last_error()).find("default4d") != std::string::npos);
  CHECK(ncadapt_param_audit_run(nullptr, &a) == NCADAPT_ERR_USAGE);
}

TEST_CASE("config handles") {
  ncadapt_config* c = nullptr;
  REQUIRE(ncadapt_config_default(&c) == NCADAPT_OK);
  char* h1 = nullptr;
  REQUIRE(ncadapt_config_hash(c, &h1) == NCADAPT_OK);
  CHECK(ncadapt_config_set(c, "train.epochs", "17") == NCADAPT_OK);
  CHECK(ncadapt_config_set(c, "policy", "fc") == NCADAPT_OK);
  CHECK(ncadapt_config_set(c, "train.warmup", "3") == NCADAPT_ERR_USAGE);
  CHECK(ncadapt_config_set(c, "nothing.here", "3") == NCADAPT_ERR_USAGE);
  CHECK(ncadapt_config_set(c, "policy", "frozen") == NCADAPT_ERR_USAGE);
  char* h2 = nullptr;
  REQUIRE(ncadapt_config_hash(c, &h2) == NCADAPT_OK);
  CHECK(take(h1) != take(h2));
  char* text = nullptr;
  REQUIRE(ncadapt_config_to_json(c, &text) == NCADAPT_OK);
  const std::string json = take(text);
  CHECK(json.find("\"epochs\": 17") != std::string::npos);
  CHECK(json.find("\"policy\": \"fc\"") != std::string::npos);
  ncadapt_config_free(c);
  CHECK(ncadapt_config_load("/nonexistent/config.json", &c) == NCADAPT_ERR_USAGE);
}

TEST_CASE("pipeline through the C API") {
  const auto root = temp_dir("pipeline");
  ncadapt_config* c = tiny_config();
  const std::string data = (root / "data").string();
  REQUIRE(ncadapt_generate_data(c, data.c_str()) == NCADAPT_OK);

  const std::string s1 = (root / "s1").string(), s2 = (root / "s2").string();
  const std::string b1 = (root / "b1").string(), b2 = (root / "b2").string();
  char* summary = nullptr;
  REQUIRE(ncadapt_train_first(c, data.c_str(), "d1", s1.c_str(), &summary) == NCADAPT_OK);
  CHECK(take(summary).find("\"stage\":1") != std::string::npos);
  CHECK(ncadapt_train_first(c, data.c_str(), "d1", s1.c_str(), nullptr) == NCADAPT_ERR_USAGE);
  REQUIRE(ncadapt_adapt(c, data.c_str(), "d2", s1.c_str(), s2.c_str(), nullptr) == NCADAPT_OK);
  REQUIRE(ncadapt_train_baseline(c, data.c_str(), "d1", b1.c_str(), nullptr) == NCADAPT_OK);
  REQUIRE(ncadapt_train_baseline(c, data.c_str(), "d2", b2.c_str(), nullptr) == NCADAPT_OK);
  CHECK(ncadapt_adapt(c, data.c_str(), "d9", s1.c_str(), (root / "s9").string().c_str(), nullptr) ==
        NCADAPT_ERR_DATA);

  const char* stages[] = {s1.c_str(), s2.c_str()};
  const char* bases[] = {b1.c_str(), b2.c_str()};
  const std::string ev = (root / "eval").string();
  REQUIRE(ncadapt_evaluate(c, data.c_str(), stages, 2, bases, 2, ev.c_str(), 2) == NCADAPT_OK);
  CHECK(ncadapt_evaluate(c, data.c_str(), stages + 1, 1, nullptr, 0, ev.c_str(), 1) == NCADAPT_ERR_USAGE);
  char* report = nullptr;
  REQUIRE(ncadapt_report(ev.c_str(), ev.c_str(), &report) == NCADAPT_OK);
  const std::string text = take(report);
  CHECK(text.find("\"bwt\": [") != std::string::npos);
  CHECK(fs::exists(root / "eval" / "dice_matrix.csv"));

  ncadapt_model* m = nullptr;
  REQUIRE(ncadapt_model_load(s2.c_str(), &m) == NCADAPT_OK);
  CHECK(ncadapt_model_domain_count(m) == 2);
  CHECK(std::string(ncadapt_model_domain_label(m, 1)) == "d2");
  CHECK(ncadapt_model_domain_label(m, 2) == nullptr);
  size_t n = 0;
  REQUIRE(ncadapt_model_param_count(m, NCADAPT_PARAMS_PER_DOMAIN, &n) == NCADAPT_OK);
  CHECK(n == 384);

  std::string img;
  for (const auto& e : fs::directory_iterator(root / "data" / "d2"))
    if (e.path().string().find("_img.rti") != std::string::npos) img = e.path().string();
  const std::string out = (root / "mask.rti").string();
  int chosen = -7;
  double scores[2] = {0, 0};
  REQUIRE(ncadapt_infer(m, img.c_str(), -1, 3, 1, "min", out.c_str(), &chosen, scores, 2) == NCADAPT_OK);
  CHECK((chosen == 0 || chosen == 1));
  CHECK(fs::exists(out));
  REQUIRE(ncadapt_infer(m, img.c_str(), 1, 2, 1, nullptr, out.c_str(), &chosen, nullptr, 0) == NCADAPT_OK);
  CHECK(chosen == 1);
  CHECK(ncadapt_infer(m, img.c_str(), 5, 2, 1, nullptr, out.c_str(), &chosen, nullptr, 0) == NCADAPT_ERR_USAGE);
  ncadapt_model_free(m);

  ncadapt_config_free(c);
  fs::remove_all(root);
}
