#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <string>

#include <json.hpp>

#include "stepcert/capi.h"

using nlohmann::json;

namespace {

// Runs a request and hands back the parsed response, freeing the C string.
json run_ok(stepcert_ctx* ctx, const json& request) {
  char* raw = stepcert_run(ctx, request.dump().c_str());
  REQUIRE(raw != nullptr);
  REQUIRE(stepcert_last_status(ctx) == STEPCERT_OK);
  const json response = json::parse(raw);
  stepcert_string_free(raw);
  return response;
}

json tiny_quadratic_dataset() {
  return {{"kind", "quadratic"},
          {"d", 2},
          {"mu", 1.0},
          {"L", 10.0},
          {"R", 1.0},
          {"splits", {{"train", 2}, {"test", 2}}},
          {"seed", 7}};
}

}  // namespace

TEST_CASE("the library reports its version through the flat interface") {
  const char* version = stepcert_version_string();
  REQUIRE(version != nullptr);
  CHECK(std::string(version) == "0.1.0");
}

TEST_CASE("context lifecycle and argument guards") {
  CHECK(stepcert_last_status(nullptr) == STEPCERT_ERR_INVALID_ARGUMENT);
  CHECK(std::string(stepcert_last_message(nullptr)) == "null context");
  CHECK(stepcert_run(nullptr, "{}") == nullptr);

  stepcert_ctx* ctx = stepcert_ctx_new();
  REQUIRE(ctx != nullptr);
  CHECK(stepcert_last_status(ctx) == STEPCERT_OK);

  CHECK(stepcert_run(ctx, nullptr) == nullptr);
  CHECK(stepcert_last_status(ctx) == STEPCERT_ERR_INVALID_ARGUMENT);
  CHECK(std::string(stepcert_last_message(ctx)) == "null request");

  stepcert_string_free(nullptr);  // must be a no-op
  stepcert_ctx_free(ctx);
  stepcert_ctx_free(nullptr);
}

TEST_CASE("malformed and unknown requests map to distinct statuses") {
  stepcert_ctx* ctx = stepcert_ctx_new();
  REQUIRE(ctx != nullptr);

  CHECK(stepcert_run(ctx, "this is not json") == nullptr);
  CHECK(stepcert_last_status(ctx) == STEPCERT_ERR_PARSE);
  CHECK(std::strlen(stepcert_last_message(ctx)) > 0);

  CHECK(stepcert_run(ctx, "{\"command\":\"frobnicate\"}") == nullptr);
  CHECK(stepcert_last_status(ctx) == STEPCERT_ERR_INVALID_ARGUMENT);
  const std::string message = stepcert_last_message(ctx);
  CHECK(message.find("frobnicate") != std::string::npos);

  CHECK(stepcert_run(ctx, "{}") == nullptr);
  CHECK(stepcert_last_status(ctx) == STEPCERT_ERR_INVALID_ARGUMENT);

  stepcert_ctx_free(ctx);
}

TEST_CASE("a failed call leaves its message until the next call clears it") {
  stepcert_ctx* ctx = stepcert_ctx_new();
  REQUIRE(ctx != nullptr);

  stepcert_run(ctx, "broken");
  const std::string kept = stepcert_last_message(ctx);
  CHECK(!kept.empty());
  CHECK(std::string(stepcert_last_message(ctx)) == kept);

  const json request = {{"command", "generate"},
                        {"config", {{"dataset", tiny_quadratic_dataset()}}}};
  run_ok(ctx, request);
  CHECK(std::strlen(stepcert_last_message(ctx)) == 0);

  stepcert_ctx_free(ctx);
}

TEST_CASE("generate reports sizes and can materialize the dataset") {
  stepcert_ctx* ctx = stepcert_ctx_new();
  REQUIRE(ctx != nullptr);

  json config = {{"dataset", tiny_quadratic_dataset()},
                 {"materialize", true}};
  const json response =
      run_ok(ctx, json{{"command", "generate"}, {"config", config}});

  CHECK(response["command"] == "generate");
  CHECK(response["result"]["sizes"]["train"] == 2);
  CHECK(response["result"]["sizes"]["test"] == 2);
  CHECK(response["result"]["derived_family"]["class"] == "quadratic");
  CHECK(response["result"]["derived_family"]["L"] == doctest::Approx(10.0));
  CHECK(response["manifest"]["subcommand"] == "generate");
  CHECK(response["manifest"]["code_version"] == "0.1.0");

  const json dataset = json::parse(
      response["outputs"]["dataset.json"].get<std::string>());
  CHECK(dataset["train"].size() == 2);
  CHECK(dataset["train"][0]["Q"].size() == 2);

  stepcert_ctx_free(ctx);
}

TEST_CASE("certify at radius zero returns the empirical mean") {
  stepcert_ctx* ctx = stepcert_ctx_new();
  REQUIRE(ctx != nullptr);

  json config = {{"dataset", tiny_quadratic_dataset()},
                 {"schedule", {{"kind", "gd"}, {"values", {0.1}}}},
                 {"epsilon", 0.0},
                 {"with_pep", false},
                 {"split", "train"}};
  const json response =
      run_ok(ctx, json{{"command", "certify"}, {"config", config}});

  const json& result = response["result"];
  const double risk = result["risk"].get<double>();
  const double empirical = result["sandwich"]["empirical"].get<double>();
  CHECK(risk == doctest::Approx(empirical).epsilon(1e-12));
  CHECK(result["N"] == 2);
  CHECK(response["outputs"].contains("certificate.json"));

  stepcert_ctx_free(ctx);
}

TEST_CASE("evaluate emits per-instance and summary tables") {
  stepcert_ctx* ctx = stepcert_ctx_new();
  REQUIRE(ctx != nullptr);

  json config = {{"dataset", tiny_quadratic_dataset()},
                 {"schedule", {{"values", {0.15, 0.15}}}},
                 {"etas", {0.5}},
                 {"method", "fixed"}};
  const json response =
      run_ok(ctx, json{{"command", "evaluate"}, {"config", config}});

  const std::string report =
      response["outputs"]["report.csv"].get<std::string>();
  CHECK(report.rfind("instance_id,split,method,K,loss,f_star,diverged",
                     0) == 0);
  CHECK(response["outputs"].contains("summary.csv"));
  CHECK(response["result"]["splits"].size() == 1);  // test split only
  CHECK(response["result"]["rows"].size() == 2);
  CHECK(response["result"]["K"] == 2);

  stepcert_ctx_free(ctx);
}

TEST_CASE("the quick quadratic check battery passes end to end") {
  stepcert_ctx* ctx = stepcert_ctx_new();
  REQUIRE(ctx != nullptr);

  json config = {{"family", "quadratic"}, {"quick", true}};
  const json response =
      run_ok(ctx, json{{"command", "check"}, {"config", config}});

  CHECK(response["result"]["all_pass"] == true);
  const json& checks = response["result"]["checks"];
  CHECK(checks.size() >= 5);
  bool saw_interp = false;
  for (const json& check : checks) {
    CHECK(check["pass"] == true);
    if (check["name"] == "interpolation-soundness") saw_interp = true;
  }
  CHECK(saw_interp);

  stepcert_ctx_free(ctx);
}

TEST_CASE("training a tiny schedule round-trips through the json runner") {
  stepcert_ctx* ctx = stepcert_ctx_new();
  REQUIRE(ctx != nullptr);

  json config = {
      {"dataset", tiny_quadratic_dataset()},
      {"method", "l2o"},
      {"K", 1},
      {"train",
       {{"total_iterations", 5}, {"minibatch", 2}, {"checkpoint_every", 5}}}};
  const json response =
      run_ok(ctx, json{{"command", "train"}, {"config", config}});

  const json& result = response["result"];
  CHECK(result["method"] == "l2o");
  CHECK(result["schedule"]["values"].size() == 1);
  CHECK(result["curve"].size() == 5);
  const std::string curve = response["outputs"]["curve.csv"].get<std::string>();
  CHECK(curve.rfind("iteration,lr,", 0) == 0);

  stepcert_ctx_free(ctx);
}
