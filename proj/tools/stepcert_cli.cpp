// Command line front end. Every subcommand builds one JSON request, hands it
// to the shared library, writes the response outputs to disk, and prints a
// short summary. All numerical work lives behind the flat interface.
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "stepcert/capi.h"

namespace {

using nlohmann::json;

json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open " + path);
  }
  json parsed;
  in >> parsed;
  return parsed;
}

std::vector<double> parse_theta_list(const std::string& text) {
  std::vector<double> values;
  std::stringstream stream(text);
  std::string item;
  while (std::getline(stream, item, ',')) {
    values.push_back(std::stod(item));
  }
  if (values.empty()) {
    throw std::runtime_error("empty step list");
  }
  return values;
}

bool passed(const CLI::App* sub, const std::string& name) {
  const CLI::Option* opt =
      const_cast<CLI::App*>(sub)->get_option_no_throw(name);
  return opt != nullptr && opt->count() > 0;
}

std::string resolve_out_dir(const std::string& flag, const json& config) {
  if (!flag.empty()) return flag;
  if (config.contains("output_dir")) {
    return config["output_dir"].get<std::string>();
  }
  if (const char* env = std::getenv("STEPCERT_OUT")) return env;
  return ".";
}

// Sends the request; on success writes outputs plus the manifest into
// out_dir and returns the parsed response. Returns nullopt on failure after
// printing the library's message.
int run_request(stepcert_ctx* ctx, const json& request,
                const std::string& out_dir, json& response_out) {
  char* raw = stepcert_run(ctx, request.dump().c_str());
  if (raw == nullptr) {
    std::cerr << "error: " << stepcert_last_message(ctx) << "\n";
    return 1;
  }
  response_out = json::parse(raw);
  stepcert_string_free(raw);

  std::filesystem::create_directories(out_dir);
  const std::filesystem::path base(out_dir);
  for (const auto& [name, content] : response_out["outputs"].items()) {
    std::ofstream out(base / name);
    out << content.get<std::string>();
    if (!out) {
      std::cerr << "error: cannot write " << (base / name).string() << "\n";
      return 1;
    }
  }
  std::ofstream manifest(base / "manifest.json");
  manifest << response_out["manifest"].dump(2) << "\n";
  return 0;
}

void print_one_schedule(const json& run) {
  const json& sched = run["schedule"];
  std::cout << "trained schedule (K=" << sched["K"].get<long>() << "):";
  for (const double v : sched["values"]) std::cout << " " << v;
  std::cout << "\n";
  if (run.contains("validation_score") && !run["validation_score"].is_null()) {
    std::cout << "validation risk: " << run["validation_score"].get<double>()
              << "\n";
  }
}

void print_schedule_line(const json& result) {
  if (result.contains("schedules")) {
    for (const json& run : result["schedules"]) print_one_schedule(run);
  } else {
    print_one_schedule(result);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"step-size certification toolkit"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_flag;
  app.add_option("--config", config_path, "JSON configuration file")
      ->check(CLI::ExistingFile);
  app.add_option("--out", out_flag, "output directory");

  std::string method, split = "train", schedule_path, theta_list;
  std::string family_name = "quadratic", certificate_flag, method_label;
  long horizon = 0, limit = 0, iterations = 0;
  double epsilon = -1.0, lr = 0.0;
  std::uint64_t seed = 0;
  std::vector<double> etas;
  bool per_horizon = false, quick = false, materialize = false;

  CLI::App* gen = app.add_subcommand("generate", "sample a dataset");
  gen->add_option("--seed", seed, "sampling seed");
  gen->add_flag("--materialize", materialize, "write the full dataset");

  CLI::App* train = app.add_subcommand("train", "train a step schedule");
  train->add_option("--method", method, "dr-l2o | l2o | opt-pep");
  train->add_option("--K", horizon, "horizon");
  train->add_option("--epsilon", epsilon, "ball radius");
  train->add_option("--lr", lr, "peak learning rate");
  train->add_option("--iters", iterations, "training iterations");
  train->add_option("--seed", seed, "training seed");
  train->add_flag("--per-horizon", per_horizon,
                  "train one schedule per horizon up to K");

  CLI::App* sweep = app.add_subcommand(
      "sweep", "cross-validate over the hyperparameter grid");
  sweep->add_option("--method", method, "dr-l2o | l2o | opt-pep");
  sweep->add_option("--K", horizon, "horizon");
  sweep->add_option("--iters", iterations, "training iterations per cell");
  sweep->add_option("--seed", seed, "training seed");

  CLI::App* certify = app.add_subcommand(
      "certify", "robust risk certificate for a schedule");
  certify->add_option("--schedule", schedule_path, "trained schedule JSON")
      ->check(CLI::ExistingFile);
  certify->add_option("--theta", theta_list, "inline step list, e.g. 0.1,0.2");
  certify->add_option("--epsilon", epsilon, "ball radius");
  certify->add_option("--split", split, "dataset split to anchor on");
  certify->add_option("--limit", limit, "use only the first n instances");

  CLI::App* evaluate = app.add_subcommand(
      "evaluate", "per-instance losses on the held-out splits");
  evaluate->add_option("--schedule", schedule_path, "trained schedule JSON")
      ->check(CLI::ExistingFile);
  evaluate->add_option("--theta", theta_list, "inline step list");
  evaluate->add_option("--eta", etas, "solve tolerances");
  evaluate->add_option("--certificate", certificate_flag,
                       "certificate value or \"pep\"");
  evaluate->add_option("--method", method_label, "method label for the rows");

  CLI::App* check = app.add_subcommand(
      "check", "internal consistency battery");
  check->add_option("--family", family_name, "quadratic | ssc | lasso | tv");
  check->add_flag("--quick", quick, "small sizes, skip the slow checks");

  // lets --config / --out appear after the subcommand name
  for (CLI::App* sub : app.get_subcommands({})) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    json config = json::object();
    if (!config_path.empty()) config = load_json_file(config_path);

    CLI::App* sub = app.get_subcommands().front();
    const std::string name = sub->get_name();

    if (name == "generate") {
      if (passed(sub, "--seed")) config["dataset"]["seed"] = seed;
      if (materialize) config["materialize"] = true;
    } else if (name == "train" || name == "sweep") {
      if (passed(sub, "--method")) config["method"] = method;
      if (passed(sub, "--K")) config["K"] = horizon;
      if (passed(sub, "--epsilon")) config["train"]["epsilon"] = epsilon;
      if (passed(sub, "--lr")) config["train"]["lr_max"] = lr;
      if (passed(sub, "--iters")) {
        config["train"]["total_iterations"] = iterations;
      }
      if (passed(sub, "--seed")) config["train"]["seed"] = seed;
      if (per_horizon) config["train"]["per_horizon"] = true;
    } else if (name == "certify" || name == "evaluate") {
      if (!schedule_path.empty()) {
        config["schedule"] = load_json_file(schedule_path);
      }
      if (!theta_list.empty()) {
        config["schedule"] = {{"values", parse_theta_list(theta_list)}};
      }
      if (passed(sub, "--epsilon")) config["epsilon"] = epsilon;
      if (passed(sub, "--split")) config["split"] = split;
      if (passed(sub, "--limit")) config["limit"] = limit;
      if (!etas.empty()) config["etas"] = etas;
      if (passed(sub, "--certificate")) {
        if (certificate_flag == "pep") {
          config["certificate"] = "pep";
        } else {
          config["certificate"] = std::stod(certificate_flag);
        }
      }
      if (passed(sub, "--method")) config["method"] = method_label;
    } else if (name == "check") {
      config["family"] = family_name;
      if (quick) config["quick"] = true;
    }

    const std::string out_dir = resolve_out_dir(out_flag, config);
    const json request = {{"command", name}, {"config", config}};

    stepcert_ctx* ctx = stepcert_ctx_new();
    if (ctx == nullptr) {
      std::cerr << "error: cannot allocate context\n";
      return 1;
    }
    json response;
    const int status = run_request(ctx, request, out_dir, response);
    stepcert_ctx_free(ctx);
    if (status != 0) return status;
    const json& result = response["result"];

    if (name == "generate") {
      std::cout << "sampled dataset: " << result["sizes"].dump() << "\n";
    } else if (name == "train" || name == "sweep") {
      print_schedule_line(result);
      if (name == "sweep") {
        std::cout << "selected cell: " << result["selected"].dump() << "\n";
      }
    } else if (name == "certify") {
      const double risk = result["risk"].get<double>();
      const double eps = result["epsilon"].get<double>();
      if (eps == 0.0) {
        std::cout << "empirical mean loss: " << risk << "\n";
      } else {
        std::cout << "robust risk (epsilon=" << eps << "): " << risk << "\n";
      }
    } else if (name == "evaluate") {
      std::cout << response["outputs"]["summary.csv"].get<std::string>();
    } else if (name == "check") {
      for (const json& entry : result["checks"]) {
        const bool pass = entry["pass"].get<bool>();
        std::cout << (pass ? "[ok]   " : "[FAIL] ")
                  << entry["name"].get<std::string>();
        if (!pass && entry.contains("detail")) {
          std::cout << "  " << entry["detail"].get<std::string>();
        }
        std::cout << "\n";
      }
      if (!result["all_pass"].get<bool>()) return 1;
    }
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
