// Copyright (c) 2026 The probe-sim Authors
// SPDX-License-Identifier: Apache-2.0
//
// probe-cli: plan | simulate | train-predictor | sweep.
// Exit 0 only when every artifact is written and every feasibility
// certificate holds; 2 for usage and parse errors; 1 otherwise.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "probe/probe.h"

namespace fs = std::filesystem;

namespace {

constexpr int kExitFail = 1;
constexpr int kExitUsage = 2;

struct Args {
  std::string scenario;
  std::string mode;
  int steps = 0;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string config;
};

std::string sha256_hex(const std::string& data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("sha256 failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

std::optional<std::string> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return std::nullopt;
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// temp + rename in the target directory
void write_atomic(const fs::path& path, const std::string& data) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp.string());
    out.write(data.data(), std::streamsize(data.size()));
    out.flush();
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

int status_exit(probe_status st) {
  std::cerr << "error: " << probe_last_error() << "\n";
  return st == PROBE_ERR_PARSE ? kExitUsage : kExitFail;
}

std::string out_dir(const Args& a) {
  if (!a.out.empty()) return a.out;
  if (const char* env = std::getenv("PROBE_OUT_DIR"); env && *env) return env;
  return "probe_out";
}

int emit(const std::string& command, const Args& a, probe_result* r) {
  const fs::path dir = out_dir(a);
  nlohmann::ordered_json manifest;
  manifest["command"] = command;
  manifest["scenario"] = a.scenario;
  manifest["config"] = a.config;
  manifest["mode"] = a.mode;
  manifest["steps"] = a.steps;
  manifest["seed"] = a.seed ? nlohmann::ordered_json(*a.seed) : nlohmann::ordered_json(nullptr);
  manifest["out"] = dir.string();
  nlohmann::ordered_json artifacts = nlohmann::ordered_json::array();
  try {
    fs::create_directories(dir);
    for (std::size_t i = 0; i < probe_result_artifact_count(r); ++i) {
      std::size_t len = 0;
      const char* data = probe_result_artifact_data(r, i, &len);
      const std::string body(data, len);
      const std::string name = probe_result_artifact_name(r, i);
      write_atomic(dir / name, body);
      artifacts.push_back({{"file", name}, {"bytes", len}, {"sha256", sha256_hex(body)}});
    }
    manifest["artifacts"] = artifacts;
    manifest["feasible"] = probe_result_feasible(r) == 1;
    write_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    probe_result_free(r);
    return kExitFail;
  }
  std::cout << probe_result_summary(r);
  std::cout << "wrote " << artifacts.size() << " artifacts to " << dir.string() << "\n";
  const bool ok = probe_result_feasible(r) == 1;
  probe_result_free(r);
  return ok ? 0 : kExitFail;
}

// Loads the scenario and applies --seed. Returns an exit code on failure.
int load(const Args& a, probe_scenario** sc) {
  const auto text = read_file(a.scenario);
  if (!text) {
    std::cerr << "error: cannot read scenario '" << a.scenario << "'\n";
    return kExitUsage;
  }
  if (auto st = probe_scenario_parse(text->data(), text->size(), sc); st != PROBE_OK) return status_exit(st);
  if (a.seed) {
    if (auto st = probe_scenario_set_seed(*sc, *a.seed); st != PROBE_OK) {
      probe_scenario_free(*sc);
      return status_exit(st);
    }
  }
  return 0;
}

int run(const std::string& cmd, const Args& a) {
  probe_result* r = nullptr;
  probe_status st = PROBE_OK;
  if (cmd == "train-predictor") {
    std::optional<std::string> cfg;
    if (!a.config.empty()) {
      cfg = read_file(a.config);
      if (!cfg) {
        std::cerr << "error: cannot read config '" << a.config << "'\n";
        return kExitUsage;
      }
    }
    const std::uint64_t seed = a.seed.value_or(0);
    st = probe_train_predictor(cfg ? cfg->data() : nullptr, cfg ? cfg->size() : 0, a.seed ? &seed : nullptr, &r);
  } else {
    probe_scenario* sc = nullptr;
    if (int rc = load(a, &sc)) return rc;
    if (cmd == "plan")
      st = probe_plan(sc, &r);
    else if (cmd == "simulate")
      st = probe_simulate(sc, a.mode.empty() ? nullptr : a.mode.c_str(), a.steps, &r);
    else
      st = probe_sweep(sc, &r);
    probe_scenario_free(sc);
  }
  if (st != PROBE_OK) return status_exit(st);
  return emit(cmd, a, r);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"probe-cli: expert-parallel planner and pipeline simulator"};
  app.require_subcommand(1);
  Args a;
  std::uint64_t seed = 0;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--seed", seed, "Root seed; sub-seeds are derived per purpose");
    sub->add_option("--out", a.out, "Output directory (default $PROBE_OUT_DIR or ./probe_out)");
  };
  auto* plan = app.add_subcommand("plan", "Plan one routing, or every layer of a workload's first step");
  plan->add_option("--scenario", a.scenario, "Scenario JSON")->required();
  add_common(plan);
  auto* sim = app.add_subcommand("simulate", "Run the step simulator over a workload script");
  sim->add_option("--scenario", a.scenario, "Scenario JSON")->required();
  sim->add_option("--mode", a.mode, "Comma list of baseline,probe,one_shot_history");
  sim->add_option("--steps", a.steps, "Steps to run (default: the scenario's)")->check(CLI::NonNegativeNumber);
  add_common(sim);
  auto* sweep = app.add_subcommand("sweep", "Throughput over batch sizes");
  sweep->add_option("--scenario", a.scenario, "Scenario JSON")->required();
  add_common(sweep);
  auto* train = app.add_subcommand("train-predictor", "Train the lookahead gate on the synthetic task");
  train->add_option("--config", a.config, "Training config JSON (default config when omitted)");
  add_common(train);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }
  for (auto* sub : app.get_subcommands())
    if (sub->count("--seed")) a.seed = seed;
  return run(app.get_subcommands().front()->get_name(), a);
}
