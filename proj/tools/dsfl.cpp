/*
 * Copyright 2026 The dsfl-sim Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// dsfl: command-line front end.
//   dsfl run <config> [--set k=v]... [--seed N] [--threads N] [--out DIR]
//   dsfl compare <config>... [--set k=v]... [--threads N] [--out DIR]
//   dsfl selftest

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "dsfl/errors.hpp"
#include "dsfl/runner.hpp"
#include "dsfl/selftest.hpp"

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;

int cmd_run(const std::string& path, std::vector<std::string> overrides,
            std::optional<std::uint64_t> seed, int threads,
            const std::string& out) {
  if (seed) overrides.push_back("seed=" + std::to_string(*seed));
  dsfl::RunConfig cfg = dsfl::load_config(path, overrides);
  if (!out.empty()) cfg.output_dir = out;
  if (cfg.output_dir.empty()) {
    throw dsfl::ConfigError("output_dir", "set it in the config or pass --out");
  }
  const auto result = dsfl::run(cfg, {.threads = threads});
  std::cerr << "top accuracy: "
            << (result.top_accuracy ? std::to_string(*result.top_accuracy)
                                    : std::string("-"))
            << ", metrics in " << cfg.output_dir << "\n";
  return 0;
}

int cmd_compare(const std::vector<std::string>& paths,
                const std::vector<std::string>& overrides, int threads,
                const std::string& out) {
  std::vector<dsfl::RunConfig> configs;
  for (const auto& p : paths) {
    dsfl::RunConfig cfg = dsfl::load_config(p, overrides);
    if (!out.empty()) {
      cfg.output_dir =
          (std::filesystem::path(out) / std::filesystem::path(p).stem()).string();
    }
    configs.push_back(std::move(cfg));
  }
  const auto table = dsfl::compare(configs, {.threads = threads});
  const std::string text = dsfl::to_text(table);
  std::cout << text;
  if (!out.empty()) {
    std::filesystem::create_directories(out);
    dsfl::detail::write_atomic(std::filesystem::path(out) / "comparison.csv",
                               dsfl::to_csv(table));
    dsfl::detail::write_atomic(std::filesystem::path(out) / "comparison.txt",
                               text);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DS-FL federated learning simulator"};
  app.require_subcommand(1);

  std::string config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  int threads = 1;
  std::string out;
  auto* run = app.add_subcommand("run", "run one experiment");
  run->add_option("config", config, "YAML run config")->required();
  run->add_option("--set", sets, "override, e.g. protocol.name=fl");
  run->add_option("--seed", seed, "run seed");
  run->add_option("--threads", threads, "client threads")
      ->check(CLI::PositiveNumber);
  run->add_option("--out", out, "output directory");

  std::vector<std::string> configs;
  auto* cmp = app.add_subcommand("compare", "run configs and tabulate costs");
  cmp->add_option("configs", configs, "YAML run configs")->required();
  cmp->add_option("--set", sets, "override applied to every config");
  cmp->add_option("--threads", threads, "client threads")
      ->check(CLI::PositiveNumber);
  cmp->add_option("--out", out, "directory for runs and comparison files");

  auto* self = app.add_subcommand("selftest", "gradient and invariant checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitConfig;
  }

  try {
    if (*run) return cmd_run(config, sets, seed, threads, out);
    if (*cmp) return cmd_compare(configs, sets, threads, out);
    if (*self) return dsfl::selftest(std::cout) == 0 ? 0 : kExitRuntime;
  } catch (const dsfl::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}
