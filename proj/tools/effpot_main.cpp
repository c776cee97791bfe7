#include <optional>
#include <string>

#include "CLI11.hpp"

#include "effpot/pipeline.hpp"

int main(int argc, char** argv) {
  CLI::App app{"effpot: effective potential construction from large-step damped dynamics"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  int jobs = 0;
  bool out_set = false, seed_set = false, jobs_set = false;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "path to the JSON run configuration")->required();
    cmd->add_option("--out", out_dir, "output directory (overrides config out_dir)")
        ->each([&](const std::string&) { out_set = true; });
    cmd->add_option("--seed", seed, "seed override")->each([&](const std::string&) {
      seed_set = true;
    });
    cmd->add_option("--jobs", jobs, "worker count (default: EFFPOT_JOBS or hardware)")
        ->each([&](const std::string&) { jobs_set = true; });
  };

  CLI::App* c_cov = app.add_subcommand("estimate-cov", "estimate the effective noise covariance");
  CLI::App* c_learn = app.add_subcommand("learn", "learn the effective potential at one step size");
  CLI::App* c_scan = app.add_subcommand("scale-scan", "normality scan over decreasing step sizes");
  CLI::App* c_cmp = app.add_subcommand("surrogate-compare", "compare surrogate and full dynamics");
  CLI::App* c_grad = app.add_subcommand("gradient-check", "check analytic gradients against finite differences");
  for (CLI::App* c : {c_cov, c_learn, c_scan, c_cmp, c_grad}) add_common(c);

  CLI11_PARSE(app, argc, argv);

  std::string command;
  if (c_cov->parsed()) command = "estimate-cov";
  if (c_learn->parsed()) command = "learn";
  if (c_scan->parsed()) command = "scale-scan";
  if (c_cmp->parsed()) command = "surrogate-compare";
  if (c_grad->parsed()) command = "gradient-check";

  return effpot::run_command(
      command, config_path, out_set ? std::optional<std::string>(out_dir) : std::nullopt,
      seed_set ? std::optional<std::uint64_t>(seed) : std::nullopt,
      jobs_set ? std::optional<int>(jobs) : std::nullopt);
}
