// mixuplr: command-line front end for the experiment harness.

#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mixuplr/experiment.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

struct Options {
  std::string config;
  std::string out;
  std::vector<std::uint64_t> seeds;
  std::vector<double> eps;
  std::vector<double> zeta;
};

mixuplr::ExperimentConfig load(const Options& o) {
  auto cfg = mixuplr::load_experiment_config(o.config);
  if (!o.out.empty()) cfg.out_dir = o.out;
  if (!o.seeds.empty()) cfg.seeds = o.seeds;
  if (!o.eps.empty()) cfg.eps_list = o.eps;
  if (!o.zeta.empty()) cfg.zeta_list = o.zeta;
  for (double e : cfg.eps_list) {
    if (!(e >= 0.0)) throw mixuplr::ConfigError("--eps entries must be >= 0");
  }
  for (double z : cfg.zeta_list) {
    if (!(z >= 0.0)) throw mixuplr::ConfigError("--zeta entries must be >= 0");
  }
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mixup with adversarial Lipschitz regularization: training and analysis harness"};
  app.require_subcommand(1);
  Options opts;

  const std::vector<std::pair<std::string, std::string>> commands{
      {"train", "train one model per seed and summarize holdout error"},
      {"ablate-zeta", "sweep the regularizer weight zeta in mixup-lr mode"},
      {"attack", "FGSM sweep over saved checkpoints"},
      {"audit", "Lipschitz estimates and interpolation-bound audit of saved checkpoints"},
      {"plot", "decision grid CSV and SVG scatter for saved checkpoints"},
  };
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", opts.config, "config file")->required();
    sub->add_option("--out", opts.out, "output directory (overrides out_dir)");
    sub->add_option("--seeds", opts.seeds, "comma-separated seeds")->delimiter(',');
    sub->add_option("--eps", opts.eps, "comma-separated FGSM epsilons")->delimiter(',');
    sub->add_option("--zeta", opts.zeta, "comma-separated zeta values")->delimiter(',');
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    const auto cfg = load(opts);
    mixuplr::Json result;
    if (command == "train") result = mixuplr::cmd_train(cfg);
    else if (command == "ablate-zeta") result = mixuplr::cmd_ablate_zeta(cfg);
    else if (command == "attack") result = mixuplr::cmd_attack(cfg);
    else if (command == "audit") result = mixuplr::cmd_audit(cfg);
    else result = mixuplr::cmd_plot(cfg);
    std::cout << result.dump(2) << '\n';
  } catch (const mixuplr::ConfigError& e) {
    std::cerr << "mixuplr: config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "mixuplr: " << command << " failed: " << e.what() << '\n';
    return kExitRuntime;
  }
  return 0;
}
