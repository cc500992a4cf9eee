// Command-line front end: channel simulation, convergence experiments,
// packed-multiplier verification, resource sweeps and trajectory
// summaries. Set EQSIM_LOG=1 for progress output on stderr.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "eqsim/config.hpp"
#include "eqsim/io.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitMismatch = 1;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitConstraint = 4;

bool verbose() {
  const char* v = std::getenv("EQSIM_LOG");
  return v != nullptr && std::string(v) != "0" && std::string(v) != "";
}

void log_line(const std::string& msg) {
  if (verbose()) std::cerr << "[eqsim] " << msg << '\n';
}

struct GlobalOpts {
  std::optional<uint64_t> seed;
  std::optional<int> threads;
  std::string out;
};

eqsim::SystemConfig load_config_or_exit(const std::string& path,
                                        const GlobalOpts& g) {
  eqsim::SystemConfig cfg = eqsim::load_system_config(path);
  if (g.seed) cfg.channel.seed = *g.seed;
  if (g.threads) cfg.threads = *g.threads;
  return cfg;
}

int cmd_sim_channel(const std::string& config_path, int symbols,
                    const GlobalOpts& g) {
  eqsim::SystemConfig cfg = load_config_or_exit(config_path, g);
  eqsim::Philox rng(cfg.channel.seed, 0);
  const auto [tx, rx] =
      eqsim::simulate(symbols, cfg.channel, rng, cfg.quant.input_fmt());
  const std::string out = g.out.empty() ? "rx.csv" : g.out;
  eqsim::atomic_write(out, eqsim::rx_csv(tx, rx, cfg.channel.n_os));
  log_line("wrote " + out);
  return kExitOk;
}

int cmd_train(const std::string& config_path, std::optional<int> runs,
              const std::string& save_model, const GlobalOpts& g) {
  eqsim::SystemConfig cfg = load_config_or_exit(config_path, g);
  if (runs) cfg.n_runs = *runs;
  cfg.validate();

  log_line("running " + std::to_string(cfg.n_runs) + " seeds, " +
           std::to_string(cfg.max_updates) + " updates each");
  const eqsim::ConvergenceReport report = eqsim::run_experiment(cfg);

  const std::string dir = g.out.empty() ? "." : g.out;
  eqsim::atomic_write(dir + "/trajectory.csv", eqsim::trajectory_csv(report));
  eqsim::atomic_write(dir + "/summary.json", eqsim::summary_json(report));
  log_line("converged fraction " +
           eqsim::format_double(report.converged_fraction));

  if (!save_model.empty()) {
    // Deterministic re-run of seed 0's model for checkpointing.
    eqsim::Philox init_rng(cfg.channel.seed ^ 0x9E3779B97F4A7C15ULL, 0);
    eqsim::CnnModel model =
        eqsim::make_equalizer_model(cfg.quant, true, init_rng);
    eqsim::save_model(model, save_model);
  }
  return kExitOk;
}

int cmd_pack_verify(int d, int w, uint64_t samples, const GlobalOpts& g) {
  const eqsim::PackedMulSpec spec{d, w};
  const auto violations =
      eqsim::check_mapping_constraints(spec, eqsim::OperandTraits{});
  if (!violations.empty()) {
    std::cout << "constraint violations for d=" << d << " w=" << w << ":\n";
    for (const auto& v : violations) std::cout << "  " << v.detail << '\n';
    return kExitConstraint;
  }

  const auto res =
      eqsim::verify_packed_mul(spec, samples, g.seed.value_or(1));
  std::cout << "tested " << res.tested << (res.exhaustive ? " (exhaustive)" : " (random)")
            << " triples at d=" << d << " w=" << w << ": " << res.mismatches
            << " mismatches\n";
  if (res.mismatches > 0) {
    std::cout << "first counterexample: D1=" << res.d1 << " D2=" << res.d2
              << " W=" << res.weight << " got (" << res.got_r1 << ", "
              << res.got_r2 << ") want (" << res.want_r1 << ", " << res.want_r2
              << ")\n";
    return kExitMismatch;
  }
  return kExitOk;
}

int cmd_resources(const std::string& arch_str, int pi_min, int pi_max, int p_t,
                  const GlobalOpts& g) {
  const auto arch = eqsim::parse_arch(arch_str);
  if (!arch) {
    std::cerr << "unknown architecture: " << arch_str << '\n';
    return kExitConfig;
  }
  if (pi_min > pi_max || pi_min < 0) {
    std::cerr << "empty instance range\n";
    return kExitConfig;
  }
  std::vector<std::pair<int, eqsim::ResourceEstimate>> sweep;
  for (int p_i = pi_min; p_i <= pi_max; ++p_i)
    sweep.emplace_back(p_i, eqsim::estimate_resources(*arch, p_i, p_t));
  const std::string out = g.out.empty() ? arch_str + std::string("_resources.csv") : g.out;
  eqsim::atomic_write(out, eqsim::resources_csv(sweep));
  log_line("wrote " + out);
  return kExitOk;
}

int cmd_report(const std::string& traj_path, double threshold,
               const GlobalOpts& g) {
  const auto rows = eqsim::read_trajectory_csv(traj_path);
  const std::string json = eqsim::summary_json_from_rows(rows, threshold);
  if (g.out.empty()) {
    std::cout << json;
  } else {
    eqsim::atomic_write(g.out, json);
    log_line("wrote " + g.out);
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fixed-point CNN equalizer simulator"};
  app.require_subcommand(1);

  GlobalOpts g;
  uint64_t seed_opt = 0;
  int threads_opt = 0;
  auto* seed_flag =
      app.add_option("--seed", seed_opt, "override the config seed");
  auto* threads_flag =
      app.add_option("--threads", threads_opt, "worker threads for runs");
  app.add_option("--out", g.out, "output file or directory");

  auto* sim = app.add_subcommand("sim-channel", "simulate the fiber link");
  std::string sim_config;
  int sim_symbols = 4096;
  sim->add_option("--config", sim_config, "run configuration")->required();
  sim->add_option("--symbols", sim_symbols, "symbols to simulate");

  auto* train = app.add_subcommand("train", "run a convergence experiment");
  std::string train_config, save_model;
  int train_runs = -1;
  train->add_option("--config", train_config, "run configuration")->required();
  train->add_option("--runs", train_runs, "override the number of seeds");
  train->add_option("--save-model", save_model, "write a model checkpoint");

  auto* pack = app.add_subcommand("pack-verify",
                                  "verify the packed-multiplier datapath");
  int pack_d = 10, pack_w = 6;
  uint64_t pack_samples = 1000000;
  pack->add_option("--d", pack_d, "data operand width");
  pack->add_option("--w", pack_w, "weight operand width");
  pack->add_option("--samples", pack_samples, "random samples when too wide");

  auto* res = app.add_subcommand("resources", "sweep the resource model");
  std::string res_arch = "conv_map";
  int pi_min = 1, pi_max = 64, res_pt = 0;
  res->add_option("--arch", res_arch, "conv_def | conv_inst | conv_map");
  res->add_option("--pi-min", pi_min, "first inference parallelism");
  res->add_option("--pi-max", pi_max, "last inference parallelism");
  res->add_option("--pt", res_pt, "training instances");

  auto* rep = app.add_subcommand("report", "summarize a trajectory CSV");
  std::string rep_traj;
  double rep_threshold = 2.7e-2;
  rep->add_option("--traj", rep_traj, "trajectory CSV")->required();
  rep->add_option("--threshold", rep_threshold, "BER threshold");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitConfig;
  }

  if (*seed_flag) g.seed = seed_opt;
  if (*threads_flag) g.threads = threads_opt;

  try {
    if (*sim) return cmd_sim_channel(sim_config, sim_symbols, g);
    if (*train)
      return cmd_train(train_config,
                       train_runs > 0 ? std::optional<int>(train_runs)
                                      : std::nullopt,
                       save_model, g);
    if (*pack) return cmd_pack_verify(pack_d, pack_w, pack_samples, g);
    if (*res) return cmd_resources(res_arch, pi_min, pi_max, res_pt, g);
    if (*rep) return cmd_report(rep_traj, rep_threshold, g);
  } catch (const eqsim::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const eqsim::IoError& e) {
    std::cerr << "io error: " << e.what() << '\n';
    return kExitIo;
  } catch (const eqsim::SpecError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitIo;
  }
  return kExitOk;
}
