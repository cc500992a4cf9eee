#include "eqsim/io.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

namespace eqsim {

void atomic_write(const std::string& path, const std::string& content) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(target.parent_path(), ec);
  }
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + tmp.string());
    f << content;
    if (!f) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) {
    fs::remove(tmp);
    throw IoError("cannot rename into place: " + path);
  }
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string rx_csv(const TxFrame& tx, const RxFrame& rx, int n_os) {
  if (n_os != 2) throw IoError("rx CSV schema assumes 2 samples per symbol");
  std::ostringstream out;
  out << "idx,tx_symbol,rx_sample_even,rx_sample_odd\n";
  for (int k = 0; k < tx.symbols.size(); ++k) {
    out << k << ',' << format_double(tx.symbols[k]) << ','
        << format_double(rx.y[2 * k]) << ',' << format_double(rx.y[2 * k + 1])
        << '\n';
  }
  return out.str();
}

std::string trajectory_csv(const ConvergenceReport& report) {
  std::ostringstream out;
  out << "run_id,update_idx,time_ms,ber\n";
  for (const RunResult& run : report.runs)
    for (const TrajectoryPoint& p : run.trajectory)
      out << run.run_id << ',' << p.update_idx << ','
          << format_double(p.time_ms) << ',' << format_double(p.ber) << '\n';
  return out.str();
}

std::vector<TrajectoryRow> read_trajectory_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open trajectory CSV: " + path);
  std::string line;
  if (!std::getline(f, line) || line != "run_id,update_idx,time_ms,ber")
    throw IoError("bad trajectory CSV header in " + path);
  std::vector<TrajectoryRow> rows;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    TrajectoryRow row{};
    char comma;
    std::istringstream ls(line);
    ls >> row.run_id >> comma >> row.update_idx >> comma >> row.time_ms >>
        comma >> row.ber;
    if (!ls) throw IoError("bad trajectory CSV row: " + line);
    rows.push_back(row);
  }
  return rows;
}

namespace {

nlohmann::json config_json(const SystemConfig& cfg) {
  nlohmann::json j;
  j["p_i"] = cfg.p_i;
  j["p_t"] = cfg.p_t;
  j["f_clk"] = cfg.f_clk;
  j["n_runs"] = cfg.n_runs;
  j["max_updates"] = cfg.max_updates;
  j["eval_symbols"] = cfg.eval_symbols;
  j["fec_threshold"] = cfg.fec_threshold;
  j["v_p"] = cfg.v_p;
  j["eval_every"] = cfg.eval_every;
  j["line_rate_mode"] = cfg.line_rate_mode;
  j["train"] = {{"lr", cfg.train.lr}, {"seq_len", cfg.train.seq_len}};
  j["channel"] = {{"lambda", cfg.channel.lambda_m},
                  {"fiber_km", cfg.channel.fiber_km},
                  {"dcd", cfg.channel.dcd_ps_nm_km},
                  {"alpha_db_km", cfg.channel.alpha_db_km},
                  {"baud", cfg.channel.baud},
                  {"n_os", cfg.channel.n_os},
                  {"snr_db", cfg.channel.snr_db},
                  {"pam_order", cfg.channel.pam_order},
                  {"rolloff", cfg.channel.rolloff},
                  {"seed", cfg.channel.seed}};
  j["quant"] = {{"input_bits", cfg.quant.input_bits},
                {"input_frac", cfg.quant.input_frac},
                {"act_bits", cfg.quant.act_bits},
                {"act_frac", cfg.quant.act_frac},
                {"weight_bits", cfg.quant.weight_bits},
                {"weight_frac", cfg.quant.weight_frac},
                {"bias_bits", cfg.quant.bias_bits},
                {"bias_frac", cfg.quant.bias_frac},
                {"grad_bits", cfg.quant.grad_bits},
                {"grad_frac", cfg.quant.grad_frac}};
  return j;
}

}  // namespace

std::string summary_json(const ConvergenceReport& report) {
  nlohmann::json j;
  j["converged_fraction"] = report.converged_fraction;
  j["mean_t_conv_ms"] = report.mean_t_conv_ms
                            ? nlohmann::json(*report.mean_t_conv_ms)
                            : nlohmann::json();
  j["median_t_conv_ms"] = report.median_t_conv_ms
                              ? nlohmann::json(*report.median_t_conv_ms)
                              : nlohmann::json();
  nlohmann::json per_run = nlohmann::json::array();
  for (const RunResult& run : report.runs) {
    nlohmann::json r;
    r["run_id"] = run.run_id;
    r["t_conv_ms"] =
        run.t_conv_ms ? nlohmann::json(*run.t_conv_ms) : nlohmann::json();
    r["final_ber"] = run.trajectory.back().ber;
    per_run.push_back(r);
  }
  j["runs"] = per_run;
  j["config"] = config_json(report.config);
  return j.dump(2) + "\n";
}

std::string summary_json_from_rows(const std::vector<TrajectoryRow>& rows,
                                   double threshold) {
  std::map<int, std::vector<TrajectoryPoint>> by_run;
  for (const TrajectoryRow& r : rows)
    by_run[r.run_id].push_back({r.update_idx, r.time_ms, r.ber});

  std::vector<double> tconvs;
  nlohmann::json per_run = nlohmann::json::array();
  for (const auto& [run_id, traj] : by_run) {
    const auto t = sustained_crossing_ms(traj, threshold);
    if (t) tconvs.push_back(*t);
    nlohmann::json r;
    r["run_id"] = run_id;
    r["t_conv_ms"] = t ? nlohmann::json(*t) : nlohmann::json();
    r["final_ber"] = traj.back().ber;
    per_run.push_back(r);
  }

  nlohmann::json j;
  j["fec_threshold"] = threshold;
  j["converged_fraction"] =
      by_run.empty() ? 0.0
                     : static_cast<double>(tconvs.size()) / by_run.size();
  if (!tconvs.empty()) {
    double sum = 0.0;
    for (double t : tconvs) sum += t;
    j["mean_t_conv_ms"] = sum / tconvs.size();
    std::sort(tconvs.begin(), tconvs.end());
    j["median_t_conv_ms"] = tconvs[tconvs.size() / 2];
  } else {
    j["mean_t_conv_ms"] = nlohmann::json();
    j["median_t_conv_ms"] = nlohmann::json();
  }
  j["runs"] = per_run;
  return j.dump(2) + "\n";
}

std::string resources_csv(
    const std::vector<std::pair<int, ResourceEstimate>>& sweep) {
  std::ostringstream out;
  out << "p_i,dsp,lut_est\n";
  for (const auto& [p_i, e] : sweep)
    out << p_i << ',' << e.dsp_count << ',' << format_double(e.lut_estimate)
        << '\n';
  return out.str();
}

}  // namespace eqsim
