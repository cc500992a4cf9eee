#include "eqsim/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <thread>

namespace eqsim {

void SystemConfig::validate() const {
  if (p_i < 0 || p_t < 0) throw SpecError("instance counts must be >= 0");
  if (f_clk <= 0) throw SpecError("f_clk must be > 0");
  if (v_p < 1 || v_p % channel.n_os != 0)
    throw SpecError("v_p must be a positive multiple of n_os");
  if (fec_threshold <= 0.0 || fec_threshold >= 1.0)
    throw SpecError("fec_threshold must be in (0, 1)");
  if (n_runs < 1) throw SpecError("n_runs must be >= 1");
  if (max_updates < 1) throw SpecError("max_updates must be >= 1");
  if (eval_symbols < 8 || eval_symbols % 8 != 0)
    throw SpecError("eval_symbols must be a positive multiple of 8");
  if (eval_every < 1) throw SpecError("eval_every must be >= 1");
  if (threads < 1) throw SpecError("threads must be >= 1");
  if (line_rate_mode && p_i + p_t < 34)
    throw SpecError("line-rate mode needs p_i + p_t >= 34");
  train.validate();
  channel.validate();
  quant.validate();
}

StreamPartition partition_stream(const RxFrame& rx, const SystemConfig& cfg) {
  const int n_symbols = static_cast<int>(rx.truth.size());
  const int sl = cfg.train.seq_len;
  const int train_need = cfg.p_t * sl;
  if (n_symbols < train_need + 8)
    throw SpecError("frame too short for the requested training slices");

  StreamPartition part;
  part.train_slices.reserve(cfg.p_t);
  for (int t = 0; t < cfg.p_t; ++t)
    part.train_slices.push_back({t * sl, sl});
  part.eval = {train_need, n_symbols - train_need};
  return part;
}

FxpTensor slice_to_tensor(const RxFrame& rx, const SymbolSlice& slice,
                          int n_os, const FxpFormat& fmt) {
  const int n = slice.count * n_os;
  FxpTensor out({1, 1, n}, fmt);
  const int base = slice.begin * n_os;
  for (int i = 0; i < n; ++i)
    out.at(0, 0, i) = quantize(rx.y[base + i], fmt);
  return out;
}

std::vector<double> slice_truth(const RxFrame& rx, const SymbolSlice& slice) {
  std::vector<double> t(slice.count);
  for (int i = 0; i < slice.count; ++i) t[i] = rx.truth[slice.begin + i];
  return t;
}

namespace {

int nearest_level_index(double v, const Eigen::ArrayXd& alphabet) {
  int best = 0;
  double best_dist = std::abs(v - alphabet[0]);
  for (int m = 1; m < alphabet.size(); ++m) {
    const double dist = std::abs(v - alphabet[m]);
    if (dist < best_dist) {
      best = m;
      best_dist = dist;
    }
  }
  return best;
}

int gray_code(int idx) { return idx ^ (idx >> 1); }

}  // namespace

double ber(const std::vector<double>& decisions,
           const std::vector<double>& truth, int pam_order) {
  if (decisions.size() != truth.size() || decisions.empty())
    throw ShapeError("ber: length mismatch or empty input");
  const Eigen::ArrayXd alphabet = pam_alphabet(pam_order);
  const int bits_per_symbol = pam_order == 2 ? 1 : 2;
  long long errors = 0;
  for (size_t i = 0; i < decisions.size(); ++i) {
    const int a = nearest_level_index(decisions[i], alphabet);
    const int b = nearest_level_index(truth[i], alphabet);
    errors += __builtin_popcount(gray_code(a) ^ gray_code(b));
  }
  return static_cast<double>(errors) /
         (static_cast<double>(decisions.size()) * bits_per_symbol);
}

double model_time_ms(int updates, const SystemConfig& cfg) {
  const double symbol_rate =
      (static_cast<double>(cfg.v_p) / cfg.channel.n_os) * cfg.f_clk;
  return updates * cfg.train.seq_len / symbol_rate * 1e3;
}

std::optional<double> sustained_crossing_ms(
    const std::vector<TrajectoryPoint>& traj, double threshold) {
  std::optional<double> t_conv;
  for (auto it = traj.rbegin(); it != traj.rend(); ++it) {
    if (it->ber > threshold) break;
    t_conv = it->time_ms;
  }
  return t_conv;
}

namespace {

std::vector<double> tensor_values(const FxpTensor& t) {
  std::vector<double> v(t.size());
  for (int64_t i = 0; i < t.size(); ++i)
    v[i] = value_of(t.data()[i], t.format());
  return v;
}

RunResult run_single(const SystemConfig& cfg, int run_id) {
  const uint64_t seed = cfg.channel.seed;
  const FxpFormat input_fmt = cfg.quant.input_fmt();

  Philox init_rng(seed ^ 0x9E3779B97F4A7C15ULL, run_id);
  CnnModel model = make_equalizer_model(cfg.quant, true, init_rng);

  RunResult res;
  res.run_id = run_id;

  const int frame_symbols = cfg.p_t * cfg.train.seq_len + cfg.eval_symbols;

  auto eval_ber = [&](const RxFrame& rx, const SymbolSlice& slice) {
    const FxpTensor y = slice_to_tensor(rx, slice, cfg.channel.n_os, input_fmt);
    const FxpTensor z = forward(model, y);
    const auto decisions = decide(tensor_values(z), cfg.channel.pam_order);
    return ber(decisions, slice_truth(rx, slice), cfg.channel.pam_order);
  };

  {  // untrained operating point
    Philox rng(seed, (uint64_t(run_id) << 32) | 0xFFFFFFFFULL);
    const auto [tx, rx] = simulate(cfg.eval_symbols, cfg.channel, rng, input_fmt);
    res.trajectory.push_back(
        {0, 0.0, eval_ber(rx, {0, cfg.eval_symbols})});
  }

  for (int round = 0; round < cfg.max_updates; ++round) {
    Philox rng(seed, (uint64_t(run_id) << 32) | uint64_t(round));
    const auto [tx, rx] = simulate(frame_symbols, cfg.channel, rng, input_fmt);
    const StreamPartition part = partition_stream(rx, cfg);

    const int group_symbols = cfg.v_p / cfg.channel.n_os;
    std::vector<GradSet> grads;
    grads.reserve(cfg.p_t);
    for (const SymbolSlice& slice : part.train_slices) {
      const FxpTensor y =
          slice_to_tensor(rx, slice, cfg.channel.n_os, input_fmt);
      const ForwardCache cache = forward_with_cache(model, y);
      const LossResult loss = streamed_mse_loss(
          cache.z, slice_truth(rx, slice), group_symbols, model.grad_fmt);
      grads.push_back(backward(model, cache, loss.dz));
    }
    parallel_round_update(model, grads, cfg.train.lr);

    const int updates_done = round + 1;
    if (updates_done % cfg.eval_every == 0 || updates_done == cfg.max_updates) {
      res.trajectory.push_back({updates_done, model_time_ms(updates_done, cfg),
                                eval_ber(rx, part.eval)});
    }
  }

  res.t_conv_ms = sustained_crossing_ms(res.trajectory, cfg.fec_threshold);
  return res;
}

}  // namespace

ConvergenceReport run_experiment(const SystemConfig& cfg) {
  cfg.validate();

  ConvergenceReport report;
  report.config = cfg;
  report.runs.resize(cfg.n_runs);

  if (cfg.threads <= 1) {
    for (int r = 0; r < cfg.n_runs; ++r) report.runs[r] = run_single(cfg, r);
  } else {
    std::vector<std::thread> pool;
    std::atomic<int> next{0};
    const int workers = std::min(cfg.threads, cfg.n_runs);
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (int r = next.fetch_add(1); r < cfg.n_runs; r = next.fetch_add(1))
          report.runs[r] = run_single(cfg, r);
      });
    }
    for (auto& t : pool) t.join();
  }

  // Mean trajectory over matched update indices (all runs share the
  // evaluation schedule).
  const size_t n_points = report.runs.front().trajectory.size();
  report.mean_trajectory.resize(n_points);
  for (size_t p = 0; p < n_points; ++p) {
    double acc = 0.0;
    for (const RunResult& run : report.runs) acc += run.trajectory[p].ber;
    report.mean_trajectory[p] = report.runs.front().trajectory[p];
    report.mean_trajectory[p].ber = acc / report.runs.size();
  }

  std::vector<double> tconvs;
  for (const RunResult& run : report.runs)
    if (run.t_conv_ms) tconvs.push_back(*run.t_conv_ms);
  report.converged_fraction =
      static_cast<double>(tconvs.size()) / report.runs.size();
  if (!tconvs.empty()) {
    double sum = 0.0;
    for (double t : tconvs) sum += t;
    report.mean_t_conv_ms = sum / tconvs.size();
    std::sort(tconvs.begin(), tconvs.end());
    report.median_t_conv_ms = tconvs[tconvs.size() / 2];
  }
  return report;
}

double estimate_throughput(const SystemConfig& cfg) {
  return (cfg.p_i + cfg.p_t) *
         (static_cast<double>(cfg.v_p) / cfg.channel.n_os) * cfg.f_clk;
}

std::pair<long long, long long> count_layer_multipliers(
    const QuantConfig& quant, int v_p) {
  Philox rng(0);
  const CnnModel model = make_equalizer_model(quant, false, rng);

  auto count_for = [&](int s_in) {
    FxpTensor x({1, 1, s_in}, quant.input_fmt());
    MultiplyStats s1;
    const FxpTensor a1 = batch_parallel_forward(
        x, model.layer1, model.w1, model.b1, model.bias_fmt, false, &s1);
    MultiplyStats s2;
    batch_parallel_forward(a1, model.layer2, model.w2, model.b2, model.bias_fmt,
                           false, &s2);
    return std::pair<int64_t, int64_t>{s1.scalar, s2.scalar};
  };

  const int s = 20 * v_p;  // window; doubled window cancels edge clipping
  const auto [a1, a2] = count_for(s);
  const auto [b1, b2] = count_for(2 * s);
  const long long cycles = s / v_p;
  return {(b1 - a1) / cycles, (b2 - a2) / cycles};
}

double estimate_gops(const SystemConfig& cfg) {
  const auto [m1, m2] = count_layer_multipliers(cfg.quant, cfg.v_p);
  // Multiply and accumulate counted separately, normalized per
  // instance-cycle; backward costs twice the forward.
  const double op_fw = 2.0 * static_cast<double>(m1 + m2) / cfg.v_p;
  const double op_bw = 2.0 * op_fw;
  return (op_fw * cfg.p_i + op_bw * cfg.p_t) * cfg.f_clk / 1e9;
}

const char* arch_name(ConvArch arch) {
  switch (arch) {
    case ConvArch::Def: return "conv_def";
    case ConvArch::Inst: return "conv_inst";
    case ConvArch::Map: return "conv_map";
  }
  return "?";
}

std::optional<ConvArch> parse_arch(const std::string& name) {
  if (name == "conv_def") return ConvArch::Def;
  if (name == "conv_inst") return ConvArch::Inst;
  if (name == "conv_map") return ConvArch::Map;
  return std::nullopt;
}

ResourceEstimate estimate_resources(ConvArch arch, int p_i, int p_t,
                                    const QuantConfig& quant, int v_p) {
  if (p_i < 0 || p_t < 0) throw SpecError("instance counts must be >= 0");
  const auto [m1, m2] = count_layer_multipliers(quant, v_p);

  ResourceEstimate est;
  est.arch = arch;
  est.m1 = m1;
  est.m2 = m2;

  // Training modules carry forward plus a roughly 2x backward and do
  // not satisfy the packing constraints.
  const long long train_mults = 3 * (m1 + m2);
  const long long inference_mults =
      arch == ConvArch::Map ? m1 + (m2 + 1) / 2 : m1 + m2;
  est.dsp_count = static_cast<long long>(p_i) * inference_mults +
                  static_cast<long long>(p_t) * train_mults;

  // Coarse affine LUT model with a spill term once the DSP budget of
  // the device is exhausted and multipliers fall back to fabric.
  const double lut_base = 5e4;
  const double lut_per_instance = 1e4;
  const double lut_per_spilled_mult = 300.0;
  const long long dsp_budget = 12288;
  if (p_i + p_t > 0) {
    est.lut_estimate = lut_base + lut_per_instance * (p_i + 3.0 * p_t);
    if (est.dsp_count > dsp_budget)
      est.lut_estimate += lut_per_spilled_mult * (est.dsp_count - dsp_budget);
  }
  return est;
}

}  // namespace eqsim
