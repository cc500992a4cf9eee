#pragma once

// System-level orchestration: stream partitioning across inference and
// training instances, convergence experiments with BER trajectories,
// and the analytic throughput / GOPS / resource models.

#include <optional>
#include <string>
#include <vector>

#include "eqsim/channel.hpp"
#include "eqsim/cnn.hpp"
#include "eqsim/train.hpp"

namespace eqsim {

struct SystemConfig {
  int p_i = 33;  // inference instances
  int p_t = 1;   // training instances
  double f_clk = 150e6;
  TrainConfig train;
  ChannelConfig channel;
  QuantConfig quant;
  int n_runs = 10;
  int max_updates = 750;
  int eval_symbols = 10000;
  double fec_threshold = 2.7e-2;
  int v_p = 8;  // samples consumed per instance pass
  bool line_rate_mode = false;
  int eval_every = 1;
  int threads = 1;

  void validate() const;
};

struct TrajectoryPoint {
  int update_idx = 0;
  double time_ms = 0.0;
  double ber = 1.0;
};

struct RunResult {
  int run_id = 0;
  std::vector<TrajectoryPoint> trajectory;
  std::optional<double> t_conv_ms;  // empty when not converged
};

struct ConvergenceReport {
  SystemConfig config;
  std::vector<RunResult> runs;
  std::vector<TrajectoryPoint> mean_trajectory;
  double converged_fraction = 0.0;
  std::optional<double> mean_t_conv_ms;    // over converged runs
  std::optional<double> median_t_conv_ms;  // over converged runs
};

struct SymbolSlice {
  int begin = 0;
  int count = 0;
};

struct StreamPartition {
  std::vector<SymbolSlice> train_slices;  // one per training instance
  SymbolSlice eval;                       // held-out remainder
};

// Disjoint SL-symbol training slices in instance order, remainder to
// the inference side.
StreamPartition partition_stream(const RxFrame& rx, const SystemConfig& cfg);

FxpTensor slice_to_tensor(const RxFrame& rx, const SymbolSlice& slice,
                          int n_os, const FxpFormat& fmt);
std::vector<double> slice_truth(const RxFrame& rx, const SymbolSlice& slice);

// Bit errors / total bits; PAM-4 is Gray-coded (2 bits per symbol).
double ber(const std::vector<double>& decisions,
           const std::vector<double>& truth, int pam_order);

// Model time of `updates` weight updates: every instance consumes
// v_p/n_os symbols per clock, so one update takes SL / rate seconds.
double model_time_ms(int updates, const SystemConfig& cfg);

// Earliest time at which the trajectory is at or below the threshold
// and stays there for the remaining horizon.
std::optional<double> sustained_crossing_ms(
    const std::vector<TrajectoryPoint>& traj, double threshold);

ConvergenceReport run_experiment(const SystemConfig& cfg);

// --- analytic hardware models -----------------------------------------

double estimate_throughput(const SystemConfig& cfg);  // symbols/s
double estimate_gops(const SystemConfig& cfg);

enum class ConvArch { Def, Inst, Map };
const char* arch_name(ConvArch arch);
std::optional<ConvArch> parse_arch(const std::string& name);

struct ResourceEstimate {
  ConvArch arch = ConvArch::Def;
  long long dsp_count = 0;
  double lut_estimate = 0.0;
  long long m1 = 0;  // per-instance multipliers, layer 1
  long long m2 = 0;  // per-instance multipliers, layer 2
};

// Per-instance multiplier counts per clock, measured from the actual
// multiply schedule of the convolution (difference of two window sizes
// cancels the boundary effects).
std::pair<long long, long long> count_layer_multipliers(
    const QuantConfig& quant, int v_p);

ResourceEstimate estimate_resources(ConvArch arch, int p_i, int p_t,
                                    const QuantConfig& quant = {}, int v_p = 8);

}  // namespace eqsim
