#pragma once

// CSV / JSON emission. All writers go through a temp-file-then-rename
// path so a failed run never leaves a partial output behind.

#include <string>
#include <vector>

#include "eqsim/channel.hpp"
#include "eqsim/harness.hpp"

namespace eqsim {

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void atomic_write(const std::string& path, const std::string& content);

std::string format_double(double v);

// idx, tx_symbol, rx_sample_even, rx_sample_odd
std::string rx_csv(const TxFrame& tx, const RxFrame& rx, int n_os);

// run_id, update_idx, time_ms, ber  (ordered by run_id)
std::string trajectory_csv(const ConvergenceReport& report);

struct TrajectoryRow {
  int run_id;
  int update_idx;
  double time_ms;
  double ber;
};
std::vector<TrajectoryRow> read_trajectory_csv(const std::string& path);

std::string summary_json(const ConvergenceReport& report);

// Summary recomputed from an existing trajectory file.
std::string summary_json_from_rows(const std::vector<TrajectoryRow>& rows,
                                   double threshold);

std::string resources_csv(
    const std::vector<std::pair<int, ResourceEstimate>>& sweep);

}  // namespace eqsim
