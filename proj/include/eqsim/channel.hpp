#pragma once

// IM/DD optical fiber link: PAM symbols, raised-cosine pulse shaping at
// N_os samples per symbol, chromatic-dispersion filtering in the
// frequency domain, square-law detection, additive Gaussian noise.

#include <complex>
#include <utility>

#include <Eigen/Core>

#include "eqsim/fxp.hpp"
#include "eqsim/rng.hpp"

namespace eqsim {

constexpr double kSpeedOfLight = 299792458.0;  // m/s

struct ChannelConfig {
  double lambda_m = 1550e-9;     // carrier wavelength
  double fiber_km = 35.0;        // fiber length
  double dcd_ps_nm_km = 17.0;    // dispersion coefficient
  double alpha_db_km = 0.2;      // attenuation
  double baud = 20e9;            // symbol rate
  int n_os = 2;                  // samples per symbol
  double snr_db = 15.0;          // SNR after square-law detection
  int pam_order = 2;
  double rolloff = 0.2;          // raised-cosine roll-off
  uint64_t seed = 1;

  double sample_rate() const { return baud * n_os; }
  void validate() const;
};

struct TxFrame {
  Eigen::ArrayXd symbols;  // PAM amplitudes, unit mean power
  Eigen::ArrayXd samples;  // after pulse shaping, length symbols*n_os
};

struct RxFrame {
  // Post square-law, post noise, quantized to the equalizer input
  // format; sample 2k is aligned with symbol k.
  Eigen::ArrayXd y;
  Eigen::ArrayXd truth;  // reference symbols
};

// Group-velocity dispersion parameter beta2 = -lambda^2 D / (2 pi c), SI.
double beta2_s2_per_m(const ChannelConfig& cfg);

// Equally spaced unipolar levels {0, .., M-1} scaled to unit mean power.
double pam_level_spacing(int pam_order);
Eigen::ArrayXd pam_alphabet(int pam_order);

Eigen::ArrayXd gen_symbols(int n, const ChannelConfig& cfg, Philox& rng);

// Unit-energy raised-cosine taps, truncated to +-half_span symbols.
Eigen::ArrayXd rc_taps(int n_os, double rolloff, int half_span_symbols = 16);

// Upsample by n_os and filter; output length symbols.size()*n_os with
// the filter group delay compensated.
Eigen::ArrayXd pulse_shape(const Eigen::ArrayXd& symbols,
                           const ChannelConfig& cfg);

// Chromatic dispersion frequency response H_cd(f).
std::complex<double> cd_response(double f_hz, const ChannelConfig& cfg);

// Whole-block DFT multiplication by cd_response on the block's
// frequency grid (sample rate = baud * n_os).
Eigen::ArrayXcd apply_cd(const Eigen::ArrayXd& samples,
                         const ChannelConfig& cfg);

Eigen::ArrayXd square_law(const Eigen::ArrayXcd& x);

// Adds N(0, sigma^2) with sigma^2 = mean(s^2) / 10^(snr_db/10).
Eigen::ArrayXd add_awgn(const Eigen::ArrayXd& samples,
                        const ChannelConfig& cfg, Philox& rng);

// Full chain; y is quantized to input_fmt before return.
std::pair<TxFrame, RxFrame> simulate(int n_symbols, const ChannelConfig& cfg,
                                     Philox& rng,
                                     const FxpFormat& input_fmt = {10, 8, true});

}  // namespace eqsim
