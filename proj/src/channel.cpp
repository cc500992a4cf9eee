#include "eqsim/channel.hpp"

#include <cmath>
#include <numbers>

#include <unsupported/Eigen/FFT>

namespace eqsim {

namespace {
constexpr double kPi = std::numbers::pi;
}

void ChannelConfig::validate() const {
  if (fiber_km < 0) throw SpecError("fiber_km must be >= 0");
  if (baud <= 0) throw SpecError("baud must be > 0");
  if (n_os < 1) throw SpecError("n_os must be >= 1");
  if (pam_order != 2 && pam_order != 4)
    throw SpecError("pam_order must be 2 or 4");
  if (rolloff < 0.0 || rolloff > 1.0)
    throw SpecError("rolloff must be in [0, 1]");
}

double beta2_s2_per_m(const ChannelConfig& cfg) {
  const double d_si = cfg.dcd_ps_nm_km * 1e-6;  // ps/(nm km) -> s/m^2
  return -cfg.lambda_m * cfg.lambda_m * d_si / (2.0 * kPi * kSpeedOfLight);
}

double pam_level_spacing(int pam_order) {
  if (pam_order < 2) throw SpecError("pam_order must be >= 2");
  // E[(m*delta)^2] over uniform m in {0..M-1} equals 1.
  const double m = pam_order;
  return std::sqrt(6.0 / ((m - 1.0) * (2.0 * m - 1.0)));
}

Eigen::ArrayXd pam_alphabet(int pam_order) {
  const double delta = pam_level_spacing(pam_order);
  Eigen::ArrayXd a(pam_order);
  for (int m = 0; m < pam_order; ++m) a[m] = m * delta;
  return a;
}

Eigen::ArrayXd gen_symbols(int n, const ChannelConfig& cfg, Philox& rng) {
  if (n <= 0) throw SpecError("symbol count must be positive");
  const Eigen::ArrayXd alphabet = pam_alphabet(cfg.pam_order);
  Eigen::ArrayXd out(n);
  for (int i = 0; i < n; ++i)
    out[i] = alphabet[rng.next_below(static_cast<uint32_t>(cfg.pam_order))];
  return out;
}

Eigen::ArrayXd rc_taps(int n_os, double rolloff, int half_span_symbols) {
  const int half = half_span_symbols * n_os;
  Eigen::ArrayXd h(2 * half + 1);
  for (int i = -half; i <= half; ++i) {
    const double t = static_cast<double>(i) / n_os;  // symbol units
    double v;
    if (i == 0) {
      v = 1.0;
    } else if (rolloff > 0.0 &&
               std::abs(std::abs(2.0 * rolloff * t) - 1.0) < 1e-12) {
      // Removable singularity of the denominator.
      v = (kPi / 4.0) * std::sin(kPi * t) / (kPi * t);
    } else {
      const double sinc = std::sin(kPi * t) / (kPi * t);
      v = sinc * std::cos(kPi * rolloff * t) /
          (1.0 - 4.0 * rolloff * rolloff * t * t);
    }
    h[i + half] = v;
  }
  return h / std::sqrt(h.square().sum());
}

Eigen::ArrayXd pulse_shape(const Eigen::ArrayXd& symbols,
                           const ChannelConfig& cfg) {
  cfg.validate();
  const Eigen::ArrayXd h = rc_taps(cfg.n_os, cfg.rolloff);
  const int center = static_cast<int>(h.size()) / 2;
  const int n_out = static_cast<int>(symbols.size()) * cfg.n_os;

  Eigen::ArrayXd out = Eigen::ArrayXd::Zero(n_out);
  // Sparse upsampled convolution: nonzero inputs sit at k*n_os.
  for (int k = 0; k < symbols.size(); ++k) {
    const double a = symbols[k];
    if (a == 0.0) continue;
    const int base = k * cfg.n_os;
    for (int j = 0; j < h.size(); ++j) {
      const int idx = base + j - center;
      if (idx >= 0 && idx < n_out) out[idx] += a * h[j];
    }
  }
  return out;
}

std::complex<double> cd_response(double f_hz, const ChannelConfig& cfg) {
  const double l_m = cfg.fiber_km * 1e3;
  const double alpha_np_per_m = cfg.alpha_db_km * std::numbers::ln10 / 10.0 / 1e3;
  const double beta2 = beta2_s2_per_m(cfg);
  const double mag = std::exp(-0.5 * alpha_np_per_m * l_m);
  const double phase = 2.0 * kPi * kPi * beta2 * f_hz * f_hz * l_m;
  return std::polar(mag, phase);
}

Eigen::ArrayXcd apply_cd(const Eigen::ArrayXd& samples,
                         const ChannelConfig& cfg) {
  if (samples.size() < 2) throw ShapeError("apply_cd needs >= 2 samples");
  const int n = static_cast<int>(samples.size());
  const double fs = cfg.sample_rate();

  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> time(samples.data(), samples.data() + n);
  std::vector<std::complex<double>> freq(n);
  fft.fwd(freq, time);

  for (int k = 0; k < n; ++k) {
    const double f = (k <= n / 2 ? k : k - n) * fs / n;
    freq[k] *= cd_response(f, cfg);
  }

  fft.inv(time, freq);
  Eigen::ArrayXcd out(n);
  for (int k = 0; k < n; ++k) out[k] = time[k];
  return out;
}

Eigen::ArrayXd square_law(const Eigen::ArrayXcd& x) {
  return x.abs2();
}

Eigen::ArrayXd add_awgn(const Eigen::ArrayXd& samples,
                        const ChannelConfig& cfg, Philox& rng) {
  if (samples.size() == 0) throw ShapeError("add_awgn: empty signal");
  const double p_sig = samples.square().mean();
  const double sigma = std::sqrt(p_sig / std::pow(10.0, cfg.snr_db / 10.0));
  Eigen::ArrayXd out(samples.size());
  for (int i = 0; i < samples.size(); ++i)
    out[i] = samples[i] + sigma * rng.next_gaussian();
  return out;
}

std::pair<TxFrame, RxFrame> simulate(int n_symbols, const ChannelConfig& cfg,
                                     Philox& rng, const FxpFormat& input_fmt) {
  cfg.validate();
  if (n_symbols < 64) throw SpecError("simulate needs >= 64 symbols");

  TxFrame tx;
  tx.symbols = gen_symbols(n_symbols, cfg, rng);
  tx.samples = pulse_shape(tx.symbols, cfg);

  const Eigen::ArrayXcd dispersed = apply_cd(tx.samples, cfg);
  const Eigen::ArrayXd detected = square_law(dispersed);
  const Eigen::ArrayXd noisy = add_awgn(detected, cfg, rng);

  // Receiver front end: AC coupling removes the detection DC and gain
  // control scales to unit variance, so the equalizer input quantizer
  // is driven at full scale regardless of launch power and fiber loss.
  const double mean = noisy.mean();
  const double sd = std::sqrt((noisy - mean).square().mean());
  const Eigen::ArrayXd leveled =
      sd > 0.0 ? ((noisy - mean) / sd).eval() : (noisy - mean).eval();

  RxFrame rx;
  rx.truth = tx.symbols;
  rx.y.resize(leveled.size());
  for (int i = 0; i < leveled.size(); ++i)
    rx.y[i] = value_of(quantize(leveled[i], input_fmt), input_fmt);
  return {std::move(tx), std::move(rx)};
}

}  // namespace eqsim
