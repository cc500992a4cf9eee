#include <doctest.h>

#include <cmath>
#include <complex>

#include "eqsim/channel.hpp"
#include "eqsim/harness.hpp"

using namespace eqsim;

namespace {
ChannelConfig default_cfg() { return ChannelConfig{}; }
}

TEST_CASE("beta2 at the default parameters is about -21.68 ps^2/km") {
  // Independent evaluation of -lambda^2 D / (2 pi c):
  // (1550e-9)^2 * 17e-6 / (2 pi * 299792458) = 2.1683e-26 s^2/m.
  const double beta2 = beta2_s2_per_m(default_cfg());
  const double beta2_ps2_km = beta2 * 1e27;  // s^2/m -> ps^2/km
  CHECK(beta2_ps2_km == doctest::Approx(-21.68).epsilon(0.001));
}

TEST_CASE("cd_response magnitude is flat over frequency") {
  const ChannelConfig cfg = default_cfg();
  const double expect = std::pow(10.0, -cfg.alpha_db_km * cfg.fiber_km / 20.0);
  for (double f = -20e9; f <= 20e9; f += 0.5e9) {
    const double mag = std::abs(cd_response(f, cfg));
    REQUIRE(std::abs(mag - expect) < 1e-12);
  }
  CHECK(expect == doctest::Approx(0.44668).epsilon(1e-4));
}

TEST_CASE("zero-length fiber is the identity response") {
  ChannelConfig cfg = default_cfg();
  cfg.fiber_km = 0.0;
  const auto h = cd_response(3.7e9, cfg);
  CHECK(h.real() == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(std::abs(h.imag()) < 1e-15);
}

TEST_CASE("apply_cd: identity at L=0, alpha=0") {
  ChannelConfig cfg = default_cfg();
  cfg.fiber_km = 0.0;
  cfg.alpha_db_km = 0.0;
  Philox rng(2, 0);
  Eigen::ArrayXd x(512);
  for (auto& v : x) v = rng.next_gaussian();
  const Eigen::ArrayXcd y = apply_cd(x, cfg);
  for (int i = 0; i < x.size(); ++i) {
    REQUIRE(std::abs(y[i].real() - x[i]) < 1e-12);
    REQUIRE(std::abs(y[i].imag()) < 1e-12);
  }
}

TEST_CASE("apply_cd: lossless fiber preserves energy (Parseval)") {
  ChannelConfig cfg = default_cfg();
  cfg.alpha_db_km = 0.0;
  Philox rng(3, 0);
  Eigen::ArrayXd x(2048);
  for (auto& v : x) v = rng.next_gaussian();
  const Eigen::ArrayXcd y = apply_cd(x, cfg);
  const double ein = x.square().sum();
  const double eout = y.abs2().sum();
  CHECK(std::abs(eout - ein) / ein < 1e-9);
}

TEST_CASE("apply_cd: a DFT tone is an eigenfunction") {
  const ChannelConfig cfg = default_cfg();
  const int n = 1024;
  const int bin = 37;
  const double fs = cfg.sample_rate();
  Eigen::ArrayXd x(n);
  for (int i = 0; i < n; ++i)
    x[i] = std::cos(2.0 * M_PI * bin * i / n);
  const Eigen::ArrayXcd y = apply_cd(x, cfg);

  // cos splits into the +bin and -bin DFT lines.
  const std::complex<double> hp = cd_response(bin * fs / n, cfg);
  const std::complex<double> hm = cd_response(-bin * fs / n, cfg);
  for (int i = 0; i < n; ++i) {
    const std::complex<double> ep(0.0, 2.0 * M_PI * bin * i / n);
    const std::complex<double> want =
        0.5 * (hp * std::exp(ep) + hm * std::exp(-ep));
    REQUIRE(std::abs(y[i] - want) < 1e-9);
  }
}

TEST_CASE("pam alphabet has unit mean power") {
  const Eigen::ArrayXd a2 = pam_alphabet(2);
  CHECK(a2[0] == 0.0);
  CHECK(a2[1] == doctest::Approx(std::sqrt(2.0)).epsilon(1e-12));
  for (int order : {2, 4}) {
    const Eigen::ArrayXd a = pam_alphabet(order);
    CHECK(a.square().mean() == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("gen_symbols: deterministic, uniform within 3 sigma") {
  ChannelConfig cfg = default_cfg();
  cfg.pam_order = 4;
  Philox r1(42, 0), r2(42, 0);
  const int n = 1000000;
  const Eigen::ArrayXd s1 = gen_symbols(n, cfg, r1);
  const Eigen::ArrayXd s2 = gen_symbols(n, cfg, r2);
  REQUIRE((s1 == s2).all());

  const Eigen::ArrayXd alphabet = pam_alphabet(4);
  std::array<int, 4> hist{};
  for (int i = 0; i < n; ++i)
    for (int m = 0; m < 4; ++m)
      if (s1[i] == alphabet[m]) ++hist[m];
  const double expect = n / 4.0;
  const double sigma = std::sqrt(n * 0.25 * 0.75);
  for (int m = 0; m < 4; ++m)
    CHECK(std::abs(hist[m] - expect) < 3 * sigma);

  CHECK_THROWS_AS(gen_symbols(0, cfg, r1), SpecError);
}

TEST_CASE("pulse_shape: zero in, zero out; impulse gives the filter") {
  const ChannelConfig cfg = default_cfg();
  Eigen::ArrayXd zeros = Eigen::ArrayXd::Zero(64);
  CHECK((pulse_shape(zeros, cfg) == 0.0).all());

  // single unit symbol in the middle: the response is the tap vector
  Eigen::ArrayXd sym = Eigen::ArrayXd::Zero(64);
  sym[32] = 1.0;
  const Eigen::ArrayXd out = pulse_shape(sym, cfg);
  const Eigen::ArrayXd h = rc_taps(cfg.n_os, cfg.rolloff);
  const int center = h.size() / 2;
  // peak lands at the symbol's own sample index (group delay removed)
  CHECK(out[32 * cfg.n_os] == doctest::Approx(h[center]).epsilon(1e-12));
  CHECK(out[32 * cfg.n_os + 5] == doctest::Approx(h[center + 5]).epsilon(1e-12));
}

TEST_CASE("raised cosine is ISI-free at symbol instants") {
  const Eigen::ArrayXd h = rc_taps(2, 0.2);
  const int center = h.size() / 2;
  const double peak = h[center];
  for (int k = 1; k <= 16; ++k) {
    REQUIRE(std::abs(h[center + 2 * k] / peak) < 1e-3);
    REQUIRE(std::abs(h[center - 2 * k] / peak) < 1e-3);
  }
}

TEST_CASE("square_law: elementwise squared magnitude") {
  Eigen::ArrayXcd x(3);
  x << std::complex<double>(0, 0), std::complex<double>(3, 4),
      std::complex<double>(-1.5, 2.5);
  const Eigen::ArrayXd y = square_law(x);
  CHECK(y[0] == 0.0);
  CHECK(y[1] == doctest::Approx(25.0).epsilon(1e-15));
  CHECK(y[2] == doctest::Approx(1.5 * 1.5 + 2.5 * 2.5).epsilon(1e-15));
  Philox rng(8, 0);
  for (int i = 0; i < 1000; ++i) {
    Eigen::ArrayXcd v(1);
    v[0] = std::complex<double>(rng.next_gaussian(), rng.next_gaussian());
    REQUIRE(square_law(v)[0] ==
            doctest::Approx(v[0].real() * v[0].real() +
                            v[0].imag() * v[0].imag()));
    REQUIRE(square_law(v)[0] >= 0.0);
  }
}

TEST_CASE("add_awgn: measured variance within 1% of target") {
  ChannelConfig cfg = default_cfg();
  cfg.snr_db = 12.0;
  const int n = 1000000;
  Eigen::ArrayXd sig(n);
  Philox srng(4, 0);
  for (auto& v : sig) v = 0.5 + 0.1 * srng.next_gaussian();

  Philox nrng(4, 1);
  const Eigen::ArrayXd noisy = add_awgn(sig, cfg, nrng);
  const Eigen::ArrayXd noise = noisy - sig;
  const double target = sig.square().mean() / std::pow(10.0, cfg.snr_db / 10.0);
  const double measured = noise.square().mean();
  CHECK(std::abs(measured - target) / target < 0.01);

  // high SNR limit: vanishing noise
  cfg.snr_db = 200.0;
  Philox hrng(4, 2);
  const Eigen::ArrayXd clean = add_awgn(sig, cfg, hrng);
  CHECK((clean - sig).abs().maxCoeff() < 1e-8);

  // determinism
  Philox a(4, 3), b(4, 3);
  const Eigen::ArrayXd n1 = add_awgn(sig, cfg, a);
  const Eigen::ArrayXd n2 = add_awgn(sig, cfg, b);
  REQUIRE((n1 == n2).all());
}

TEST_CASE("simulate: shapes, determinism, experiment condition") {
  const ChannelConfig cfg = default_cfg();
  CHECK(cfg.fiber_km == 35.0);
  CHECK(cfg.snr_db == 15.0);
  CHECK(cfg.baud == 20e9);

  Philox r1(7, 0), r2(7, 0);
  const auto [tx1, rx1] = simulate(256, cfg, r1);
  const auto [tx2, rx2] = simulate(256, cfg, r2);
  CHECK(rx1.y.size() == 256 * cfg.n_os);
  CHECK(rx1.truth.size() == 256);
  REQUIRE((rx1.y == rx2.y).all());
  REQUIRE((rx1.truth == tx1.symbols).all());

  CHECK_THROWS_AS(simulate(32, cfg, r1), SpecError);
}

TEST_CASE("simulate: benign channel is invertible by direct decision") {
  // No dispersion, no attenuation, very high SNR: sampling at symbol
  // instants and deciding on sqrt(y) must recover every symbol.
  ChannelConfig cfg = default_cfg();
  cfg.fiber_km = 0.0;
  cfg.alpha_db_km = 0.0;
  cfg.snr_db = 300.0;
  Philox rng(11, 0);
  const FxpFormat wide{30, 20, true};  // keep quantization out of the way
  const auto [tx, rx] = simulate(4096, cfg, rng, wide);

  std::vector<double> est(4096), truth(4096);
  for (int k = 0; k < 4096; ++k) {
    est[k] = std::sqrt(std::max(0.0, rx.y[2 * k]));
    truth[k] = rx.truth[k];
  }
  const auto decisions = decide(est, cfg.pam_order);
  CHECK(ber(decisions, truth, cfg.pam_order) == 0.0);
}

TEST_CASE("config validation") {
  ChannelConfig cfg = default_cfg();
  cfg.pam_order = 3;
  CHECK_THROWS_AS(cfg.validate(), SpecError);
  cfg = default_cfg();
  cfg.rolloff = 1.5;
  CHECK_THROWS_AS(cfg.validate(), SpecError);
  cfg = default_cfg();
  cfg.baud = 0;
  CHECK_THROWS_AS(cfg.validate(), SpecError);
}
